//! Simulated annealing.
//!
//! Each outer iteration runs one Metropolis loop at the current temperature,
//! then cools by `alpha` and lengthens the next loop by `beta`. The walk
//! compares raw cycle counts; the best design is tracked by the full
//! lexicographic [`Cost`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, Platform, Precision};
use crate::error::{Error, Result};
use crate::space::{Evaluation, Evaluator, SearchOutcome, Solution, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaParams {
    pub t0: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Neighbour steps in the first Metropolis loop.
    pub m0: f64,
    /// Metropolis loops (outer iterations).
    pub max_time: u64,
    pub seed: u64,
}

impl Default for SaParams {
    fn default() -> Self {
        SaParams {
            t0: 25_000.0,
            alpha: 0.99,
            beta: 1.005,
            m0: 10.0,
            max_time: 1_000,
            seed: 0,
        }
    }
}

impl SaParams {
    pub fn with_seed(self, seed: u64) -> Self {
        SaParams { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.t0 > 0.0
            && self.t0.is_finite()
            && self.alpha > 0.0
            && self.alpha < 1.0
            && self.beta > 1.0
            && self.beta.is_finite()
            && self.m0 >= 1.0
            && self.m0.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "annealing parameters",
                "need t0 > 0, 0 < alpha < 1, beta > 1 and m0 >= 1",
            ))
        }
    }
}

/// Metropolis rule: downhill always, uphill with probability `e^(-delta/T)`.
pub fn accept<R: Rng>(delta: f64, temperature: f64, rng: &mut R) -> bool {
    delta < 0.0 || rng.gen::<f64>() < (-delta / temperature).exp()
}

/// Current and best state of a walk.
#[derive(Debug, Clone)]
pub struct Walk {
    pub current: Solution,
    pub current_eval: Evaluation,
    pub best: Solution,
    pub best_eval: Evaluation,
}

impl Walk {
    pub fn new(sol: Solution, eval: Evaluation) -> Self {
        Walk {
            current: sol.clone(),
            current_eval: eval.clone(),
            best: sol,
            best_eval: eval,
        }
    }
}

/// `steps` neighbour proposals at a fixed temperature.
pub fn metropolis<R: Rng>(ev: &mut Evaluator, walk: &mut Walk, temperature: f64, steps: u64, rng: &mut R) {
    for _ in 0..steps {
        let n = ev.neighbor(&walk.current, rng);
        if n.mv.is_none() {
            continue;
        }
        let delta = n.eval.cost.cycles as f64 - walk.current_eval.cost.cycles as f64;
        if accept(delta, temperature, rng) {
            walk.current = n.solution;
            walk.current_eval = n.eval;
            if walk.current_eval.cost < walk.best_eval.cost {
                walk.best = walk.current.clone();
                walk.best_eval = walk.current_eval.clone();
            }
        }
    }
}

pub fn run(arch: &Architecture, platform: &Platform, p: Precision, params: &SaParams) -> Result<SearchOutcome> {
    run_with(&mut Evaluator::new(arch, platform, p), params)
}

/// Anneals from a seeded random start.
pub fn run_with(ev: &mut Evaluator, params: &SaParams) -> Result<SearchOutcome> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let start = ev.evaluations();
    let (sol, eval) = ev.random_solution(&mut rng)?;
    let mut walk = Walk::new(sol, eval);
    let mut trace = Vec::with_capacity(params.max_time as usize);
    let (mut temperature, mut budget) = (params.t0, params.m0);
    for iteration in 1..=params.max_time {
        metropolis(ev, &mut walk, temperature, budget.round().max(1.0) as u64, &mut rng);
        trace.push(TraceRecord {
            iteration,
            current_cost: walk.current_eval.cost.cycles,
            best_cost: walk.best_eval.cost.cycles,
            temperature: Some(temperature),
            aspiration: false,
            forced: false,
        });
        temperature *= params.alpha;
        budget *= params.beta;
    }
    Ok(SearchOutcome {
        best: ev.finish(&walk.best, &walk.best_eval),
        cost: walk.best_eval.cost,
        trace,
        evaluations: ev.evaluations() - start,
    })
}
