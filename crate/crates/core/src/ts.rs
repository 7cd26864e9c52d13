//! Tabu search.
//!
//! Every iteration samples a candidate list of neighbours and moves to the
//! best admissible one: its move must not undo a recent move, unless it beats
//! the best cost seen so far. Reassignments and unrolling changes keep
//! separate tabu lists.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, Platform, Precision};
use crate::error::{Error, Result};
use crate::space::{Evaluator, Move, Neighbor, SearchOutcome, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsParams {
    pub candidates: usize,
    pub tenure: usize,
    /// Accepted moves before stopping.
    pub max_time: u64,
    /// Hard stop on evaluated solutions, in case moves keep being refused.
    pub max_evaluations: u64,
    /// Extra candidate lists drawn when a whole list is tabu.
    pub resamples: usize,
    pub seed: u64,
}

impl Default for TsParams {
    fn default() -> Self {
        TsParams {
            candidates: 20,
            tenure: 7,
            max_time: 1_000,
            max_evaluations: 1_000_000,
            resamples: 3,
            seed: 0,
        }
    }
}

impl TsParams {
    pub fn with_seed(self, seed: u64) -> Self {
        TsParams { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 {
            return Err(Error::invalid("tabu parameters", "candidate list must not be empty"));
        }
        Ok(())
    }
}

/// What a tabu list remembers about a move: the value it sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TabuAttribute {
    Assign { layer: usize, clp: usize },
    Tn { clp: usize, value: u32 },
    Tm { clp: usize, value: u32 },
    Tr { layer: usize, value: u32 },
    Tc { layer: usize, value: u32 },
    Shape { clp: usize, tn: u32, tm: u32 },
}

impl TabuAttribute {
    /// Attribute of the move itself.
    pub fn of(mv: &Move) -> Self {
        match *mv {
            Move::Reassign { layer, to, .. } => TabuAttribute::Assign { layer, clp: to },
            Move::MutateTn { clp, to, .. } => TabuAttribute::Tn { clp, value: to },
            Move::MutateTm { clp, to, .. } => TabuAttribute::Tm { clp, value: to },
            Move::MutateTr { layer, to, .. } => TabuAttribute::Tr { layer, value: to },
            Move::MutateTc { layer, to, .. } => TabuAttribute::Tc { layer, value: to },
            Move::Reshape { clp, to, .. } => TabuAttribute::Shape { clp, tn: to.tn, tm: to.tm },
        }
    }

    /// Attribute of the move that would undo `mv`.
    pub fn reverse_of(mv: &Move) -> Self {
        match *mv {
            Move::Reassign { layer, from, .. } => TabuAttribute::Assign { layer, clp: from },
            Move::MutateTn { clp, from, .. } => TabuAttribute::Tn { clp, value: from },
            Move::MutateTm { clp, from, .. } => TabuAttribute::Tm { clp, value: from },
            Move::MutateTr { layer, from, .. } => TabuAttribute::Tr { layer, value: from },
            Move::MutateTc { layer, from, .. } => TabuAttribute::Tc { layer, value: from },
            Move::Reshape { clp, from, .. } => TabuAttribute::Shape { clp, tn: from.tn, tm: from.tm },
        }
    }
}

/// Fixed-length FIFO of attributes.
#[derive(Debug, Clone)]
pub struct TabuList {
    tenure: usize,
    entries: VecDeque<TabuAttribute>,
}

impl TabuList {
    pub fn new(tenure: usize) -> Self {
        TabuList {
            tenure,
            entries: VecDeque::with_capacity(tenure + 1),
        }
    }

    pub fn push(&mut self, attr: TabuAttribute) {
        if self.tenure == 0 {
            return;
        }
        if self.entries.len() == self.tenure {
            self.entries.pop_front();
        }
        self.entries.push_back(attr);
    }

    pub fn contains(&self, attr: &TabuAttribute) -> bool {
        self.entries.contains(attr)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The two lists: one for reassignments, one for parameter changes.
#[derive(Debug, Clone)]
struct Memory {
    assign: TabuList,
    params: TabuList,
}

impl Memory {
    fn list(&mut self, mv: &Move) -> &mut TabuList {
        if mv.is_reassign() {
            &mut self.assign
        } else {
            &mut self.params
        }
    }

    fn is_tabu(&mut self, mv: &Move) -> bool {
        let attr = TabuAttribute::of(mv);
        self.list(mv).contains(&attr)
    }
}

pub fn run(arch: &Architecture, platform: &Platform, p: Precision, params: &TsParams) -> Result<SearchOutcome> {
    run_with(&mut Evaluator::new(arch, platform, p), params)
}

pub fn run_with(ev: &mut Evaluator, params: &TsParams) -> Result<SearchOutcome> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let start = ev.evaluations();
    let (mut current, mut current_eval) = ev.random_solution(&mut rng)?;
    let (mut best, mut best_eval) = (current.clone(), current_eval.clone());
    let mut memory = Memory {
        assign: TabuList::new(params.tenure),
        params: TabuList::new(params.tenure),
    };
    let mut trace = Vec::new();
    let mut time = 0;
    while time < params.max_time && ev.evaluations() - start < params.max_evaluations {
        let mut chosen: Option<(Neighbor, bool)> = None;
        let mut fallback: Option<Neighbor> = None;
        for _ in 0..=params.resamples {
            let mut list: Vec<Neighbor> = (0..params.candidates)
                .map(|_| ev.neighbor(&current, &mut rng))
                .filter(|n| n.mv.is_some())
                .collect();
            list.sort_by_key(|a| a.eval.cost);
            for n in &list {
                let mv = n.mv.expect("filtered");
                let tabu = memory.is_tabu(&mv);
                if !tabu || n.eval.cost < best_eval.cost {
                    chosen = Some((n.clone(), tabu));
                    break;
                }
            }
            if chosen.is_some() {
                break;
            }
            if let Some(n) = list.into_iter().next() {
                if fallback.as_ref().is_none_or(|f| n.eval.cost < f.eval.cost) {
                    fallback = Some(n);
                }
            }
        }
        let (next, aspiration, forced) = match (chosen, fallback) {
            (Some((n, tabu)), _) => (n, tabu, false),
            (None, Some(n)) => (n, false, true),
            // No move survived the constraints at all; count the iteration so the run ends.
            (None, None) => {
                time += 1;
                continue;
            }
        };
        let mv = next.mv.expect("filtered");
        memory.list(&mv).push(TabuAttribute::reverse_of(&mv));
        current = next.solution;
        current_eval = next.eval;
        if current_eval.cost < best_eval.cost {
            best = current.clone();
            best_eval = current_eval.clone();
        }
        time += 1;
        trace.push(TraceRecord {
            iteration: time,
            current_cost: current_eval.cost.cycles,
            best_cost: best_eval.cost.cycles,
            temperature: None,
            aspiration,
            forced,
        });
    }
    Ok(SearchOutcome {
        best: ev.finish(&best, &best_eval),
        cost: best_eval.cost,
        trace,
        evaluations: ev.evaluations() - start,
    })
}
