//! Solution encoding, inner tiling optimization, feasibility and cost.
//!
//! A [`Solution`] binds every layer to one of up to `L` CLP slots. Unless the
//! evaluator runs in fixed-tiling mode, tilings are not part of the search
//! state: for each active CLP the evaluator builds a menu of tiling plans that
//! trade BRAM for fewer cycles and less bandwidth, then splits the board's BRAM
//! among the CLPs.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, LayerConfig, Platform, Precision};
use crate::cost::{self, ClpConfig, CostReport, Tiling};
use crate::error::{Error, Result};

/// Layers per architecture; slot membership is tracked in a `u128` mask.
pub const MAX_LAYERS: usize = 128;

/// Attempts per neighbour draw before giving up on a move kind.
pub const NEIGHBOR_RETRIES: usize = 64;

/// Probability that a neighbour reassigns a layer instead of resizing a CLP.
pub const REASSIGN_PROB: f64 = 0.2;

/// Probability that a CLP resize also refits the other unrolling factor to
/// the spare DSP budget.
pub const RESHAPE_PROB: f64 = 0.4;

const RANDOM_RETRIES: usize = 1000;
const MENU_CACHE_LIMIT: usize = 50_000;

/// A multi-CLP design.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Solution {
    /// CLP slots; slots without layers are ignored.
    pub clps: Vec<ClpConfig>,
    /// Slot index of each layer.
    pub assignment: Vec<usize>,
    /// Tiling of each layer, or empty when not yet optimized.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tilings: Vec<Tiling>,
}

impl Solution {
    pub fn new(clps: Vec<ClpConfig>, assignment: Vec<usize>) -> Self {
        Solution {
            clps,
            assignment,
            tilings: Vec::new(),
        }
    }

    /// Every layer on one CLP.
    pub fn single(clp: ClpConfig, layers: usize) -> Self {
        Solution::new(vec![clp], vec![0; layers])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Parse { what: "design", source })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn is_active(&self, slot: usize) -> bool {
        self.assignment.contains(&slot)
    }

    /// Slots with at least one layer, ascending.
    pub fn active_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.clps.len()).filter(move |&g| self.is_active(g))
    }

    pub fn active_count(&self) -> usize {
        self.active_slots().count()
    }

    /// Layers of a slot in processing order.
    pub fn schedule(&self, slot: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&l| self.assignment[l] == slot).collect()
    }

    pub fn mask(&self, slot: usize) -> u128 {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == slot)
            .fold(0, |m, (l, _)| m | (1u128 << l))
    }

    pub fn schedule_with_tilings<'a>(&self, arch: &'a Architecture, slot: usize) -> Result<Vec<(&'a LayerConfig, Tiling)>> {
        if self.tilings.len() != arch.len() {
            return Err(Error::invalid("design", "tilings are missing"));
        }
        Ok(self
            .schedule(slot)
            .into_iter()
            .map(|l| (&arch.layers[l], self.tilings[l]))
            .collect())
    }

    /// Checks the encoding against an architecture (not resource budgets).
    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        if self.assignment.len() != arch.len() {
            return Err(Error::invalid(
                "design",
                format!("{} layers assigned, architecture has {}", self.assignment.len(), arch.len()),
            ));
        }
        if let Some(&g) = self.assignment.iter().find(|&&g| g >= self.clps.len()) {
            return Err(Error::invalid("design", format!("layer assigned to missing CLP slot {g}")));
        }
        for g in self.active_slots() {
            let c = self.clps[g];
            if c.tn == 0 || c.tm == 0 {
                return Err(Error::invalid("design", format!("CLP {g} has a zero unrolling factor")));
            }
        }
        if !self.tilings.is_empty() {
            if self.tilings.len() != arch.len() {
                return Err(Error::invalid("design", "one tiling per layer expected"));
            }
            for (layer, t) in arch.layers.iter().zip(&self.tilings) {
                if !t.fits(layer) {
                    return Err(Error::invalid(
                        "design",
                        format!("tiling {}x{} does not fit layer `{}`", t.tr, t.tc, layer.name),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Same design with slots renumbered by first use and empty slots dropped.
    pub fn canonical(&self) -> Solution {
        let mut relabel = vec![usize::MAX; self.clps.len()];
        let mut clps = Vec::new();
        let assignment = self
            .assignment
            .iter()
            .map(|&g| {
                if relabel[g] == usize::MAX {
                    relabel[g] = clps.len();
                    clps.push(self.clps[g]);
                }
                relabel[g]
            })
            .collect();
        Solution {
            clps,
            assignment,
            tilings: self.tilings.clone(),
        }
    }

    /// Pads with `1 x 1` placeholder slots up to `slots`.
    pub fn padded(mut self, slots: usize) -> Solution {
        while self.clps.len() < slots {
            self.clps.push(ClpConfig::new(1, 1));
        }
        self
    }
}

/// A single change to a [`Solution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Reassign { layer: usize, from: usize, to: usize },
    MutateTn { clp: usize, from: u32, to: u32 },
    MutateTm { clp: usize, from: u32, to: u32 },
    MutateTr { layer: usize, from: u32, to: u32 },
    MutateTc { layer: usize, from: u32, to: u32 },
    /// Changes both unrolling factors of one CLP.
    Reshape { clp: usize, from: ClpConfig, to: ClpConfig },
}

impl Move {
    pub fn apply(&self, sol: &Solution) -> Solution {
        let mut next = sol.clone();
        match *self {
            Move::Reassign { layer, to, .. } => next.assignment[layer] = to,
            Move::MutateTn { clp, to, .. } => next.clps[clp].tn = to,
            Move::MutateTm { clp, to, .. } => next.clps[clp].tm = to,
            Move::MutateTr { layer, to, .. } => next.tilings[layer].tr = to,
            Move::MutateTc { layer, to, .. } => next.tilings[layer].tc = to,
            Move::Reshape { clp, to, .. } => next.clps[clp] = to,
        }
        next
    }

    pub fn is_reassign(&self) -> bool {
        matches!(self, Move::Reassign { .. })
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Move::Reassign { layer, from, to } => write!(f, "layer {layer}: CLP {from} -> {to}"),
            Move::MutateTn { clp, from, to } => write!(f, "CLP {clp}: Tn {from} -> {to}"),
            Move::MutateTm { clp, from, to } => write!(f, "CLP {clp}: Tm {from} -> {to}"),
            Move::MutateTr { layer, from, to } => write!(f, "layer {layer}: Tr {from} -> {to}"),
            Move::MutateTc { layer, from, to } => write!(f, "layer {layer}: Tc {from} -> {to}"),
            Move::Reshape { clp, from, to } => {
                write!(f, "CLP {clp}: {}x{} -> {}x{}", from.tn, from.tm, to.tn, to.tm)
            }
        }
    }
}

/// Search objective, compared lexicographically: cycles, then peak
/// bandwidth requirement, then BRAMs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Cost {
    pub cycles: u64,
    pub peak_bw_gbs: f64,
    pub bram: u64,
}

impl Cost {
    pub const WORST: Cost = Cost {
        cycles: u64::MAX,
        peak_bw_gbs: f64::INFINITY,
        bram: u64::MAX,
    };
}

impl PartialEq for Cost {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cycles
            .cmp(&other.cycles)
            .then(self.peak_bw_gbs.total_cmp(&other.peak_bw_gbs))
            .then(self.bram.cmp(&other.bram))
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} cycles, {:.3} GB/s, {} BRAM", self.cycles, self.peak_bw_gbs, self.bram)
    }
}

/// BRAMs per bank granted to the input and output buffers of a CLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Caps {
    input: u64,
    output: u64,
}

/// Outcome of evaluating a feasible solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub cost: Cost,
    pub dsp: u64,
    caps: Vec<(usize, Caps)>,
}

/// Feasibility verdict with the resource figures behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub dsp: u64,
    pub dsp_max: u64,
    /// Smallest BRAM count any tiling allows (or the fixed tilings' count).
    pub bram: u64,
    pub bram_max: u64,
    pub violation: Option<String>,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        self.violation.is_none()
    }
}

/// A neighbour draw. `mv` is `None` when every retry was rejected, in which
/// case `solution` is the input unchanged.
#[derive(Debug, Clone)]
pub struct Neighbor {
    pub solution: Solution,
    pub mv: Option<Move>,
    pub eval: Evaluation,
}

/// A breakpoint tiling of one layer with its BRAM needs.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    tr: u32,
    tc: u32,
    /// BRAMs per input bank and per output bank to double buffer this tile alone.
    bif: u64,
    bof: u64,
    tiles: u64,
    mfp_in: u64,
    area: u64,
}

/// One way to tile a CLP's layers.
#[derive(Debug, Clone, Copy)]
struct MenuOption {
    bram: u64,
    cycles: u64,
    peak_bw: f64,
    caps: Caps,
}

/// Pareto-optimal tiling plans of one CLP, cheapest first.
#[derive(Debug)]
struct Menu {
    options: Vec<MenuOption>,
}

type MenuKey = (u32, u32, u128);

/// Evaluates solutions for one architecture, platform and precision.
///
/// Holds a cache of per-CLP tiling menus, so a search run should own its
/// evaluator; clone it for parallel work.
#[derive(Debug, Clone)]
pub struct Evaluator {
    arch: Architecture,
    platform: Platform,
    precision: Precision,
    fixed_tilings: bool,
    candidates: Vec<Vec<Candidate>>,
    /// Useful Tn and Tm values: the smallest factor for each distinct
    /// ceil(N/Tn) (resp. ceil(M/Tm)) of some layer. Any other value costs
    /// DSPs without saving a cycle.
    unroll_n: Vec<u32>,
    unroll_m: Vec<u32>,
    menus: HashMap<MenuKey, Arc<Menu>>,
    evaluations: u64,
}

impl Evaluator {
    pub fn new(arch: &Architecture, platform: &Platform, precision: Precision) -> Self {
        let addr = cost::addr_depth(precision);
        let candidates = arch
            .layers
            .iter()
            .map(|layer| {
                let mut list = Vec::new();
                for tr in breakpoints(layer.rows) {
                    for tc in breakpoints(layer.cols) {
                        let t = Tiling::new(tr, tc);
                        let mfp_in = cost::mfp(cost::BufferKind::Input, layer, t);
                        let area = u64::from(tr) * u64::from(tc);
                        list.push(Candidate {
                            tr,
                            tc,
                            bif: (2 * mfp_in).div_ceil(addr),
                            bof: (2 * area).div_ceil(addr),
                            tiles: u64::from(layer.rows.div_ceil(tr)) * u64::from(layer.cols.div_ceil(tc)),
                            mfp_in,
                            area,
                        });
                    }
                }
                list.sort_by_key(|c| (c.bif, c.bof, c.area, c.tr));
                list
            })
            .collect();
        let useful = |dim: fn(&LayerConfig) -> u32| {
            let mut v: Vec<u32> = arch.layers.iter().flat_map(|l| breakpoints(dim(l))).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        Evaluator {
            arch: arch.clone(),
            platform: platform.clone(),
            precision,
            fixed_tilings: false,
            candidates,
            unroll_n: useful(|l| l.n_in),
            unroll_m: useful(|l| l.m_out),
            menus: HashMap::new(),
            evaluations: 0,
        }
    }

    /// Treats tilings as part of the solution instead of optimizing them.
    pub fn with_fixed_tilings(mut self, fixed: bool) -> Self {
        self.fixed_tilings = fixed;
        self
    }

    pub fn fixed_tilings(&self) -> bool {
        self.fixed_tilings
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn platform(&self) -> &Platform {
        &self.platform
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Solutions evaluated so far, including rejected ones.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// MAC units the DSP budget pays for.
    pub fn mac_budget(&self) -> u64 {
        self.platform.dsp_max() / cost::dsp_per_mac(self.precision)
    }

    pub fn dsp_usage(&self, sol: &Solution) -> u64 {
        cost::dsp_usage(sol, self.precision)
    }

    /// Feasible solutions get a cost; infeasible ones an error naming the
    /// violated budget.
    pub fn evaluate(&mut self, sol: &Solution) -> Result<Evaluation> {
        sol.validate(&self.arch)?;
        if self.fixed_tilings && sol.tilings.is_empty() {
            return Err(Error::invalid("design", "fixed-tiling evaluation needs tilings"));
        }
        let check = self.feasibility(sol)?;
        if let Some(v) = check.violation {
            return Err(Error::Infeasible(v));
        }
        self.try_evaluate(sol).ok_or_else(|| Error::Infeasible("BRAM budget exceeded".into()))
    }

    pub fn is_feasible(&mut self, sol: &Solution) -> bool {
        self.evaluate(sol).is_ok()
    }

    /// Resource check with details.
    pub fn feasibility(&mut self, sol: &Solution) -> Result<Feasibility> {
        sol.validate(&self.arch)?;
        let dsp = self.dsp_usage(sol);
        let mut bram = 0;
        for g in sol.active_slots().collect::<Vec<_>>() {
            bram += if self.fixed_tilings {
                cost::clp_bram(sol.clps[g], &sol.schedule_with_tilings(&self.arch, g)?, self.precision)?
            } else {
                self.menu(sol.clps[g], sol.mask(g)).options[0].bram
            };
        }
        let (dsp_max, bram_max) = (self.platform.dsp_max(), self.platform.bram_max());
        let violation = if dsp > dsp_max {
            Some(format!("{dsp} DSPs exceed the budget of {dsp_max}"))
        } else if bram > bram_max {
            Some(format!("{bram} BRAMs exceed the budget of {bram_max}"))
        } else {
            None
        };
        Ok(Feasibility {
            dsp,
            dsp_max,
            bram,
            bram_max,
            violation,
        })
    }

    /// Fast path for the searches: `None` when the solution breaks a budget.
    /// The solution must already be structurally valid.
    pub fn try_evaluate(&mut self, sol: &Solution) -> Option<Evaluation> {
        self.evaluations += 1;
        let dsp = self.dsp_usage(sol);
        if dsp > self.platform.dsp_max() {
            return None;
        }
        if self.fixed_tilings {
            return self.evaluate_fixed(sol, dsp);
        }
        let slots: Vec<usize> = sol.active_slots().collect();
        let menus: Vec<(usize, Arc<Menu>, u128)> = slots
            .iter()
            .map(|&g| {
                let mask = sol.mask(g);
                (g, self.menu(sol.clps[g], mask), mask)
            })
            .collect();
        let keys: Vec<(u32, u32, u128)> = menus.iter().map(|(g, _, m)| (sol.clps[*g].tn, sol.clps[*g].tm, *m)).collect();
        let chosen = apportion(&menus.iter().map(|(_, m, _)| m.as_ref()).collect::<Vec<_>>(), &keys, self.platform.bram_max())?;
        let mut cost = Cost {
            cycles: 0,
            peak_bw_gbs: 0.0,
            bram: 0,
        };
        let mut caps = Vec::with_capacity(slots.len());
        for ((g, menu, _), &i) in menus.iter().zip(&chosen) {
            let o = menu.options[i];
            cost.cycles = cost.cycles.max(o.cycles);
            cost.peak_bw_gbs = cost.peak_bw_gbs.max(o.peak_bw);
            cost.bram += o.bram;
            caps.push((*g, o.caps));
        }
        Some(Evaluation { cost, dsp, caps })
    }

    fn evaluate_fixed(&self, sol: &Solution, dsp: u64) -> Option<Evaluation> {
        let mut cost = Cost {
            cycles: 0,
            peak_bw_gbs: 0.0,
            bram: 0,
        };
        for g in sol.active_slots() {
            let clp = sol.clps[g];
            let schedule = sol.schedule_with_tilings(&self.arch, g).ok()?;
            cost.bram += cost::clp_bram(clp, &schedule, self.precision).ok()?;
            let mut cycles = 0;
            for (layer, t) in schedule {
                cycles += cost::layer_cycles(layer, clp, t, &self.platform, self.precision);
                let bw = cost::min_bw(layer, clp, t, &self.platform, self.precision);
                cost.peak_bw_gbs = cost.peak_bw_gbs.max(bw);
            }
            cost.cycles = cost.cycles.max(cycles);
        }
        (cost.bram <= self.platform.bram_max()).then_some(Evaluation {
            cost,
            dsp,
            caps: Vec::new(),
        })
    }

    /// Per-layer tilings behind an evaluation.
    pub fn tilings(&self, sol: &Solution, eval: &Evaluation) -> Vec<Tiling> {
        if self.fixed_tilings {
            return sol.tilings.clone();
        }
        let mut tilings: Vec<Tiling> = self.arch.layers.iter().map(Tiling::full).collect();
        for &(g, caps) in &eval.caps {
            let clp = sol.clps[g];
            for l in sol.schedule(g) {
                tilings[l] = self.best_within(l, clp, caps);
            }
        }
        tilings
    }

    /// The solution with its tilings filled in.
    pub fn finish(&self, sol: &Solution, eval: &Evaluation) -> Solution {
        Solution {
            tilings: self.tilings(sol, eval),
            ..sol.clone()
        }
    }

    /// Evaluates, fills in tilings and produces the full report.
    pub fn report(&mut self, sol: &Solution) -> Result<(Solution, CostReport)> {
        let eval = self.evaluate(sol)?;
        let tiled = self.finish(sol, &eval);
        let report = cost::performance_metrics(&self.arch, &tiled, &self.platform, self.precision)?;
        Ok((tiled, report))
    }

    fn layer_bytes(&self, l: usize, clp: ClpConfig, c: &Candidate) -> u64 {
        let layer = &self.arch.layers[l];
        let nb = u64::from(layer.n_in.div_ceil(clp.tn));
        let mb = u64::from(layer.m_out.div_ceil(clp.tm));
        let (tn, tm) = (u64::from(clp.tn), u64::from(clp.tm));
        let k2 = u64::from(layer.kernel).pow(2);
        let elements = mb * c.tiles * (nb * tn * c.mfp_in + nb * tn * tm * k2 + tm * c.area);
        elements * self.precision.bytes()
    }

    fn best_within(&self, l: usize, clp: ClpConfig, caps: Caps) -> Tiling {
        let best = self.candidates[l]
            .iter()
            .filter(|c| c.bif <= caps.input && c.bof <= caps.output)
            .min_by_key(|c| (self.layer_bytes(l, clp, c), c.area, c.tr))
            .expect("caps admit the 1x1 tile");
        Tiling::new(best.tr, best.tc)
    }

    fn menu(&mut self, clp: ClpConfig, mask: u128) -> Arc<Menu> {
        let key = (clp.tn, clp.tm, mask);
        if let Some(m) = self.menus.get(&key) {
            return Arc::clone(m);
        }
        if self.menus.len() >= MENU_CACHE_LIMIT {
            self.menus.clear();
        }
        let menu = Arc::new(self.build_menu(clp, mask));
        self.menus.insert(key, Arc::clone(&menu));
        menu
    }

    fn build_menu(&self, clp: ClpConfig, mask: u128) -> Menu {
        let p = self.precision;
        let layers: Vec<usize> = (0..self.arch.len()).filter(|&l| mask >> l & 1 == 1).collect();
        let max_k2 = layers.iter().map(|&l| u64::from(self.arch.layers[l].kernel).pow(2)).max().unwrap_or(1);
        let weight_bram = (2 * max_k2).div_ceil(cost::addr_depth(p)) * clp.macs();

        struct Scored {
            bif: u64,
            bof: u64,
            key: (u64, u64, u32),
            cycles: u64,
            bw: f64,
        }
        let scored: Vec<Vec<Scored>> = layers
            .iter()
            .map(|&l| {
                let layer = &self.arch.layers[l];
                let compute = cost::comp_cycles(layer, clp);
                self.candidates[l]
                    .iter()
                    .map(|c| {
                        let bytes = self.layer_bytes(l, clp, c);
                        Scored {
                            bif: c.bif,
                            bof: c.bof,
                            key: (bytes, c.area, c.tr),
                            cycles: compute.max(cost::transfer_cycles(bytes, &self.platform)),
                            bw: cost::bw_gbs(bytes, compute, &self.platform),
                        }
                    })
                    .collect()
            })
            .collect();

        let mut output_caps: Vec<u64> = scored.iter().flatten().map(|s| s.bof).collect();
        output_caps.sort_unstable();
        output_caps.dedup();

        let mut raw = Vec::new();
        for &b in &output_caps {
            // Per layer: the best candidate as the input cap grows, as steps (bif, index).
            let steps: Vec<Vec<(u64, usize)>> = scored
                .iter()
                .map(|cands| {
                    let mut steps: Vec<(u64, usize)> = Vec::new();
                    for (i, s) in cands.iter().enumerate() {
                        if s.bof > b {
                            continue;
                        }
                        match steps.last() {
                            Some(&(_, j)) if cands[j].key <= s.key => {}
                            Some(&(bif, _)) if bif == s.bif => *steps.last_mut().unwrap() = (s.bif, i),
                            _ => steps.push((s.bif, i)),
                        }
                    }
                    steps
                })
                .collect();
            let mut input_caps: Vec<u64> = steps.iter().flatten().map(|&(bif, _)| bif).collect();
            input_caps.sort_unstable();
            input_caps.dedup();
            let mut cursor = vec![0usize; steps.len()];
            for &a in &input_caps {
                let mut ok = true;
                let (mut cycles, mut bw, mut used_in, mut used_out) = (0u64, 0f64, 0u64, 0u64);
                for (li, st) in steps.iter().enumerate() {
                    while cursor[li] + 1 < st.len() && st[cursor[li] + 1].0 <= a {
                        cursor[li] += 1;
                    }
                    match st.get(cursor[li]) {
                        Some(&(bif, i)) if bif <= a => {
                            let s = &scored[li][i];
                            cycles += s.cycles;
                            bw = bw.max(s.bw);
                            used_in = used_in.max(s.bif);
                            used_out = used_out.max(s.bof);
                        }
                        _ => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    raw.push(MenuOption {
                        bram: used_in * u64::from(clp.tn) + used_out * u64::from(clp.tm) + weight_bram,
                        cycles,
                        peak_bw: bw,
                        caps: Caps {
                            input: used_in,
                            output: used_out,
                        },
                    });
                }
            }
        }

        raw.sort_by(|x, y| {
            x.bram
                .cmp(&y.bram)
                .then(x.cycles.cmp(&y.cycles))
                .then(x.peak_bw.total_cmp(&y.peak_bw))
                .then((x.caps.input, x.caps.output).cmp(&(y.caps.input, y.caps.output)))
        });
        let mut options: Vec<MenuOption> = Vec::new();
        for o in raw {
            if !options.iter().any(|k| k.cycles <= o.cycles && k.peak_bw <= o.peak_bw) {
                options.push(o);
            }
        }
        Menu { options }
    }

    /// A random feasible solution padded to `L` slots.
    pub fn random_solution<R: Rng>(&mut self, rng: &mut R) -> Result<(Solution, Evaluation)> {
        let layers = self.arch.len();
        let units = self.mac_budget();
        if units == 0 {
            return Err(Error::InfeasiblePlatform(format!(
                "{} DSPs cannot build one {} MAC unit ({} DSPs)",
                self.platform.dsp_max(),
                self.precision,
                cost::dsp_per_mac(self.precision)
            )));
        }
        let minimal = self.seed_tilings(Solution::single(ClpConfig::new(1, 1), layers).padded(layers));
        let Some(minimal_eval) = self.try_evaluate(&minimal) else {
            return Err(Error::InfeasiblePlatform(format!(
                "a single 1x1 CLP needs more than {} BRAMs",
                self.platform.bram_max()
            )));
        };
        let (max_n, max_m) = (u64::from(self.arch.max_n()), u64::from(self.arch.max_m()));
        let groups = layers.min(units as usize);
        for _ in 0..RANDOM_RETRIES {
            let assignment: Vec<usize> = (0..layers).map(|_| rng.gen_range(0..groups)).collect();
            let mut sol = Solution::new(vec![ClpConfig::new(1, 1); layers], assignment);
            let mut active: Vec<usize> = sol.active_slots().collect();
            active.shuffle(rng);
            let mut left = units;
            for (i, &g) in active.iter().enumerate() {
                let reserve = (active.len() - i - 1) as u64;
                let avail = left - reserve;
                let tn = rng.gen_range(1..=max_n.min(avail));
                let tm = rng.gen_range(1..=max_m.min(avail / tn));
                sol.clps[g] = ClpConfig::new(tn as u32, tm as u32);
                left -= tn * tm;
            }
            let sol = self.seed_tilings(sol);
            if let Some(eval) = self.try_evaluate(&sol) {
                return Ok((sol, eval));
            }
        }
        Ok((minimal, minimal_eval))
    }

    /// In fixed-tiling mode a fresh solution starts from its optimized tilings.
    fn seed_tilings(&mut self, sol: Solution) -> Solution {
        if !self.fixed_tilings {
            return sol;
        }
        self.fixed_tilings = false;
        let tiled = match self.try_evaluate(&sol) {
            Some(eval) => self.finish(&sol, &eval),
            None => Solution {
                tilings: vec![Tiling::new(1, 1); self.arch.len()],
                ..sol
            },
        };
        self.fixed_tilings = true;
        tiled
    }

    /// Draws a feasible solution one move away. The move kind is drawn once;
    /// rejected draws are retried within that kind.
    pub fn neighbor<R: Rng>(&mut self, sol: &Solution, rng: &mut R) -> Neighbor {
        let reassign = rng.gen_bool(REASSIGN_PROB);
        let params = if self.fixed_tilings { 4 } else { 2 };
        let which = rng.gen_range(0..params);
        for _ in 0..NEIGHBOR_RETRIES {
            let mv = if reassign {
                self.draw_reassign(sol, rng)
            } else {
                self.draw_mutation(sol, which, rng)
            };
            let Some(mv) = mv else { continue };
            let next = mv.apply(sol);
            if let Some(eval) = self.try_evaluate(&next) {
                return Neighbor {
                    solution: next,
                    mv: Some(mv),
                    eval,
                };
            }
        }
        let eval = self.try_evaluate(sol).expect("neighbor input must be feasible");
        Neighbor {
            solution: sol.clone(),
            mv: None,
            eval,
        }
    }

    fn draw_reassign<R: Rng>(&self, sol: &Solution, rng: &mut R) -> Option<Move> {
        let slots = sol.clps.len();
        if slots < 2 {
            return None;
        }
        let layer = rng.gen_range(0..sol.assignment.len());
        let from = sol.assignment[layer];
        let mut to = rng.gen_range(0..slots - 1);
        if to >= from {
            to += 1;
        }
        Some(Move::Reassign { layer, from, to })
    }

    /// `which`: 0 Tn, 1 Tm, 2 Tr, 3 Tc. Unrolling values are drawn from the
    /// useful values the remaining DSP budget allows, which equals rejection
    /// sampling on the DSP constraint. A reshape draws the chosen factor from
    /// all useful values and sets the other one to the largest that fits.
    fn draw_mutation<R: Rng>(&self, sol: &Solution, which: usize, rng: &mut R) -> Option<Move> {
        if which >= 2 {
            let layer = rng.gen_range(0..sol.assignment.len());
            let l = &self.arch.layers[layer];
            let t = sol.tilings[layer];
            let (from, hi) = if which == 2 { (t.tr, l.rows) } else { (t.tc, l.cols) };
            let to = draw_other(rng, from, u64::from(hi))?;
            return Some(if which == 2 {
                Move::MutateTr { layer, from, to }
            } else {
                Move::MutateTc { layer, from, to }
            });
        }
        let active: Vec<usize> = sol.active_slots().collect();
        let clp = *active.choose(rng)?;
        let c = sol.clps[clp];
        let others: u64 = active.iter().filter(|&&g| g != clp).map(|&g| sol.clps[g].macs()).sum();
        let spare = self.mac_budget().saturating_sub(others);
        let (own, other) = if which == 0 {
            (&self.unroll_n, &self.unroll_m)
        } else {
            (&self.unroll_m, &self.unroll_n)
        };
        if rng.gen_bool(RESHAPE_PROB) {
            let a = *own.choose(rng)?;
            let b = largest_within(other, spare / u64::from(a))?;
            let to = if which == 0 { ClpConfig::new(a, b) } else { ClpConfig::new(b, a) };
            return (to != c).then_some(Move::Reshape { clp, from: c, to });
        }
        if which == 0 {
            let to = draw_within(rng, own, c.tn, spare / u64::from(c.tm))?;
            Some(Move::MutateTn { clp, from: c.tn, to })
        } else {
            let to = draw_within(rng, own, c.tm, spare / u64::from(c.tn))?;
            Some(Move::MutateTm { clp, from: c.tm, to })
        }
    }
}

/// Uniform over the values of a sorted list up to `hi`, except `current`.
fn draw_within<R: Rng>(rng: &mut R, values: &[u32], current: u32, hi: u64) -> Option<u32> {
    let end = values.partition_point(|&v| u64::from(v) <= hi);
    let skip = values[..end].binary_search(&current).ok();
    let choices = end - usize::from(skip.is_some());
    if choices == 0 {
        return None;
    }
    let mut i = rng.gen_range(0..choices);
    if skip.is_some_and(|k| i >= k) {
        i += 1;
    }
    Some(values[i])
}

fn largest_within(values: &[u32], hi: u64) -> Option<u32> {
    let end = values.partition_point(|&v| u64::from(v) <= hi);
    end.checked_sub(1).map(|i| values[i])
}

/// Uniform over `[1, hi]` without `current`.
fn draw_other<R: Rng>(rng: &mut R, current: u32, hi: u64) -> Option<u32> {
    let hi = hi.min(u64::from(u32::MAX)) as u32;
    let excluded = (1..=hi).contains(&current);
    let choices = hi - u32::from(excluded);
    if choices == 0 {
        return None;
    }
    let mut v = rng.gen_range(1..=choices);
    if excluded && v >= current {
        v += 1;
    }
    Some(v)
}

/// One search iteration as recorded in a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub current_cost: u64,
    pub best_cost: u64,
    /// Annealing temperature; absent for tabu search.
    pub temperature: Option<f64>,
    /// Tabu search accepted a tabu move because it beat the aspiration level.
    #[serde(default)]
    pub aspiration: bool,
    /// Tabu search ran out of admissible candidates and took the best tabu one.
    #[serde(default)]
    pub forced: bool,
}

/// Result of one search run.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Best feasible design seen, with tilings filled in.
    pub best: Solution,
    pub cost: Cost,
    pub trace: Vec<TraceRecord>,
    /// Solutions evaluated, including rejected neighbours.
    pub evaluations: u64,
}

/// Smallest tile sizes for each distinct tile count along a dimension.
fn breakpoints(extent: u32) -> Vec<u32> {
    let mut v: Vec<u32> = (1..=extent).map(|k| extent.div_ceil(k)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Splits the BRAM budget across CLPs by picking one menu option each.
///
/// Every CLP starts at its cheapest plan. The slowest CLP is then upgraded
/// to its cheapest faster plan while the budget lasts; after that, the CLP
/// with the highest bandwidth need is upgraded to its cheapest plan with
/// lower bandwidth that does not slow the design. Finally each CLP drops to
/// the cheapest plan that keeps the design's cycles and bandwidth. Ties go to
/// the CLP with the smaller `(Tn, Tm, layers)` key so that slot labels never
/// matter.
fn apportion(menus: &[&Menu], keys: &[MenuKey], budget: u64) -> Option<Vec<usize>> {
    let mut pick = vec![0usize; menus.len()];
    let mut spent: u64 = menus.iter().map(|m| m.options[0].bram).sum();
    if spent > budget {
        return None;
    }
    let opt = |pick: &[usize], i: usize| menus[i].options[pick[i]];

    loop {
        let slowest = (0..menus.len())
            .max_by(|&i, &j| opt(&pick, i).cycles.cmp(&opt(&pick, j).cycles).then(keys[j].cmp(&keys[i])))
            .unwrap();
        let cur = opt(&pick, slowest);
        let left = budget - spent;
        let upgrade = menus[slowest]
            .options
            .iter()
            .enumerate()
            .filter(|(_, o)| o.cycles < cur.cycles && o.bram <= cur.bram + left)
            .min_by(|(_, x), (_, y)| x.bram.cmp(&y.bram).then(x.cycles.cmp(&y.cycles)).then(x.peak_bw.total_cmp(&y.peak_bw)));
        let Some((i, o)) = upgrade else { break };
        spent = spent - cur.bram + o.bram;
        pick[slowest] = i;
    }

    let cycles = (0..menus.len()).map(|i| opt(&pick, i).cycles).max().unwrap();
    loop {
        let hungriest = (0..menus.len())
            .max_by(|&i, &j| opt(&pick, i).peak_bw.total_cmp(&opt(&pick, j).peak_bw).then(keys[j].cmp(&keys[i])))
            .unwrap();
        let cur = opt(&pick, hungriest);
        let left = budget - spent;
        let upgrade = menus[hungriest]
            .options
            .iter()
            .enumerate()
            .filter(|(_, o)| o.peak_bw < cur.peak_bw && o.cycles <= cycles && o.bram <= cur.bram + left)
            .min_by(|(_, x), (_, y)| x.bram.cmp(&y.bram).then(x.peak_bw.total_cmp(&y.peak_bw)).then(x.cycles.cmp(&y.cycles)));
        let Some((i, o)) = upgrade else { break };
        spent = spent - cur.bram + o.bram;
        pick[hungriest] = i;
    }

    let peak = (0..menus.len()).map(|i| opt(&pick, i).peak_bw).fold(0.0, f64::max);
    for (i, menu) in menus.iter().enumerate() {
        // Options are sorted by BRAM, so the first acceptable one is the cheapest.
        if let Some(j) = menu.options.iter().position(|o| o.cycles <= cycles && o.peak_bw <= peak) {
            if menu.options[j].bram < opt(&pick, i).bram {
                pick[i] = j;
            }
        }
    }
    Some(pick)
}

/// Tilings of one CLP's layers that minimize cycles and then peak bandwidth
/// within a BRAM budget.
pub fn optimize_tiling(
    clp: ClpConfig,
    layers: &[LayerConfig],
    bram_budget: u64,
    platform: &Platform,
    p: Precision,
) -> Result<Vec<Tiling>> {
    let arch = Architecture::new("clp", layers.to_vec())?;
    let eval = Evaluator::new(&arch, platform, p);
    let mask = if layers.len() == MAX_LAYERS { u128::MAX } else { (1u128 << layers.len()) - 1 };
    let menu = eval.build_menu(clp, mask);
    let best = menu
        .options
        .iter()
        .filter(|o| o.bram <= bram_budget)
        .min_by(|x, y| x.cycles.cmp(&y.cycles).then(x.peak_bw.total_cmp(&y.peak_bw)).then(x.bram.cmp(&y.bram)))
        .ok_or(Error::NoFeasibleTiling {
            budget: bram_budget,
            required: menu.options[0].bram,
        })?;
    Ok((0..layers.len()).map(|l| eval.best_within(l, clp, best.caps)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::bundled;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn alexnet() -> (Architecture, Platform) {
        (bundled::architecture("alexnet").unwrap(), bundled::platform("vc707").unwrap())
    }

    fn design(name: &str) -> Solution {
        Solution::from_json(bundled::design_json(name).unwrap()).unwrap()
    }

    #[test]
    fn breakpoints_cover_every_tile_count() {
        assert_eq!(breakpoints(1), vec![1]);
        assert_eq!(breakpoints(8), vec![1, 2, 3, 4, 8]);
        for extent in 1..60u32 {
            let counts: std::collections::BTreeSet<u32> = (1..=extent).map(|t| extent.div_ceil(t)).collect();
            let covered: std::collections::BTreeSet<u32> = breakpoints(extent).iter().map(|&t| extent.div_ceil(t)).collect();
            assert_eq!(counts, covered);
        }
    }

    #[test]
    fn draw_other_excludes_current() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v = draw_other(&mut rng, 3, 5).unwrap();
            assert!((1..=5).contains(&v) && v != 3);
        }
        assert_eq!(draw_other(&mut rng, 1, 1), None);
        assert_eq!(draw_other(&mut rng, 7, 1), Some(1));
        assert_eq!(draw_other(&mut rng, 1, 0), None);
    }

    #[test]
    fn reference_designs_cost() {
        let (arch, plat) = alexnet();
        let mut ev = Evaluator::new(&arch, &plat, Precision::Fp32);
        for (name, cycles) in [
            ("alexnet_sa_vc707", 1_531_224),
            ("alexnet_baseline_vc707", 1_557_504),
            ("alexnet_ts_vc707", 1_531_872),
        ] {
            let e = ev.evaluate(&design(name)).unwrap();
            assert_eq!(e.cost.cycles, cycles, "{name}");
            assert_eq!(e.dsp, 2240, "{name}");
            assert!(e.cost.bram <= plat.bram_max());
        }
        let plat709 = bundled::platform("vc709").unwrap();
        let mut ev = Evaluator::new(&arch, &plat709, Precision::Fp32);
        assert_eq!(ev.evaluate(&design("alexnet_baseline_vc709")).unwrap().cost.cycles, 1_168_128);
    }

    #[test]
    fn raising_tn_past_budget_is_infeasible() {
        let (arch, plat) = alexnet();
        let mut ev = Evaluator::new(&arch, &plat, Precision::Fp32);
        let mut sol = design("alexnet_sa_vc707");
        sol.clps[2].tn = 17;
        let f = ev.feasibility(&sol).unwrap();
        // One more input map on a 16 x 11 array adds 11 MACs of 5 DSPs each.
        assert_eq!(f.dsp, 2295);
        assert!(!f.is_feasible());
        assert!(matches!(ev.evaluate(&sol), Err(Error::Infeasible(_))));
        assert!(ev.is_feasible(&Solution::single(ClpConfig::new(1, 1), arch.len())));
    }

    #[test]
    fn single_layer_full_unroll_costs_window_sweep() {
        let arch = Architecture::new("one", vec![LayerConfig::new(0, "a", [4, 6, 8, 8, 3, 1])]).unwrap();
        let plat = bundled::platform("vc707").unwrap();
        let mut ev = Evaluator::new(&arch, &plat, Precision::Fp32);
        let e = ev.evaluate(&Solution::single(ClpConfig::new(4, 6), 1)).unwrap();
        assert_eq!(e.cost.cycles, 8 * 8 * 9);
    }

    fn brute_force(layer: &LayerConfig, clp: ClpConfig, budget: u64, plat: &Platform, p: Precision) -> Option<(u64, f64)> {
        let mut best: Option<(u64, f64)> = None;
        for tr in 1..=layer.rows {
            for tc in 1..=layer.cols {
                let t = Tiling::new(tr, tc);
                if cost::clp_bram(clp, &[(layer, t)], p).unwrap() > budget {
                    continue;
                }
                let c = (cost::layer_cycles(layer, clp, t, plat, p), cost::min_bw(layer, clp, t, plat, p));
                if best.is_none_or(|b| c.0 < b.0 || (c.0 == b.0 && c.1 < b.1)) {
                    best = Some(c);
                }
            }
        }
        best
    }

    #[test]
    fn tiling_matches_exhaustive_sweep() {
        let layer = LayerConfig::new(0, "s", [4, 6, 8, 8, 3, 1]);
        let clp = ClpConfig::new(2, 3);
        for (p, bw) in [(Precision::Fp32, 12.8), (Precision::Fxp16, 0.05), (Precision::Fp32, 0.02)] {
            let plat = bundled::platform("vc707").unwrap().with_bandwidth(bw);
            for budget in 0..40 {
                let got = optimize_tiling(clp, std::slice::from_ref(&layer), budget, &plat, p);
                match brute_force(&layer, clp, budget, &plat, p) {
                    None => assert!(matches!(got, Err(Error::NoFeasibleTiling { .. })), "budget {budget}"),
                    Some((cycles, bw_need)) => {
                        let t = got.unwrap()[0];
                        assert!(cost::clp_bram(clp, &[(&layer, t)], p).unwrap() <= budget);
                        assert_eq!(cost::layer_cycles(&layer, clp, t, &plat, p), cycles, "budget {budget}");
                        assert!((cost::min_bw(&layer, clp, t, &plat, p) - bw_need).abs() < 1e-12, "budget {budget}");
                    }
                }
            }
        }
    }

    #[test]
    fn unconstrained_tiling_is_whole_map() {
        let layer = LayerConfig::new(0, "s", [4, 6, 8, 8, 3, 1]);
        let plat = bundled::platform("vc707").unwrap();
        let t = optimize_tiling(ClpConfig::new(2, 3), &[layer], 10_000, &plat, Precision::Fp32).unwrap();
        assert_eq!(t, vec![Tiling::new(8, 8)]);
        assert!(matches!(
            optimize_tiling(ClpConfig::new(2, 3), &[LayerConfig::new(0, "s", [4, 6, 8, 8, 3, 1])], 0, &plat, Precision::Fp32),
            Err(Error::NoFeasibleTiling { budget: 0, .. })
        ));
    }

    #[test]
    fn finished_tilings_reproduce_cost() {
        let (arch, plat) = alexnet();
        let mut ev = Evaluator::new(&arch, &plat, Precision::Fp32);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (sol, e) = ev.random_solution(&mut rng).unwrap();
            let tiled = ev.finish(&sol, &e);
            let report = cost::performance_metrics(&arch, &tiled, &plat, Precision::Fp32).unwrap();
            assert_eq!(report.cycles, e.cost.cycles);
            assert_eq!(report.bram, e.cost.bram);
            assert_eq!(report.dsp, e.dsp);
            assert!((report.peak_bw_gbs - e.cost.peak_bw_gbs).abs() < 1e-12);
            assert!(report.fits(&plat));
        }
    }

    #[test]
    fn random_solution_is_deterministic_and_feasible() {
        let (arch, plat) = alexnet();
        let mut ev = Evaluator::new(&arch, &plat, Precision::Fp32);
        let a = ev.random_solution(&mut ChaCha8Rng::seed_from_u64(42)).unwrap().0;
        let b = ev.random_solution(&mut ChaCha8Rng::seed_from_u64(42)).unwrap().0;
        assert_eq!(a, b);
        assert_eq!(a.clps.len(), arch.len());
        assert!(ev.is_feasible(&a));
    }

    #[test]
    fn random_solution_respects_tiny_budgets() {
        let (arch, plat) = alexnet();
        let starved = Platform { dsp_total: 4, ..plat.clone() }.with_util_cap(1.0);
        let mut ev = Evaluator::new(&arch, &starved, Precision::Fp32);
        assert!(matches!(
            ev.random_solution(&mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InfeasiblePlatform(_))
        ));
        let five = Platform { dsp_total: 5, ..plat }.with_util_cap(1.0);
        let mut ev = Evaluator::new(&arch, &five, Precision::Fp32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let (sol, _) = ev.random_solution(&mut rng).unwrap();
            assert_eq!(sol.active_count(), 1);
            let g = sol.active_slots().next().unwrap();
            assert_eq!(sol.clps[g], ClpConfig::new(1, 1));
        }
    }

    #[test]
    fn neighbor_move_mix_and_contract() {
        let (arch, plat) = alexnet();
        let mut ev = Evaluator::new(&arch, &plat, Precision::Fp32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut sol, _) = ev.random_solution(&mut rng).unwrap();
        let (mut reassigns, mut moves) = (0, 0);
        for _ in 0..10_000 {
            let n = ev.neighbor(&sol, &mut rng);
            let Some(mv) = n.mv else { continue };
            moves += 1;
            if mv.is_reassign() {
                reassigns += 1;
            }
            assert_eq!(mv.apply(&sol), n.solution);
            let diff = sol.clps.iter().zip(&n.solution.clps).filter(|(a, b)| a != b).count()
                + sol.assignment.iter().zip(&n.solution.assignment).filter(|(a, b)| a != b).count();
            assert_eq!(diff, 1);
            assert!(ev.is_feasible(&n.solution));
            sol = n.solution;
        }
        let frac = f64::from(reassigns) / f64::from(moves);
        assert!((frac - 0.2).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn useful_unroll_values() {
        let (arch, plat) = alexnet();
        let ev = Evaluator::new(&arch, &plat, Precision::Fp32);
        // N in {3, 48, 192, 256}: 17 is never the smallest factor for its tile count.
        assert!(ev.unroll_n.contains(&3) && ev.unroll_n.contains(&16) && ev.unroll_n.contains(&256));
        assert!(!ev.unroll_n.contains(&17));
        assert!(ev.unroll_m.windows(2).all(|w| w[0] < w[1]));
        for &tn in &ev.unroll_n {
            let smaller = tn - 1;
            let same = smaller > 0 && arch.layers.iter().all(|l| l.n_in.div_ceil(tn) == l.n_in.div_ceil(smaller));
            assert!(!same, "{tn}");
        }
    }

    #[test]
    fn draw_within_skips_current_and_respects_cap() {
        let values = [1, 2, 3, 5, 8, 13];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..500 {
            seen.insert(draw_within(&mut rng, &values, 3, 8).unwrap());
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![1, 2, 5, 8]);
        assert_eq!(draw_within(&mut rng, &values, 1, 1), None);
        assert_eq!(draw_within(&mut rng, &values, 4, 1), Some(1));
        assert_eq!(largest_within(&values, 12), Some(8));
        assert_eq!(largest_within(&values, 0), None);
    }

    #[test]
    fn reshape_fills_spare_budget() {
        let (arch, plat) = alexnet();
        let mut ev = Evaluator::new(&arch, &plat, Precision::Fp32);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sol = design("alexnet_baseline_vc707");
        let mut reshapes = 0;
        for _ in 0..2_000 {
            let n = ev.neighbor(&sol, &mut rng);
            let Some(Move::Reshape { clp, from, to }) = n.mv else { continue };
            reshapes += 1;
            assert_eq!(from, sol.clps[clp]);
            assert!(ev.unroll_n.contains(&to.tn) || ev.unroll_m.contains(&to.tm));
            let others: u64 = sol.active_slots().filter(|&g| g != clp).map(|g| sol.clps[g].macs()).sum();
            let spare = ev.mac_budget() - others;
            assert!(to.macs() <= spare);
            assert!(n.eval.dsp <= plat.dsp_max());
        }
        assert!(reshapes > 100, "{reshapes}");
    }

    #[test]
    fn cost_ignores_slot_labels_and_empty_slots() {
        let (arch, plat) = alexnet();
        let mut ev = Evaluator::new(&arch, &plat, Precision::Fp32);
        let sol = design("alexnet_ts_vc707");
        let base = ev.evaluate(&sol).unwrap().cost;
        let perm = [2usize, 0, 3, 1];
        let mut clps = vec![ClpConfig::new(1, 1); 4];
        for (g, &to) in perm.iter().enumerate() {
            clps[to] = sol.clps[g];
        }
        let permuted = Solution::new(clps, sol.assignment.iter().map(|&g| perm[g]).collect());
        assert_eq!(ev.evaluate(&permuted).unwrap().cost, base);
        let padded = sol.clone().padded(9);
        let e = ev.evaluate(&padded).unwrap();
        assert_eq!(e.cost, base);
        assert_eq!(e.dsp, 2240);
        assert_eq!(sol.canonical().clps.len(), 4);
    }

    #[test]
    fn fixed_tiling_mode_uses_given_tilings() {
        let (arch, plat) = alexnet();
        let mut free = Evaluator::new(&arch, &plat, Precision::Fp32);
        let sol = design("alexnet_sa_vc707");
        let e = free.evaluate(&sol).unwrap();
        let tiled = free.finish(&sol, &e);
        let mut fixed = Evaluator::new(&arch, &plat, Precision::Fp32).with_fixed_tilings(true);
        assert_eq!(fixed.evaluate(&tiled).unwrap().cost, e.cost);
        assert!(fixed.evaluate(&sol).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (start, _) = fixed.random_solution(&mut rng).unwrap();
        assert_eq!(start.tilings.len(), arch.len());
        let mut tiling_moves = 0;
        let mut cur = start;
        for _ in 0..2000 {
            let n = fixed.neighbor(&cur, &mut rng);
            if matches!(n.mv, Some(Move::MutateTr { .. } | Move::MutateTc { .. })) {
                tiling_moves += 1;
            }
            cur = n.solution;
        }
        assert!(tiling_moves > 0);
    }

    #[test]
    fn design_files_round_trip() {
        let sol = design("alexnet_sa_vc707");
        assert_eq!(Solution::from_json(&sol.to_json()).unwrap(), sol);
        let (arch, plat) = alexnet();
        let (tiled, _) = Evaluator::new(&arch, &plat, Precision::Fp32).report(&sol).unwrap();
        assert_eq!(Solution::from_json(&tiled.to_json()).unwrap(), tiled);
    }

    #[test]
    fn validation_catches_bad_designs() {
        let (arch, _) = alexnet();
        assert!(Solution::single(ClpConfig::new(1, 1), 3).validate(&arch).is_err());
        assert!(Solution::new(vec![ClpConfig::new(1, 1)], vec![1; 10]).validate(&arch).is_err());
        assert!(Solution::single(ClpConfig::new(0, 1), 10).validate(&arch).is_err());
        let mut s = Solution::single(ClpConfig::new(1, 1), 10);
        s.tilings = vec![Tiling::new(56, 1); 10];
        assert!(s.validate(&arch).is_err());
    }
}
