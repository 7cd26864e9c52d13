//! Ground truth for small instances: exhaustive design enumeration and a
//! simulator that replays the tiled loop nest of one layer on one CLP.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, LayerConfig, Platform, Precision};
use crate::cost::{self, ClpConfig, Tiling};
use crate::error::{Error, Result};
use crate::space::{Cost, Evaluator, Solution};

/// Limits of the exhaustive search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub max_tn: u32,
    pub max_tm: u32,
    /// Refuse to enumerate more designs than this.
    pub cap: u128,
}

impl Bounds {
    pub const DEFAULT_CAP: u128 = 10_000_000;

    /// Unrolling up to the largest layer dimensions.
    pub fn for_arch(arch: &Architecture) -> Self {
        Bounds {
            max_tn: arch.max_n(),
            max_tm: arch.max_m(),
            cap: Self::DEFAULT_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    /// Optimal design in canonical slot order, with tilings.
    pub best: Solution,
    pub cost: Cost,
    /// Designs within the DSP budget that were evaluated.
    pub designs: u128,
}

/// Layer partitions as restricted growth strings: layer 0 is in group 0 and
/// each later layer joins an existing group or opens the next one.
pub fn partitions(layers: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, groups: usize, layers: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == layers {
            out.push(prefix.clone());
            return;
        }
        for g in 0..=groups {
            prefix.push(g);
            grow(prefix, groups.max(g + 1), layers, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if layers > 0 {
        grow(&mut vec![0], 1, layers, &mut out);
    }
    out
}

/// Number of `(Tn, Tm)` tuples for `groups` CLPs whose MAC count fits `units`,
/// indexed by group count.
fn unroll_counts(max_groups: usize, units: u64, bounds: &Bounds) -> Vec<u128> {
    let units = units as usize;
    let mut single = vec![0u128; units + 1];
    for tn in 1..=bounds.max_tn as usize {
        for tm in 1..=bounds.max_tm as usize {
            if tn * tm <= units {
                single[tn * tm] += 1;
            }
        }
    }
    let mut counts = vec![0u128; max_groups + 1];
    let mut dist = vec![0u128; units + 1];
    dist[0] = 1;
    for count in counts.iter_mut().skip(1) {
        let mut next = vec![0u128; units + 1];
        for (used, &ways) in dist.iter().enumerate().filter(|(_, &w)| w > 0) {
            for (macs, &n) in single.iter().enumerate().skip(1).filter(|(_, &n)| n > 0) {
                if used + macs <= units {
                    next[used + macs] = next[used + macs].saturating_add(ways.saturating_mul(n));
                }
            }
        }
        dist = next;
        *count = dist.iter().fold(0u128, |a, &b| a.saturating_add(b));
    }
    counts
}

/// Designs the exhaustive search would evaluate.
pub fn space_size(arch: &Architecture, platform: &Platform, p: Precision, bounds: &Bounds) -> u128 {
    let units = platform.dsp_max() / cost::dsp_per_mac(p);
    let layers = arch.len();
    if layers > 16 {
        return u128::MAX;
    }
    let counts = unroll_counts(layers, units, bounds);
    partitions_per_group(layers)
        .iter()
        .enumerate()
        .fold(0u128, |acc, (g, &parts)| acc.saturating_add(parts.saturating_mul(counts[g])))
}

/// Stirling numbers of the second kind `S(layers, g)` for every `g`.
fn partitions_per_group(layers: usize) -> Vec<u128> {
    let mut row = vec![1u128];
    for n in 1..=layers {
        let mut next = vec![0u128; n + 1];
        for k in 1..=n {
            let stay = if k < row.len() { (k as u128).saturating_mul(row[k]) } else { 0 };
            next[k] = stay.saturating_add(row[k - 1]);
        }
        row = next;
    }
    row
}

fn rank(a: &(Cost, Solution), b: &(Cost, Solution)) -> Ordering {
    a.0.cmp(&b.0)
        .then_with(|| a.1.assignment.cmp(&b.1.assignment))
        .then_with(|| a.1.clps.cmp(&b.1.clps))
}

/// Evaluates every design within the bounds and returns the best under the
/// search cost. Ties go to the smallest canonical encoding, so the answer does
/// not depend on enumeration order.
pub fn exhaustive_search(arch: &Architecture, platform: &Platform, p: Precision, bounds: &Bounds) -> Result<OracleOutcome> {
    let size = space_size(arch, platform, p, bounds);
    if size > bounds.cap {
        return Err(Error::SpaceTooLarge { size, cap: bounds.cap });
    }
    let units = platform.dsp_max() / cost::dsp_per_mac(p);
    if units == 0 {
        return Err(Error::InfeasiblePlatform("DSP budget below one MAC unit".into()));
    }
    let base = Evaluator::new(arch, platform, p);
    let found = partitions(arch.len())
        .into_par_iter()
        .map_init(
            || base.clone(),
            |ev, assignment| {
                let groups = assignment.iter().max().map_or(0, |g| g + 1);
                let mut sol = Solution::new(vec![ClpConfig::new(1, 1); groups], assignment);
                let mut best: Option<(Cost, Solution)> = None;
                let mut designs = 0u128;
                enumerate(ev, &mut sol, 0, units, bounds, &mut best, &mut designs);
                (best, designs)
            },
        )
        .reduce(
            || (None, 0),
            |(a, na), (b, nb)| {
                let best = match (a, b) {
                    (Some(x), Some(y)) => Some(if rank(&x, &y) == Ordering::Greater { y } else { x }),
                    (x, y) => x.or(y),
                };
                (best, na + nb)
            },
        );
    let (Some((cost, sol)), designs) = found else {
        return Err(Error::Infeasible("no design fits the platform".into()));
    };
    let mut ev = base;
    let eval = ev.evaluate(&sol)?;
    Ok(OracleOutcome {
        best: ev.finish(&sol, &eval),
        cost,
        designs,
    })
}

fn enumerate(
    ev: &mut Evaluator,
    sol: &mut Solution,
    group: usize,
    units: u64,
    bounds: &Bounds,
    best: &mut Option<(Cost, Solution)>,
    designs: &mut u128,
) {
    if group == sol.clps.len() {
        *designs += 1;
        if let Some(e) = ev.try_evaluate(sol) {
            let cand = (e.cost, sol.clone());
            if best.as_ref().is_none_or(|b| rank(&cand, b) == Ordering::Less) {
                *best = Some(cand);
            }
        }
        return;
    }
    let reserve = (sol.clps.len() - group - 1) as u64;
    for tn in 1..=bounds.max_tn {
        for tm in 1..=bounds.max_tm {
            let macs = u64::from(tn) * u64::from(tm);
            if macs + reserve > units {
                break;
            }
            sol.clps[group] = ClpConfig::new(tn, tm);
            enumerate(ev, sol, group + 1, units - macs, bounds, best, designs);
        }
    }
}

/// Counts from replaying one layer's tiled loop nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    /// `Tn x Tm` compute stages (one per input/weight tile pair).
    pub compute_stages: u64,
    pub cycles: u64,
    pub input_refills: u64,
    pub weight_refills: u64,
    pub output_writes: u64,
    /// Elements moved when every refill fills every bank to its tile footprint.
    pub buffer_elements: u64,
    /// Elements actually needed once edge tiles are clipped to the layer.
    pub useful_elements: u64,
}

impl SimReport {
    pub fn buffer_bytes(&self, p: Precision) -> u64 {
        self.buffer_elements * p.bytes()
    }
}

/// Largest dimension [`simulate_clp`] accepts.
pub const SIM_LIMIT: u32 = 16;

/// Walks the tile loops (rows, columns, output maps, input maps), counting one
/// cycle per kernel position and output pixel of every stage.
pub fn simulate_clp(layer: &LayerConfig, clp: ClpConfig, t: Tiling) -> Result<SimReport> {
    let dims = [layer.n_in, layer.m_out, layer.rows, layer.cols];
    if dims.iter().any(|&d| d > SIM_LIMIT) {
        return Err(Error::InstanceTooLarge(format!(
            "N, M, R and C must be at most {SIM_LIMIT}, got {dims:?}"
        )));
    }
    if clp.tn == 0 || clp.tm == 0 || !t.fits(layer) {
        return Err(Error::invalid("simulation", "unrolling or tiling out of range"));
    }
    let (k, s) = (u64::from(layer.kernel), u64::from(layer.stride));
    let (tn, tm) = (u64::from(clp.tn), u64::from(clp.tm));
    let in_mfp = cost::mfp(cost::BufferKind::Input, layer, t);
    let out_mfp = cost::mfp(cost::BufferKind::Output, layer, t);
    let mut r = SimReport {
        compute_stages: 0,
        cycles: 0,
        input_refills: 0,
        weight_refills: 0,
        output_writes: 0,
        buffer_elements: 0,
        useful_elements: 0,
    };
    for row in (0..layer.rows).step_by(t.tr as usize) {
        let rows = u64::from(t.tr.min(layer.rows - row));
        for col in (0..layer.cols).step_by(t.tc as usize) {
            let cols = u64::from(t.tc.min(layer.cols - col));
            let window = (k + s * (rows - 1)) * (k + s * (cols - 1));
            for to in (0..layer.m_out).step_by(clp.tm as usize) {
                let maps_out = u64::from(clp.tm.min(layer.m_out - to));
                for ti in (0..layer.n_in).step_by(clp.tn as usize) {
                    let maps_in = u64::from(clp.tn.min(layer.n_in - ti));
                    r.input_refills += 1;
                    r.weight_refills += 1;
                    r.buffer_elements += tn * in_mfp + tn * tm * k * k;
                    r.useful_elements += maps_in * window + maps_in * maps_out * k * k;
                    r.compute_stages += 1;
                    for _i in 0..k {
                        for _j in 0..k {
                            for _tr in 0..rows {
                                r.cycles += cols;
                            }
                        }
                    }
                }
                r.output_writes += 1;
                r.buffer_elements += tm * out_mfp;
                r.useful_elements += maps_out * rows * cols;
            }
        }
    }
    Ok(r)
}

/// Outcome of comparing the simulator with the closed-form model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: u64,
    pub cycle_mismatches: u64,
    pub refill_mismatches: u64,
    pub traffic_mismatches: u64,
    pub first_mismatch: Option<String>,
}

impl SweepReport {
    pub fn mismatches(&self) -> u64 {
        self.cycle_mismatches + self.refill_mismatches + self.traffic_mismatches
    }

    fn merge(mut self, other: SweepReport) -> SweepReport {
        self.points += other.points;
        self.cycle_mismatches += other.cycle_mismatches;
        self.refill_mismatches += other.refill_mismatches;
        self.traffic_mismatches += other.traffic_mismatches;
        self.first_mismatch = self.first_mismatch.or(other.first_mismatch);
        self
    }
}

/// Every layer with `N, M <= max_maps`, `R, C <= max_extent`, `K <= max_kernel`,
/// `S <= max_stride`, under every `Tn <= N`, `Tm <= M`, `Tr <= R`, `Tc <= C`.
pub fn simulator_sweep(max_maps: u32, max_extent: u32, max_kernel: u32, max_stride: u32) -> SweepReport {
    (1..=max_maps)
        .into_par_iter()
        .map(|n| {
            let mut rep = SweepReport::default();
            for m in 1..=max_maps {
                for rows in 1..=max_extent {
                    for cols in 1..=max_extent {
                        for k in 1..=max_kernel {
                            for s in 1..=max_stride {
                                let layer = LayerConfig::new(0, "sweep", [n, m, rows, cols, k, s]);
                                check_layer(&layer, &mut rep);
                            }
                        }
                    }
                }
            }
            rep
        })
        .reduce(SweepReport::default, SweepReport::merge)
}

fn check_layer(layer: &LayerConfig, rep: &mut SweepReport) {
    for tn in 1..=layer.n_in {
        for tm in 1..=layer.m_out {
            let clp = ClpConfig::new(tn, tm);
            let cycles = cost::comp_cycles(layer, clp);
            for tr in 1..=layer.rows {
                for tc in 1..=layer.cols {
                    let t = Tiling::new(tr, tc);
                    let sim = simulate_clp(layer, clp, t).expect("sweep stays within limits");
                    let alpha = cost::access_counts(layer, clp, t);
                    rep.points += 1;
                    let mut note = |what: &str| {
                        if rep.first_mismatch.is_none() {
                            rep.first_mismatch = Some(format!("{what}: {layer:?} {clp:?} {t:?}"));
                        }
                    };
                    if sim.cycles != cycles {
                        note("cycles");
                        rep.cycle_mismatches += 1;
                    }
                    if (sim.input_refills, sim.weight_refills, sim.output_writes) != (alpha.input, alpha.weight, alpha.output) {
                        note("refills");
                        rep.refill_mismatches += 1;
                    }
                    if sim.buffer_elements != cost::offchip_elements(layer, clp, t) || sim.useful_elements > sim.buffer_elements {
                        note("traffic");
                        rep.traffic_mismatches += 1;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::bundled;

    #[test]
    fn partition_counts_are_bell_numbers() {
        let bell = [1, 1, 2, 5, 15, 52, 203];
        for (l, &b) in bell.iter().enumerate().skip(1) {
            let parts = partitions(l);
            assert_eq!(parts.len(), b);
            assert_eq!(partitions_per_group(l).iter().sum::<u128>(), b as u128);
            assert!(parts.iter().all(|p| p[0] == 0));
        }
    }

    #[test]
    fn counted_space_matches_enumeration() {
        let arch = bundled::architecture("tiny").unwrap();
        let plat = bundled::platform("toy").unwrap();
        let bounds = Bounds::for_arch(&arch);
        let out = exhaustive_search(&arch, &plat, Precision::Fp32, &bounds).unwrap();
        assert_eq!(out.designs, space_size(&arch, &plat, Precision::Fp32, &bounds));
    }

    #[test]
    fn worked_example_takes_400_cycles() {
        let layer = LayerConfig::new(0, "fig", [3, 4, 5, 5, 2, 1]);
        let sim = simulate_clp(&layer, ClpConfig::new(2, 3), Tiling::new(2, 2)).unwrap();
        assert_eq!(sim.cycles, 400);
        assert_eq!(sim.compute_stages, 36);
    }

    #[test]
    fn single_tile_refills_once() {
        let layer = LayerConfig::new(0, "one", [3, 5, 6, 4, 3, 2]);
        let sim = simulate_clp(&layer, ClpConfig::new(4, 5), Tiling::new(6, 4)).unwrap();
        assert_eq!(sim.cycles, 6 * 4 * 9);
        assert_eq!((sim.input_refills, sim.weight_refills, sim.output_writes), (1, 1, 1));
    }

    #[test]
    fn large_instances_refused() {
        let layer = LayerConfig::new(0, "big", [3, 48, 55, 55, 11, 4]);
        assert!(matches!(
            simulate_clp(&layer, ClpConfig::new(1, 1), Tiling::new(1, 1)),
            Err(Error::InstanceTooLarge(_))
        ));
    }

    #[test]
    fn small_sweep_agrees() {
        let rep = simulator_sweep(4, 4, 2, 2);
        assert!(rep.points > 0);
        assert_eq!(rep.mismatches(), 0, "{:?}", rep.first_mismatch);
    }

    #[test]
    fn single_layer_optimum_is_full_unroll() {
        let arch = Architecture::new("one", vec![LayerConfig::new(0, "a", [2, 3, 4, 4, 3, 1])]).unwrap();
        let plat = bundled::platform("toy").unwrap().with_util_cap(1.0);
        let plat = Platform { dsp_total: 30, ..plat };
        let out = exhaustive_search(&arch, &plat, Precision::Fp32, &Bounds::for_arch(&arch)).unwrap();
        assert_eq!(out.cost.cycles, 4 * 4 * 9);
        assert_eq!(out.best.clps, vec![ClpConfig::new(2, 3)]);
    }

    #[test]
    fn oversized_space_refused() {
        let arch = Architecture::new(
            "three",
            (0..3).map(|i| LayerConfig::new(i, "l", [8, 8, 4, 4, 3, 1])).collect(),
        )
        .unwrap();
        let plat = bundled::platform("toy").unwrap();
        let bounds = Bounds {
            cap: 10,
            ..Bounds::for_arch(&arch)
        };
        assert!(matches!(
            exhaustive_search(&arch, &plat, Precision::Fp32, &bounds),
            Err(Error::SpaceTooLarge { .. })
        ));
    }
}
