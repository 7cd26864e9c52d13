//! Closed-form cost model of a CLP processing a CONV layer.
//!
//! Everything here is a pure function of layer shape, unrolling factors
//! `(Tn, Tm)`, tiling factors `(Tr, Tc)`, precision and platform. Cycle and
//! traffic counts are exact integers; rates are `f64`.

use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, LayerConfig, Platform, Precision};
use crate::error::{Error, Result};
use crate::space::Solution;

/// Unrolling factors of one CLP: `tn` input maps by `tm` output maps per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClpConfig {
    pub tn: u32,
    pub tm: u32,
}

impl ClpConfig {
    pub const fn new(tn: u32, tm: u32) -> Self {
        ClpConfig { tn, tm }
    }

    pub fn macs(&self) -> u64 {
        u64::from(self.tn) * u64::from(self.tm)
    }
}

/// Output tile of `tr` rows by `tc` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tiling {
    pub tr: u32,
    pub tc: u32,
}

impl Tiling {
    pub const fn new(tr: u32, tc: u32) -> Self {
        Tiling { tr, tc }
    }

    /// The whole output map as a single tile.
    pub fn full(layer: &LayerConfig) -> Self {
        Tiling::new(layer.rows, layer.cols)
    }

    pub fn fits(&self, layer: &LayerConfig) -> bool {
        (1..=layer.rows).contains(&self.tr) && (1..=layer.cols).contains(&self.tc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BufferKind {
    Input,
    Weight,
    Output,
}

impl BufferKind {
    pub const ALL: [BufferKind; 3] = [BufferKind::Input, BufferKind::Weight, BufferKind::Output];
}

fn ceil_div(a: u32, b: u32) -> u64 {
    u64::from(a.div_ceil(b))
}

/// Compute stages times per-stage cycles: `⌈N/Tn⌉·⌈M/Tm⌉·R·C·K²`.
pub fn comp_cycles(layer: &LayerConfig, clp: ClpConfig) -> u64 {
    let k = u64::from(layer.kernel);
    ceil_div(layer.n_in, clp.tn)
        * ceil_div(layer.m_out, clp.tm)
        * u64::from(layer.rows)
        * u64::from(layer.cols)
        * k
        * k
}

/// Operations per cycle while computing.
pub fn comp_perf(layer: &LayerConfig, clp: ClpConfig) -> f64 {
    let ops = 2.0 * f64::from(layer.n_in) * f64::from(layer.m_out);
    ops / (ceil_div(layer.n_in, clp.tn) * ceil_div(layer.m_out, clp.tm)) as f64
}

/// Fraction of the CLP's MAC units doing useful work on this layer.
pub fn layer_utilization(layer: &LayerConfig, clp: ClpConfig) -> f64 {
    let useful = (f64::from(layer.n_in) / f64::from(clp.tn)) * (f64::from(layer.m_out) / f64::from(clp.tm));
    useful / (ceil_div(layer.n_in, clp.tn) * ceil_div(layer.m_out, clp.tm)) as f64
}

/// DSP slices per multiply-accumulate unit.
pub fn dsp_per_mac(p: Precision) -> u64 {
    match p {
        // 3 for the multiplier, 2 for the adder.
        Precision::Fp32 => 5,
        Precision::Fxp16 => 1,
    }
}

/// Words per BRAM18K bank at this precision.
pub fn addr_depth(p: Precision) -> u64 {
    match p {
        Precision::Fp32 => 512,
        Precision::Fxp16 => 1024,
    }
}

pub fn clp_dsp(clp: ClpConfig, p: Precision) -> u64 {
    dsp_per_mac(p) * clp.macs()
}

/// DSPs of all CLPs that have at least one layer.
pub fn dsp_usage(sol: &Solution, p: Precision) -> u64 {
    sol.active_slots().map(|g| clp_dsp(sol.clps[g], p)).sum()
}

/// Elements one bank must hold for one tile of the layer.
pub fn mfp(kind: BufferKind, layer: &LayerConfig, t: Tiling) -> u64 {
    let k = u64::from(layer.kernel);
    let s = u64::from(layer.stride);
    match kind {
        BufferKind::Input => (k + s * u64::from(t.tr - 1)) * (k + s * u64::from(t.tc - 1)),
        BufferKind::Weight => k * k,
        BufferKind::Output => u64::from(t.tr) * u64::from(t.tc),
    }
}

pub fn bank_count(kind: BufferKind, clp: ClpConfig) -> u64 {
    match kind {
        BufferKind::Input => u64::from(clp.tn),
        BufferKind::Weight => clp.macs(),
        BufferKind::Output => u64::from(clp.tm),
    }
}

/// Bank depth that lets each layer's tile be double buffered, including the
/// hand-over to the next layer of the same CLP (the last layer hands over to
/// the first of the next image).
pub fn min_bank_depth_of(footprints: &[u64]) -> Result<u64> {
    if footprints.is_empty() {
        return Err(Error::EmptySchedule);
    }
    let n = footprints.len();
    Ok((0..n)
        .map(|i| {
            let here = footprints[i];
            let next = footprints[(i + 1) % n];
            (here + next).max(2 * here)
        })
        .max()
        .unwrap_or(0))
}

/// [`min_bank_depth_of`] for one buffer kind over a CLP's schedule.
pub fn min_bank_depth(kind: BufferKind, schedule: &[(&LayerConfig, Tiling)]) -> Result<u64> {
    let footprints: Vec<u64> = schedule.iter().map(|(l, t)| mfp(kind, l, *t)).collect();
    min_bank_depth_of(&footprints)
}

/// BRAM18K blocks per bank.
pub fn brams_per_bank(depth: u64, p: Precision) -> u64 {
    depth.div_ceil(addr_depth(p))
}

/// BRAMs of one CLP's three buffers.
pub fn clp_bram(clp: ClpConfig, schedule: &[(&LayerConfig, Tiling)], p: Precision) -> Result<u64> {
    let mut total = 0;
    for kind in BufferKind::ALL {
        total += brams_per_bank(min_bank_depth(kind, schedule)?, p) * bank_count(kind, clp);
    }
    Ok(total)
}

/// BRAMs of all CLPs that have at least one layer. Needs tilings.
pub fn bram_usage(arch: &Architecture, sol: &Solution, p: Precision) -> Result<u64> {
    let mut total = 0;
    for g in sol.active_slots() {
        total += clp_bram(sol.clps[g], &sol.schedule_with_tilings(arch, g)?, p)?;
    }
    Ok(total)
}

/// Off-chip transfers of each buffer kind, counted in whole tile refills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCounts {
    pub input: u64,
    pub weight: u64,
    pub output: u64,
}

impl AccessCounts {
    pub fn get(&self, kind: BufferKind) -> u64 {
        match kind {
            BufferKind::Input => self.input,
            BufferKind::Weight => self.weight,
            BufferKind::Output => self.output,
        }
    }
}

pub fn access_counts(layer: &LayerConfig, clp: ClpConfig, t: Tiling) -> AccessCounts {
    let out_tiles = ceil_div(layer.m_out, clp.tm) * ceil_div(layer.rows, t.tr) * ceil_div(layer.cols, t.tc);
    let in_tiles = ceil_div(layer.n_in, clp.tn) * out_tiles;
    AccessCounts {
        input: in_tiles,
        weight: in_tiles,
        output: out_tiles,
    }
}

/// Off-chip elements moved for one layer: every refill fills every bank.
pub fn offchip_elements(layer: &LayerConfig, clp: ClpConfig, t: Tiling) -> u64 {
    let alpha = access_counts(layer, clp, t);
    BufferKind::ALL
        .iter()
        .map(|&kind| alpha.get(kind) * bank_count(kind, clp) * mfp(kind, layer, t))
        .sum()
}

pub fn offchip_bytes(layer: &LayerConfig, clp: ClpConfig, t: Tiling, p: Precision) -> u64 {
    offchip_elements(layer, clp, t) * p.bytes()
}

/// Operations per off-chip byte.
pub fn ctc(layer: &LayerConfig, clp: ClpConfig, t: Tiling, p: Precision) -> f64 {
    layer.ops() as f64 / offchip_bytes(layer, clp, t, p) as f64
}

/// Roofline: the compute roof or what the memory link can feed, in ops per cycle.
pub fn attainable_perf(layer: &LayerConfig, clp: ClpConfig, t: Tiling, platform: &Platform, p: Precision) -> f64 {
    comp_perf(layer, clp).min(ctc(layer, clp, t, p) * platform.bytes_per_cycle())
}

/// Bandwidth in GB/s needed to keep the layer compute bound.
pub fn min_bw(layer: &LayerConfig, clp: ClpConfig, t: Tiling, platform: &Platform, p: Precision) -> f64 {
    bw_gbs(offchip_bytes(layer, clp, t, p), comp_cycles(layer, clp), platform)
}

/// Bytes spread over cycles, as GB/s at the platform clock.
pub fn bw_gbs(bytes: u64, cycles: u64, platform: &Platform) -> f64 {
    if cycles == 0 {
        return 0.0;
    }
    bytes as f64 / cycles as f64 * platform.freq_hz() / 1e9
}

/// Cycles to stream `bytes` over the off-chip link.
pub fn transfer_cycles(bytes: u64, platform: &Platform) -> u64 {
    (bytes as f64 / platform.bytes_per_cycle()).ceil() as u64
}

/// Compute and transfer overlap; the slower of the two sets the pace.
pub fn layer_cycles(layer: &LayerConfig, clp: ClpConfig, t: Tiling, platform: &Platform, p: Precision) -> u64 {
    comp_cycles(layer, clp).max(transfer_cycles(offchip_bytes(layer, clp, t, p), platform))
}

/// Slowest CLP's total over its schedule. Needs tilings.
pub fn design_cycles(arch: &Architecture, sol: &Solution, platform: &Platform, p: Precision) -> Result<u64> {
    Ok(performance_metrics(arch, sol, platform, p)?.cycles)
}

/// Useful MAC work over provisioned MAC time, across active CLPs.
pub fn arithmetic_utilization(arch: &Architecture, sol: &Solution, platform: &Platform, p: Precision) -> Result<f64> {
    Ok(performance_metrics(arch, sol, platform, p)?.utilization)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub name: String,
    pub clp: usize,
    pub tiling: Tiling,
    pub compute_cycles: u64,
    pub transfer_cycles: u64,
    pub cycles: u64,
    pub utilization: f64,
    pub offchip_bytes: u64,
    pub min_bw_gbs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClpReport {
    pub slot: usize,
    pub clp: ClpConfig,
    pub layers: Vec<usize>,
    pub cycles: u64,
    pub dsp: u64,
    pub bram: u64,
    pub peak_bw_gbs: f64,
}

/// Full evaluation of a tiled design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerReport>,
    pub clps: Vec<ClpReport>,
    pub cycles: u64,
    pub dsp: u64,
    pub bram: u64,
    pub utilization: f64,
    pub throughput_img_s: f64,
    pub performance_gops: f64,
    pub execution_time_ms: f64,
    /// Highest per-layer bandwidth requirement on any CLP.
    pub peak_bw_gbs: f64,
    /// All off-chip traffic of one image spread over the design's cycles.
    pub average_bw_gbs: f64,
    pub total_ops: u64,
}

impl CostReport {
    pub fn fits(&self, platform: &Platform) -> bool {
        self.dsp <= platform.dsp_max() && self.bram <= platform.bram_max()
    }
}

/// Evaluates every formula for a design whose tilings are set.
pub fn performance_metrics(arch: &Architecture, sol: &Solution, platform: &Platform, p: Precision) -> Result<CostReport> {
    sol.validate(arch)?;
    if sol.tilings.len() != arch.len() {
        return Err(Error::invalid("design", "tilings are missing"));
    }
    let mut layers = Vec::with_capacity(arch.len());
    for layer in &arch.layers {
        let g = sol.assignment[layer.id];
        let clp = sol.clps[g];
        let t = sol.tilings[layer.id];
        let bytes = offchip_bytes(layer, clp, t, p);
        let compute = comp_cycles(layer, clp);
        let transfer = transfer_cycles(bytes, platform);
        layers.push(LayerReport {
            layer: layer.id,
            name: layer.name.clone(),
            clp: g,
            tiling: t,
            compute_cycles: compute,
            transfer_cycles: transfer,
            cycles: compute.max(transfer),
            utilization: layer_utilization(layer, clp),
            offchip_bytes: bytes,
            min_bw_gbs: bw_gbs(bytes, compute, platform),
        });
    }

    let mut clps = Vec::new();
    for g in sol.active_slots() {
        let ids = sol.schedule(g);
        let schedule = sol.schedule_with_tilings(arch, g)?;
        clps.push(ClpReport {
            slot: g,
            clp: sol.clps[g],
            cycles: ids.iter().map(|&i| layers[i].cycles).sum(),
            dsp: clp_dsp(sol.clps[g], p),
            bram: clp_bram(sol.clps[g], &schedule, p)?,
            peak_bw_gbs: ids.iter().map(|&i| layers[i].min_bw_gbs).fold(0.0, f64::max),
            layers: ids,
        });
    }

    let cycles = clps.iter().map(|c| c.cycles).max().unwrap_or(0);
    let busy: f64 = layers.iter().map(|l| l.utilization * l.cycles as f64).sum();
    let total_ops = arch.total_ops();
    let seconds = cycles as f64 / platform.freq_hz();
    let traffic: u64 = layers.iter().map(|l| l.offchip_bytes).sum();
    Ok(CostReport {
        cycles,
        dsp: clps.iter().map(|c| c.dsp).sum(),
        bram: clps.iter().map(|c| c.bram).sum(),
        utilization: busy / (clps.len() as f64 * cycles as f64),
        throughput_img_s: 1.0 / seconds,
        performance_gops: total_ops as f64 / seconds / 1e9,
        execution_time_ms: seconds * 1e3,
        peak_bw_gbs: clps.iter().map(|c| c.peak_bw_gbs).fold(0.0, f64::max),
        average_bw_gbs: bw_gbs(traffic, cycles, platform),
        total_ops,
        layers,
        clps,
    })
}
