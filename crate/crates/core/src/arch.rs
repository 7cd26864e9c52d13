//! CNN architectures, FPGA boards and data precision.
//!
//! Both descriptions are plain JSON files. An architecture is
//! `{"name", "layers": [{"name", "n", "m", "r", "c", "k", "s"}, ...]}` with the
//! layers listed in processing order; a platform is
//! `{"name", "dsp", "bram18k", "bw_gbs", "freq_mhz", "util_cap"}`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of one CONV layer: `N` input maps, `M` output maps of `R x C`
/// pixels, a `K x K` kernel applied with stride `S`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerConfig {
    /// Position in processing order, dense from zero.
    pub id: usize,
    pub name: String,
    pub n_in: u32,
    pub m_out: u32,
    pub rows: u32,
    pub cols: u32,
    pub kernel: u32,
    pub stride: u32,
}

impl LayerConfig {
    pub fn new(id: usize, name: impl Into<String>, shape: [u32; 6]) -> Self {
        let [n_in, m_out, rows, cols, kernel, stride] = shape;
        LayerConfig {
            id,
            name: name.into(),
            n_in,
            m_out,
            rows,
            cols,
            kernel,
            stride,
        }
    }

    /// Multiply and add operations, counted separately.
    pub fn ops(&self) -> u64 {
        2 * self.macs()
    }

    pub fn macs(&self) -> u64 {
        let k = u64::from(self.kernel);
        u64::from(self.n_in) * u64::from(self.m_out) * u64::from(self.rows) * u64::from(self.cols) * k * k
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            ("n", self.n_in),
            ("m", self.m_out),
            ("r", self.rows),
            ("c", self.cols),
            ("k", self.kernel),
            ("s", self.stride),
        ];
        for (field, value) in dims {
            if value == 0 {
                return Err(Error::invalid(
                    "architecture",
                    format!("layer `{}` has {field} = 0", self.name),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    n: i64,
    m: i64,
    r: i64,
    c: i64,
    k: i64,
    s: i64,
}

#[derive(Serialize, Deserialize)]
struct ArchitectureRecord {
    name: String,
    layers: Vec<LayerRecord>,
}

/// An ordered list of CONV layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub name: String,
    pub layers: Vec<LayerConfig>,
}

impl Architecture {
    /// Builds and validates an architecture; ids follow the slice order.
    pub fn new(name: impl Into<String>, layers: Vec<LayerConfig>) -> Result<Self> {
        let layers = layers
            .into_iter()
            .enumerate()
            .map(|(id, layer)| LayerConfig { id, ..layer })
            .collect();
        let arch = Architecture {
            name: name.into(),
            layers,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: ArchitectureRecord = serde_json::from_str(text).map_err(|source| Error::Parse {
            what: "architecture",
            source,
        })?;
        let mut layers = Vec::with_capacity(record.layers.len());
        for (id, l) in record.layers.into_iter().enumerate() {
            let mut shape = [0u32; 6];
            for (slot, (field, value)) in shape
                .iter_mut()
                .zip([("n", l.n), ("m", l.m), ("r", l.r), ("c", l.c), ("k", l.k), ("s", l.s)])
            {
                *slot = u32::try_from(value).map_err(|_| {
                    Error::invalid("architecture", format!("layer `{}` has {field} = {value}", l.name))
                })?;
            }
            layers.push(LayerConfig::new(id, l.name, shape));
        }
        Architecture::new(record.name, layers)
    }

    pub fn to_json(&self) -> String {
        let record = ArchitectureRecord {
            name: self.name.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    name: l.name.clone(),
                    n: l.n_in.into(),
                    m: l.m_out.into(),
                    r: l.rows.into(),
                    c: l.cols.into(),
                    k: l.kernel.into(),
                    s: l.stride.into(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&record).expect("architecture serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read(path.as_ref())?)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn max_n(&self) -> u32 {
        self.layers.iter().map(|l| l.n_in).max().unwrap_or(1)
    }

    pub fn max_m(&self) -> u32 {
        self.layers.iter().map(|l| l.m_out).max().unwrap_or(1)
    }

    /// Total CONV work per image, in operations.
    pub fn total_ops(&self) -> u64 {
        self.layers.iter().map(LayerConfig::ops).sum()
    }

    pub fn layer_by_name(&self, name: &str) -> Option<&LayerConfig> {
        self.layers.iter().find(|l| l.name == name)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("architecture", "no layers"));
        }
        if self.layers.len() > crate::space::MAX_LAYERS {
            return Err(Error::invalid(
                "architecture",
                format!("{} layers exceeds the supported {}", self.layers.len(), crate::space::MAX_LAYERS),
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.id != i {
                return Err(Error::invalid("architecture", "layer ids must be dense and ordered"));
            }
            layer.validate()?;
        }
        Ok(())
    }
}

/// An FPGA board and the share of it the accelerator may use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    pub name: String,
    #[serde(rename = "dsp")]
    pub dsp_total: u64,
    #[serde(rename = "bram18k")]
    pub bram_total: u64,
    /// Off-chip bandwidth in GB/s (10^9 bytes per second).
    #[serde(rename = "bw_gbs")]
    pub bandwidth: f64,
    pub freq_mhz: f64,
    #[serde(default = "default_util_cap")]
    pub util_cap: f64,
}

fn default_util_cap() -> f64 {
    0.8
}

impl Platform {
    pub fn from_json(text: &str) -> Result<Self> {
        let platform: Platform = serde_json::from_str(text).map_err(|source| Error::Parse {
            what: "platform",
            source,
        })?;
        platform.validate()?;
        Ok(platform)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("platform serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read(path.as_ref())?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dsp_total == 0 || self.bram_total == 0 {
            return Err(Error::invalid("platform", "DSP and BRAM counts must be positive"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::invalid("platform", "bandwidth must be positive"));
        }
        if !(self.freq_mhz > 0.0 && self.freq_mhz.is_finite()) {
            return Err(Error::invalid("platform", "frequency must be positive"));
        }
        if !(self.util_cap > 0.0 && self.util_cap <= 1.0) {
            return Err(Error::invalid("platform", "util_cap must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn with_util_cap(mut self, util_cap: f64) -> Self {
        self.util_cap = util_cap;
        self
    }

    pub fn with_bandwidth(mut self, gbs: f64) -> Self {
        self.bandwidth = gbs;
        self
    }

    /// DSP slices available to the accelerator.
    pub fn dsp_max(&self) -> u64 {
        capped(self.dsp_total, self.util_cap)
    }

    /// BRAM18K blocks available to the accelerator.
    pub fn bram_max(&self) -> u64 {
        capped(self.bram_total, self.util_cap)
    }

    /// Off-chip bytes that can move per clock cycle.
    pub fn bytes_per_cycle(&self) -> f64 {
        self.bandwidth * 1e9 / (self.freq_mhz * 1e6)
    }

    pub fn freq_hz(&self) -> f64 {
        self.freq_mhz * 1e6
    }
}

fn capped(total: u64, cap: f64) -> u64 {
    // 0.8 * 2800 lands a hair under 2240.0 in binary floating point.
    (total as f64 * cap + 1e-9).floor() as u64
}

/// Number format shared by input features and weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
    Fxp16,
}

impl Precision {
    pub fn from_width(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(Precision::Fp32),
            16 => Ok(Precision::Fxp16),
            other => Err(Error::UnsupportedPrecision(other)),
        }
    }

    pub fn width_bits(self) -> u32 {
        match self {
            Precision::Fp32 => 32,
            Precision::Fxp16 => 16,
        }
    }

    pub fn bytes(self) -> u64 {
        u64::from(self.width_bits() / 8)
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Fp32 => "fp32",
            Precision::Fxp16 => "fxp16",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fp32" | "32" => Ok(Precision::Fp32),
            "fxp16" | "16" => Ok(Precision::Fxp16),
            other => match other.parse::<u32>() {
                Ok(bits) => Precision::from_width(bits),
                Err(_) => Err(Error::invalid("precision", format!("`{s}`"))),
            },
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Descriptions shipped with the crate.
pub mod bundled {
    use super::{Architecture, Platform};
    use crate::error::{Error, Result};

    const ARCHITECTURES: &[(&str, &str)] = &[
        ("alexnet", include_str!("../data/arch/alexnet.json")),
        ("squeezenet", include_str!("../data/arch/squeezenet.json")),
        ("vgg16", include_str!("../data/arch/vgg16.json")),
        ("googlenet", include_str!("../data/arch/googlenet.json")),
        ("tiny", include_str!("../data/arch/tiny.json")),
    ];

    const PLATFORMS: &[(&str, &str)] = &[
        ("vc707", include_str!("../data/platform/vc707.json")),
        ("vc709", include_str!("../data/platform/vc709.json")),
        ("toy", include_str!("../data/platform/toy.json")),
    ];

    const DESIGNS: &[(&str, &str)] = &[
        ("alexnet_single_vc707", include_str!("../data/design/alexnet_single_vc707.json")),
        ("alexnet_baseline_vc707", include_str!("../data/design/alexnet_baseline_vc707.json")),
        ("alexnet_sa_vc707", include_str!("../data/design/alexnet_sa_vc707.json")),
        ("alexnet_ts_vc707", include_str!("../data/design/alexnet_ts_vc707.json")),
        ("alexnet_single_vc709", include_str!("../data/design/alexnet_single_vc709.json")),
        ("alexnet_baseline_vc709", include_str!("../data/design/alexnet_baseline_vc709.json")),
        ("alexnet_sa_vc709", include_str!("../data/design/alexnet_sa_vc709.json")),
        ("alexnet_ts_vc709", include_str!("../data/design/alexnet_ts_vc709.json")),
    ];

    fn alias(name: &str) -> &str {
        match name {
            "vgg" | "vggnet" => "vgg16",
            "squeezenet1.1" | "squeezenet11" => "squeezenet",
            "485t" | "vx485t" => "vc707",
            "690t" | "vx690t" => "vc709",
            other => other,
        }
    }

    pub fn architecture_names() -> impl Iterator<Item = &'static str> {
        ARCHITECTURES.iter().map(|(n, _)| *n)
    }

    pub fn platform_names() -> impl Iterator<Item = &'static str> {
        PLATFORMS.iter().map(|(n, _)| *n)
    }

    pub fn design_names() -> impl Iterator<Item = &'static str> {
        DESIGNS.iter().map(|(n, _)| *n)
    }

    pub fn architecture(name: &str) -> Result<Architecture> {
        let key = name.to_ascii_lowercase();
        let text = lookup(ARCHITECTURES, alias(&key)).ok_or_else(|| Error::UnknownBundle {
            kind: "architecture",
            name: name.to_string(),
        })?;
        Architecture::from_json(text)
    }

    pub fn platform(name: &str) -> Result<Platform> {
        let key = name.to_ascii_lowercase();
        let text = lookup(PLATFORMS, alias(&key)).ok_or_else(|| Error::UnknownBundle {
            kind: "platform",
            name: name.to_string(),
        })?;
        Platform::from_json(text)
    }

    /// Raw JSON of a bundled design file.
    pub fn design_json(name: &str) -> Result<&'static str> {
        lookup(DESIGNS, name).ok_or_else(|| Error::UnknownBundle {
            kind: "design",
            name: name.to_string(),
        })
    }

    fn lookup(table: &[(&str, &'static str)], name: &str) -> Option<&'static str> {
        table.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
    }
}
