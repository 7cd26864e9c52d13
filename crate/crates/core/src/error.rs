use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {source}")]
    Parse {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("unsupported precision: {0} bits (expected 16 or 32)")]
    UnsupportedPrecision(u32),

    #[error("unknown bundled {kind} `{name}`")]
    UnknownBundle { kind: &'static str, name: String },

    #[error("a buffer bank needs at least one layer to size it")]
    EmptySchedule,

    #[error("no tiling fits in {budget} BRAMs (minimum is {required})")]
    NoFeasibleTiling { budget: u64, required: u64 },

    #[error("platform cannot host the minimal design: {0}")]
    InfeasiblePlatform(String),

    #[error("design is infeasible: {0}")]
    Infeasible(String),

    #[error("search space has {size} designs, above the cap of {cap}")]
    SpaceTooLarge { size: u128, cap: u128 },

    #[error("instance too large to simulate: {0}")]
    InstanceTooLarge(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
