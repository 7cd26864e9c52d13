//! Analytical cost model and design-space exploration for FPGA CNN
//! accelerators built from multiple convolutional layer processors (CLPs).
//!
//! A design partitions the board's DSP and BRAM budget among several CLPs,
//! each a `Tn x Tm` array of multiply-accumulate units with double-buffered
//! input, weight and output banks. Every CONV layer is bound to exactly one
//! CLP; all CLPs run concurrently, so a design's cost is the cycle count of its
//! slowest CLP.
//!
//! The crate is organised bottom-up:
//!
//! - [`arch`]: layer shapes, boards, numeric precision, and the bundled
//!   network/board descriptions.
//! - [`cost`]: the closed-form cycle, DSP, BRAM, bandwidth and utilization
//!   model.
//! - [`space`]: the solution encoding, the inner tiling optimizer, feasibility
//!   and cost evaluation, and the neighbourhood moves shared by both searches.
//! - [`sa`] and [`ts`]: simulated annealing and tabu search.
//! - [`oracle`]: exhaustive search for toy instances and a loop-nest
//!   simulator that replays the tiled convolution schedule.

pub mod arch;
pub mod cost;
mod error;
pub mod oracle;
pub mod sa;
pub mod space;
pub mod ts;

pub use arch::{Architecture, LayerConfig, Platform, Precision};
pub use cost::{BufferKind, ClpConfig, CostReport, Tiling};
pub use error::{Error, Result};
pub use space::{Cost, Evaluation, Evaluator, Move, Solution};
