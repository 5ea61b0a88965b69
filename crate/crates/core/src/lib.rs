//! Discrete-event simulation of actively quenched single-photon avalanche
//! detectors, with virtual lab instruments, characterization analyses and a
//! time-bin QKD harness.

// validation is written as `!(x > 0.0)` so NaN fails it
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod detector;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod instruments;
pub mod par;
pub mod presets;
pub mod qkd;
pub mod rng;
pub mod scenario;
pub mod source;
pub mod table;
pub mod time;

pub use error::{AnalysisError, RunError, SimError};
pub use rng::RngStream;
pub use time::TimePs;
