//! Type-2 signal detection toolkit: meta-d', M-ratio and the surrounding
//! inference, robustness and simulation machinery for evaluating how well a
//! model's confidence signal tracks its own correctness.

// NaN-aware `!(a < b)` checks and index loops over parallel arrays are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod binning;
pub mod config;
pub mod error;
pub mod estimate;
pub mod inference;
pub mod metad;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod robustness;
pub mod sdt;
pub mod simulator;
pub mod stats;
pub mod trials;

pub use error::{Error, Result};
