#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod covariance;
pub mod error;
pub mod functions;
pub mod grid;
pub mod feynman_kac;
pub mod kernel;
pub mod problem;
pub mod quad;
pub mod simulate;

pub use error::{Error, Result};
pub use functions::{HurstFunction, TerminalFn, TimeFn};
pub use kernel::{KernelKind, KernelOptions, VolterraKernel};
