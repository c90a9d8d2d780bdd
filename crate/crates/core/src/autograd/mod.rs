//! Reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
mod ops;
mod params;
mod tape;

pub use gradcheck::{gradcheck, gradcheck_with, GradcheckOptions, GradcheckReport};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Function, Gradients, NodeId, RunningStatUpdate, Tape};
