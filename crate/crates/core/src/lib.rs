//! Simulation laboratory for local-update methods in heterogeneous
//! distributed optimization.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod diagnostics;
pub mod error;
pub mod fixedpoint;
pub mod numerics;
pub mod online;
pub mod problems;
pub mod streams;

pub use error::{Error, Result};
pub use numerics::{SymMatrix, Vector};
