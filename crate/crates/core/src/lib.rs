// `!(x > 0.0)` is used throughout to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hypergrad;
pub mod linalg;
pub mod operators;
pub mod problems;
pub mod report;
pub mod solvers;

pub use error::{Error, Result};
