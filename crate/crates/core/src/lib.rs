// `!(v > 0.0)` is the NaN-rejecting positivity check used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod data;
pub mod error;
pub mod estimators;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod meantest;
pub mod montecarlo;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod test1;
pub mod test2;

pub use error::{Error, Result, Stage};
