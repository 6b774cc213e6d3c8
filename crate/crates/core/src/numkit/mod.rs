//! Scalar, vector and small-matrix kernels shared by every other module.

mod matrix;
mod rng;
mod stats;
mod vector;

pub use matrix::{solve_dense, DenseMatrix, PIVOT_TOLERANCE};
pub use rng::{gaussian_sample, RngStream};
pub use stats::{coordinate_median, median_in_place, percentile};
pub use vector::{l2_norm, mean, ParamVector};
