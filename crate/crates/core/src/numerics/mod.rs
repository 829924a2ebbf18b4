//! Grids, quadrature, dense linear algebra, isotonic regression and random
//! variates.

mod grid;
mod linalg;
mod normal;
mod pava;
mod rng;
mod summation;

pub use grid::{trapezoid_integral, StepFunctionOnGrid, TimeGrid};
pub use linalg::{
    least_squares, solve_dense_linear, LeastSquaresSolution, LinearSolution, CONDITION_LIMIT,
    RIDGE_SCALE,
};
pub use normal::{normal_cdf, normal_quantile};
pub use pava::pava_isotonic;
pub use rng::{rng_draw, Distribution, RngStream};
pub use summation::{ordered_mean, ordered_sum};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("singular system (condition estimate {condition_estimate:.3e})")]
    Singular { condition_estimate: f64 },
    #[error("empty input")]
    Empty,
}
