//! Survival probability estimation fusing a right-censored sample with a
//! current-status sample.
//!
//! The crate is organised bottom-up: [`numerics`] holds grids, quadrature and
//! linear algebra; [`data`] the fused sample; [`nuisance`] the conditional
//! models; [`fredholm`] the integral-equation solvers; [`estimators`] the
//! one-step estimators; [`simulation`] the Monte Carlo harness.

pub mod data;
pub mod error;
pub mod estimators;
pub mod fredholm;
pub mod nuisance;
pub mod numerics;
pub mod simulation;

pub use error::{Error, Result};
