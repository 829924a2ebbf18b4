//! Data-generating process, true values and the Monte Carlo harness.

mod dgp;
mod runner;

pub use dgp::{generate_dataset, true_phi, true_phi_for, DgpSpec};
pub use runner::{
    ols_line, rate_study, run_replications, run_replications_with, NuisanceMode, RateFit,
    RateStudy, SimCell, SimConfig, SimReport, FAILURE_CAP,
};

use thiserror::Error;

use crate::data::DataError;
use crate::nuisance::NuisanceError;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error("output: {0}")]
    Io(String),
}

impl From<csv::Error> for SimulationError {
    fn from(e: csv::Error) -> Self {
        SimulationError::Io(e.to_string())
    }
}

impl SimulationError {
    pub fn is_validation(&self) -> bool {
        match self {
            SimulationError::InvalidConfig(_) | SimulationError::Data(_) => true,
            SimulationError::Nuisance(e) => e.is_validation(),
            SimulationError::Io(_) => false,
        }
    }
}
