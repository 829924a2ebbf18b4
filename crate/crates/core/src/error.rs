use thiserror::Error;

use crate::data::DataError;
use crate::estimators::EstimatorError;
use crate::fredholm::FredholmError;
use crate::nuisance::NuisanceError;
use crate::numerics::NumericsError;
use crate::simulation::SimulationError;

/// Crate-level error wrapping each module's error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("numerics: {0}")]
    Numerics(#[from] NumericsError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("nuisance: {0}")]
    Nuisance(#[from] NuisanceError),
    #[error("fredholm: {0}")]
    Fredholm(#[from] FredholmError),
    #[error("estimators: {0}")]
    Estimator(#[from] EstimatorError),
    #[error("simulation: {0}")]
    Simulation(#[from] SimulationError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Input problems (bad files, bad arguments, unidentified estimands) as
    /// opposed to numerical failures.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Numerics(e) => matches!(
                e,
                NumericsError::InvalidArgument(_)
                    | NumericsError::LengthMismatch { .. }
                    | NumericsError::Empty
            ),
            Error::Data(_) => true,
            Error::Nuisance(e) => e.is_validation(),
            Error::Fredholm(e) => e.is_validation(),
            Error::Estimator(e) => e.is_validation(),
            Error::Simulation(e) => e.is_validation(),
        }
    }
}
