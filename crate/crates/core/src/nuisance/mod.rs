//! Conditional event, censoring, inspection and source models.

mod features;
mod glm;
mod hazard;
mod inspection;
mod ratio;

pub use features::FeatureMap;
pub use glm::{fit_logistic, logistic, LogisticFit, SEPARATION_NORM};
pub use hazard::{
    fit_hazard, HazardCurve, HazardFamily, HazardFit, HazardModel, RateLink, RATE_FLOOR,
};
pub use inspection::{
    fit_inspection_density, shifted_beta, InspectionBandwidths, InspectionDensityModel,
    KernelInspection, DISCRETE_CARDINALITY,
};
pub use ratio::{fit_density_ratio, DensityRatioModel, W1Law, DEFAULT_OVERLAP_BOUND};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FusedSample, InspectionWindow};
use crate::numerics::StepFunctionOnGrid;
use crate::simulation::DgpSpec;

/// Clip bound for `F` inside the inspection window.
pub const ZETA_NUM: f64 = 1e-4;
/// Floor for `Γ` on `[0, max(c_u, t*)]`.
pub const EPSILON_GAMMA: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NuisanceError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate likelihood: {0}")]
    DegenerateLikelihood(String),
    #[error("{what} did not converge (score sup-norm trace: {trace:?})")]
    NonConvergence { what: &'static str, trace: Vec<f64> },
    #[error("perfect separation suspected (coefficient norm {norm:.1}); consider clipping-only fallback")]
    Separation { norm: f64 },
    #[error("positivity violation: {0}")]
    Positivity(String),
}

impl NuisanceError {
    pub fn is_validation(&self) -> bool {
        matches!(self, Self::InvalidArgument(_) | Self::InsufficientData(_))
    }
}

/// `F_{T|W}` and the quantities derived from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalEventModel {
    pub hazard: HazardModel,
    /// Clip bound applied by [`ConditionalEventModel::clipped_cdf`].
    pub zeta: f64,
}

impl ConditionalEventModel {
    pub fn new(hazard: HazardModel) -> Self {
        Self {
            hazard,
            zeta: ZETA_NUM,
        }
    }

    pub fn at(&self, w: &[f64]) -> HazardCurve {
        self.hazard.at(w)
    }

    pub fn cdf(&self, t: f64, w: &[f64]) -> f64 {
        self.at(w).cdf(t)
    }

    pub fn density(&self, t: f64, w: &[f64]) -> f64 {
        self.at(w).density(t)
    }

    pub fn survival(&self, t: f64, w: &[f64]) -> f64 {
        self.at(w).survival(t)
    }

    pub fn hazard_rate(&self, t: f64, w: &[f64]) -> f64 {
        self.at(w).hazard(t)
    }

    pub fn cumulative_hazard(&self, t: f64, w: &[f64]) -> f64 {
        self.at(w).cumulative_hazard(t)
    }

    /// `F` clipped to `[ζ, 1 - ζ]`.
    pub fn clipped_cdf(&self, t: f64, w: &[f64]) -> f64 {
        self.cdf(t, w).clamp(self.zeta, 1.0 - self.zeta)
    }
}

/// `Γ(t|w) = P(R >= t | W = w)` and the censoring hazard.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensoringModel {
    pub hazard: HazardModel,
    pub epsilon: f64,
    /// Set when the fit saw no censored observations.
    pub degenerate: bool,
}

impl CensoringModel {
    pub fn new(hazard: HazardModel) -> Self {
        Self {
            hazard,
            epsilon: EPSILON_GAMMA,
            degenerate: false,
        }
    }

    /// No censoring at all: `Γ ≡ 1`.
    pub fn none(covariate_dim: usize) -> Self {
        Self {
            hazard: HazardModel {
                link: RateLink::Log,
                shape: 1.0,
                features: FeatureMap::intercept(covariate_dim),
                beta: vec![f64::NEG_INFINITY],
            },
            epsilon: EPSILON_GAMMA,
            degenerate: true,
        }
    }

    pub fn gamma(&self, t: f64, w: &[f64]) -> f64 {
        self.hazard.at(w).survival(t)
    }

    pub fn gamma_floored(&self, t: f64, w: &[f64]) -> f64 {
        self.gamma(t, w).max(self.epsilon)
    }

    pub fn hazard_rate(&self, t: f64, w: &[f64]) -> f64 {
        self.hazard.at(w).hazard(t)
    }

    pub fn cumulative_hazard(&self, t: f64, w: &[f64]) -> f64 {
        self.hazard.at(w).cumulative_hazard(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MisspecifiedPart {
    /// Event model replaced by a covariate-free exponential.
    Event,
    /// Inspection law replaced by a uniform and censoring by a wrong constant.
    InspectionCensoring,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Fitted {
        event: HazardFamily,
        censoring: HazardFamily,
    },
    Oracle,
    Misspecified {
        part: MisspecifiedPart,
    },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Fitted { event, censoring } => {
                write!(f, "fitted(event={event:?}, censoring={censoring:?})")
            }
            Provenance::Oracle => write!(f, "oracle"),
            Provenance::Misspecified { part } => match part {
                MisspecifiedPart::Event => write!(f, "misspec-event"),
                MisspecifiedPart::InspectionCensoring => write!(f, "misspec-gR"),
            },
        }
    }
}

/// Everything the gradients need.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuisanceBundle {
    pub event: ConditionalEventModel,
    pub censoring: CensoringModel,
    pub inspection: InspectionDensityModel,
    pub ratio: Option<DensityRatioModel>,
    pub provenance: Provenance,
}

impl NuisanceBundle {
    pub fn window(&self) -> InspectionWindow {
        self.inspection.window()
    }

    pub fn covariate_dim(&self) -> usize {
        self.event.hazard.covariate_dim()
    }

    pub fn with_ratio(mut self, ratio: DensityRatioModel) -> Self {
        self.ratio = Some(ratio);
        self
    }
}

/// Fits the event model from the right-censored rows.
pub fn fit_event_model(
    sample: &FusedSample,
    family: HazardFamily,
) -> Result<ConditionalEventModel, NuisanceError> {
    let rows: Vec<(&[f64], f64, bool)> = sample.right_censored().collect();
    let fit = fit_hazard(&rows, family, &FeatureMap::full(sample.covariate_dim()))?;
    Ok(ConditionalEventModel::new(fit.model))
}

/// Fits the censoring model with censoring as the event. Without any
/// censored rows the model is the floor rate and is flagged degenerate.
pub fn fit_censoring_model(
    sample: &FusedSample,
    family: HazardFamily,
) -> Result<CensoringModel, NuisanceError> {
    let rows: Vec<(&[f64], f64, bool)> = sample
        .right_censored()
        .map(|(w, y, d)| (w, y, !d))
        .collect();
    if rows.is_empty() {
        return Err(NuisanceError::InsufficientData(
            "no right-censored rows".into(),
        ));
    }
    if rows.iter().all(|r| !r.2) {
        let mut m = CensoringModel::new(HazardModel::constant(RATE_FLOOR, sample.covariate_dim()));
        m.degenerate = true;
        log::warn!("no censored observations; censoring model set to the floor rate");
        return Ok(m);
    }
    let fit = fit_hazard(&rows, family, &FeatureMap::full(sample.covariate_dim()))?;
    Ok(CensoringModel::new(fit.model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NuisanceConfig {
    pub event_family: HazardFamily,
    pub censoring_family: HazardFamily,
    pub bandwidths: Option<InspectionBandwidths>,
    pub fit_ratio: bool,
    pub ratio_bound: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            event_family: HazardFamily::LinearRate,
            censoring_family: HazardFamily::LinearRate,
            bandwidths: None,
            fit_ratio: false,
            ratio_bound: DEFAULT_OVERLAP_BOUND,
        }
    }
}

/// Fits every component from the sample.
pub fn fit_bundle(
    sample: &FusedSample,
    window: InspectionWindow,
    config: &NuisanceConfig,
) -> Result<NuisanceBundle, NuisanceError> {
    let event = fit_event_model(sample, config.event_family)?;
    let censoring = fit_censoring_model(sample, config.censoring_family)?;
    let inspection = fit_inspection_density(sample, window, config.bandwidths.clone())?;
    let ratio = if config.fit_ratio {
        Some(fit_density_ratio(sample, config.ratio_bound)?)
    } else {
        None
    };
    Ok(NuisanceBundle {
        event,
        censoring,
        inspection,
        ratio,
        provenance: Provenance::Fitted {
            event: config.event_family,
            censoring: config.censoring_family,
        },
    })
}

/// The true nuisances of a parametric data-generating process.
pub fn oracle_bundle(dgp: &DgpSpec) -> NuisanceBundle {
    let d = dgp.covariate_dim();
    NuisanceBundle {
        event: ConditionalEventModel::new(HazardModel::linear_rate(dgp.event_rate.clone(), d)),
        censoring: CensoringModel::new(HazardModel::linear_rate(dgp.censoring_rate.clone(), d)),
        inspection: shifted_beta(
            dgp.inspection_lower,
            dgp.inspection_scale,
            dgp.inspection_shape.clone(),
        ),
        ratio: Some(DensityRatioModel::Exact {
            cs_w1: dgp.cs_w1,
            bound: DEFAULT_OVERLAP_BOUND,
        }),
        provenance: Provenance::Oracle,
    }
}

/// Multiplier applied to the true mean rate for a misspecified constant.
pub const MISSPECIFIED_RATE_FACTOR: f64 = 0.6;

/// Oracle bundle with one part deliberately replaced.
pub fn misspecified_bundle(dgp: &DgpSpec, part: MisspecifiedPart) -> NuisanceBundle {
    let mut b = oracle_bundle(dgp);
    let d = dgp.covariate_dim();
    match part {
        MisspecifiedPart::Event => {
            let rate = MISSPECIFIED_RATE_FACTOR * dgp.mean_event_rate();
            b.event = ConditionalEventModel::new(HazardModel::constant(rate, d));
        }
        MisspecifiedPart::InspectionCensoring => {
            b.inspection = InspectionDensityModel::Uniform {
                window: b.inspection.window(),
            };
            let rate = MISSPECIFIED_RATE_FACTOR * dgp.mean_censoring_rate();
            b.censoring = CensoringModel::new(HazardModel::constant(rate, d));
        }
    }
    b.provenance = Provenance::Misspecified { part };
    b
}

/// `E[h(T) | T >= u, W = w]` for `h` read as the left-continuous step
/// function taking value `h_j` on `(u_{j-1}, u_j]`; mass beyond the last grid
/// point is carried by the last value.
pub fn truncated_expectation(
    h: &StepFunctionOnGrid,
    event: &ConditionalEventModel,
    u: f64,
    w: &[f64],
) -> Result<f64, NuisanceError> {
    let grid = h.grid();
    if !grid.contains(u) {
        return Err(NuisanceError::InvalidArgument(format!(
            "u = {u} outside the grid span [0, {}]",
            grid.t_max()
        )));
    }
    let curve = event.at(w);
    let s_u = curve.survival(u);
    if s_u < event.zeta {
        return Err(NuisanceError::Positivity(format!(
            "S({u}|w) = {s_u:.3e} below {}",
            event.zeta
        )));
    }
    let pts = grid.points();
    let vals = h.values();
    let start = grid.cell_end(u);
    let mut acc = 0.0;
    let mut prev_f = curve.cdf(u);
    for j in start..pts.len() {
        let f = curve.cdf(pts[j]);
        acc += vals[j] * (f - prev_f);
        prev_f = f;
    }
    acc += vals[pts.len() - 1] * curve.survival(grid.t_max());
    Ok(acc / s_u)
}
