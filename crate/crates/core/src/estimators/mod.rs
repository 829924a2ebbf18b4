//! Point estimators, gradients and Wald intervals.

mod crossfit;
mod cs_only;
mod fusion;

pub use crossfit::estimate_cross_fitted;
pub use cs_only::{estimate_cs_only, CsOnlyConfig};
pub use fusion::{FusionEngine, FusionKind};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, FusedSample};
use crate::fredholm::{FredholmError, GridSolver};
use crate::nuisance::{NuisanceBundle, NuisanceError};
use crate::numerics::{normal_quantile, NumericsError};

/// Share of clipped density ratios above which an overlap warning is attached.
pub const OVERLAP_WARNING_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("S(t*) at t* = {t_star} is not identified from current-status data alone (inspection window [{c_lower}, {c_upper}])")]
    NotIdentified {
        t_star: f64,
        c_lower: f64,
        c_upper: f64,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("positivity violation for covariate {covariate:?}: {detail}")]
    Positivity { covariate: Vec<f64>, detail: String },
    #[error("only {succeeded} of {attempted} subsamples could be fitted")]
    Subsampling { succeeded: usize, attempted: usize },
    #[error(transparent)]
    Fredholm(#[from] FredholmError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl EstimatorError {
    pub fn is_validation(&self) -> bool {
        match self {
            Self::InvalidArgument(_) | Self::NotIdentified { .. } | Self::InsufficientData(_) => {
                true
            }
            Self::Data(_) => true,
            Self::Fredholm(e) => e.is_validation(),
            Self::Nuisance(e) => e.is_validation(),
            Self::Numerics(e) => {
                matches!(e, NumericsError::InvalidArgument(_) | NumericsError::Empty)
            }
            Self::Positivity { .. } | Self::Subsampling { .. } => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    #[serde(rename = "cs")]
    CsOnly,
    #[serde(rename = "rc")]
    RcOnly,
    #[serde(rename = "dr")]
    FusionDr,
    #[serde(rename = "eff")]
    FusionEff,
    #[serde(rename = "shift0")]
    Shift0,
    #[serde(rename = "shift1")]
    Shift1,
    NaiveIvw,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::CsOnly => "cs",
            Self::RcOnly => "rc",
            Self::FusionDr => "dr",
            Self::FusionEff => "eff",
            Self::Shift0 => "shift0",
            Self::Shift1 => "shift1",
            Self::NaiveIvw => "naive-ivw",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [
            Self::CsOnly,
            Self::RcOnly,
            Self::FusionDr,
            Self::FusionEff,
            Self::Shift0,
            Self::Shift1,
            Self::NaiveIvw,
        ]
        .into_iter()
        .find(|k| k.label() == s)
    }
}

/// `S(t*)` averaged over the pooled covariate law, or over the law of one
/// source when `target_source` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimand {
    pub t_star: f64,
    pub target_source: Option<u8>,
}

/// The three summands of a gradient value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct GradientTerm {
    pub rc_term: f64,
    pub cs_term: f64,
    pub mu_term: f64,
}

impl GradientTerm {
    pub fn total(&self) -> f64 {
        self.rc_term + self.cs_term + self.mu_term
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    /// Largest certified residual over all integral-equation solves.
    pub max_residual: f64,
    pub regularized_solves: usize,
    pub distinct_covariates: usize,
    pub grid_points: usize,
    /// Share of rows whose density ratio hit the clip bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clipped_fraction: Option<f64>,
    /// Number of subsamples used for the interval (current-status only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsamples_used: Option<usize>,
    pub warnings: Vec<String>,
    /// False when the interval has no asymptotic justification.
    pub asymptotic_guarantee: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateResult {
    pub estimand: Estimand,
    pub kind: EstimatorKind,
    pub point: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    /// Mean of the `μ̂` plug-in part.
    pub plug_in: f64,
    /// Mean of the remaining gradient parts; `point = plug_in + correction`.
    pub correction: f64,
    #[serde(skip)]
    pub gradient_values: Vec<f64>,
    #[serde(skip)]
    pub terms: Vec<GradientTerm>,
    pub nuisance_provenance: Option<String>,
    pub diagnostics: Diagnostics,
}

impl EstimateResult {
    pub fn ci_length(&self) -> f64 {
        self.ci.1 - self.ci.0
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci.0 <= value && value <= self.ci.1
    }
}

/// `point ± z_{1-α/2} se`.
pub fn wald_ci(point: f64, se: f64, alpha: f64) -> Result<(f64, f64), EstimatorError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EstimatorError::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(se >= 0.0) {
        return Err(EstimatorError::InvalidArgument(format!(
            "se must be non-negative, got {se}"
        )));
    }
    if se == 0.0 {
        return Ok((point, point));
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    Ok((point - z * se, point + z * se))
}

/// Settings shared by the gradient-based estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationOptions {
    pub alpha: f64,
    /// Overrides the empirical `n_1 / n`.
    pub pi: Option<f64>,
    /// Points of the uniform base grid before augmentation.
    pub grid_points: usize,
    /// The base grid ends at this multiple of the largest observed time.
    pub grid_extent: f64,
    pub solver: GridSolver,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            pi: None,
            grid_points: 2000,
            grid_extent: 1.25,
            solver: GridSolver::Sweep,
        }
    }
}

impl EstimationOptions {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }
}

fn run_single(
    sample: &FusedSample,
    bundle: &NuisanceBundle,
    t_star: f64,
    kind: FusionKind,
    alpha: f64,
) -> Result<EstimateResult, EstimatorError> {
    let engine = FusionEngine::new(
        sample,
        bundle,
        &[t_star],
        EstimationOptions::with_alpha(alpha),
    )?;
    Ok(engine.estimate(&[kind])?.remove(0))
}

/// AIPCW estimator from the right-censored rows alone.
pub fn estimate_rc_only(
    sample: &FusedSample,
    bundle: &NuisanceBundle,
    t_star: f64,
    alpha: f64,
) -> Result<EstimateResult, EstimatorError> {
    run_single(sample, bundle, t_star, FusionKind::RcOnly, alpha)
}

/// Doubly robust fusion estimator built on `h*`.
pub fn estimate_fusion_dr(
    sample: &FusedSample,
    bundle: &NuisanceBundle,
    t_star: f64,
    alpha: f64,
) -> Result<EstimateResult, EstimatorError> {
    run_single(sample, bundle, t_star, FusionKind::Dr, alpha)
}

/// Efficient fusion estimator built on `η*`.
pub fn estimate_fusion_eff(
    sample: &FusedSample,
    bundle: &NuisanceBundle,
    t_star: f64,
    alpha: f64,
) -> Result<EstimateResult, EstimatorError> {
    run_single(sample, bundle, t_star, FusionKind::Eff, alpha)
}

/// Fusion estimator of `S(t*)` averaged over the covariate law of source
/// `target` (0 = current status, 1 = right censored).
pub fn estimate_covariate_shift(
    sample: &FusedSample,
    bundle: &NuisanceBundle,
    t_star: f64,
    target: u8,
    alpha: f64,
) -> Result<EstimateResult, EstimatorError> {
    if target > 1 {
        return Err(EstimatorError::InvalidArgument(format!(
            "target source must be 0 or 1, got {target}"
        )));
    }
    run_single(sample, bundle, t_star, FusionKind::Shift(target), alpha)
}

/// Inverse-variance weighted average of two estimates of the same estimand.
/// The result carries no gradient and no asymptotic guarantee.
pub fn naive_ivw_combine(
    a: &EstimateResult,
    b: &EstimateResult,
) -> Result<EstimateResult, EstimatorError> {
    if a.estimand != b.estimand {
        return Err(EstimatorError::InvalidArgument(format!(
            "estimands differ: {:?} vs {:?}",
            a.estimand, b.estimand
        )));
    }
    if !(a.se > 0.0) || !(b.se > 0.0) {
        return Err(EstimatorError::InvalidArgument(format!(
            "both standard errors must be positive, got {} and {}",
            a.se, b.se
        )));
    }
    let wa = a.se.powi(-2);
    let wb = b.se.powi(-2);
    let point = (a.point * wa + b.point * wb) / (wa + wb);
    let se = (wa + wb).powf(-0.5);
    let ci = wald_ci(point, se, a.alpha)?;
    Ok(EstimateResult {
        estimand: a.estimand,
        kind: EstimatorKind::NaiveIvw,
        point,
        se,
        ci,
        alpha: a.alpha,
        plug_in: point,
        correction: 0.0,
        gradient_values: Vec::new(),
        terms: Vec::new(),
        nuisance_provenance: a
            .nuisance_provenance
            .clone()
            .or_else(|| b.nuisance_provenance.clone()),
        diagnostics: Diagnostics {
            warnings: vec![format!(
                "combination of {} and {} with no asymptotic guarantee",
                a.kind.label(),
                b.kind.label()
            )],
            asymptotic_guarantee: false,
            ..Diagnostics::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy(point: f64, se: f64) -> EstimateResult {
        EstimateResult {
            estimand: Estimand {
                t_star: 0.7,
                target_source: None,
            },
            kind: EstimatorKind::RcOnly,
            point,
            se,
            ci: wald_ci(point, se, 0.05).unwrap(),
            alpha: 0.05,
            plug_in: point,
            correction: 0.0,
            gradient_values: vec![],
            terms: vec![],
            nuisance_provenance: None,
            diagnostics: Diagnostics::default(),
        }
    }

    #[test]
    fn wald_examples() {
        let (lo, hi) = wald_ci(0.0, 1.0, 0.05).unwrap();
        assert!((hi - 1.959964).abs() < 1e-6 && (lo + 1.959964).abs() < 1e-6);
        assert_eq!(wald_ci(0.3, 0.0, 0.05).unwrap(), (0.3, 0.3));
        // z_{0.84} from a printed standard normal table: 0.9945785
        let (lo, hi) = wald_ci(1.0, 2.0, 0.32).unwrap();
        assert!((hi - (1.0 + 2.0 * 0.994_457_883)).abs() < 1e-6);
        assert!((lo - (1.0 - 2.0 * 0.994_457_883)).abs() < 1e-6);
        assert!(wald_ci(0.0, 1.0, 1.5).is_err());
        assert!(wald_ci(0.0, -1.0, 0.05).is_err());
    }

    #[test]
    fn ivw_identities() {
        let a = dummy(0.4, 0.05);
        let c = naive_ivw_combine(&a, &a).unwrap();
        assert!((c.point - 0.4).abs() < 1e-15);
        assert!((c.se - 0.05 / 2f64.sqrt()).abs() < 1e-15);
        assert!(c.gradient_values.is_empty());
        assert!(!c.diagnostics.asymptotic_guarantee);

        let b = dummy(0.9, f64::INFINITY);
        let c = naive_ivw_combine(&a, &b).unwrap();
        assert!((c.point - 0.4).abs() < 1e-15 && (c.se - 0.05).abs() < 1e-15);

        assert!(naive_ivw_combine(&a, &dummy(0.4, 0.0)).is_err());
        let mut other = dummy(0.4, 0.1);
        other.estimand.t_star = 0.9;
        assert!(naive_ivw_combine(&a, &other).is_err());
    }

    #[test]
    fn kind_labels_round_trip() {
        for k in [
            EstimatorKind::CsOnly,
            EstimatorKind::FusionEff,
            EstimatorKind::Shift1,
            EstimatorKind::NaiveIvw,
        ] {
            assert_eq!(EstimatorKind::from_label(k.label()), Some(k));
            assert_eq!(
                serde_json::to_string(&k).unwrap(),
                format!("\"{}\"", k.label())
            );
        }
    }
}
