use serde::{Deserialize, Serialize};

use super::features::FeatureMap;
use super::glm::{fit_logistic, logistic};
use super::NuisanceError;
use crate::data::FusedSample;

/// Default overlap bound: ratios are clipped to `[1/c0, c0]`.
pub const DEFAULT_OVERLAP_BOUND: f64 = 20.0;

/// How the first covariate is distributed in the current-status arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum W1Law {
    /// Uniform(0, 1), the same as the right-censored arm.
    #[default]
    Uniform,
    /// Density `2w` on (0, 1).
    Linear,
}

/// Density ratio `r(w) = dP_{1,W}/dP_{0,W}(w)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensityRatioModel {
    /// Logistic regression of `S` on `φ(w)`, converted to a ratio by the
    /// sample odds.
    Logistic {
        features: FeatureMap,
        beta: Vec<f64>,
        /// `n_0 / n_1`
        odds_scale: f64,
        bound: f64,
    },
    /// Exact ratio for a known covariate law.
    Exact { cs_w1: W1Law, bound: f64 },
}

impl DensityRatioModel {
    pub fn bound(&self) -> f64 {
        match self {
            Self::Logistic { bound, .. } | Self::Exact { bound, .. } => *bound,
        }
    }

    /// Ratio before clipping.
    pub fn raw_ratio(&self, w: &[f64]) -> f64 {
        match self {
            Self::Logistic {
                features,
                beta,
                odds_scale,
                ..
            } => {
                let p = logistic(features.dot(beta, w));
                p / (1.0 - p) * odds_scale
            }
            Self::Exact { cs_w1, .. } => match cs_w1 {
                W1Law::Uniform => 1.0,
                W1Law::Linear => 1.0 / (2.0 * w[0]),
            },
        }
    }

    /// `r_{1/0}(w)` clipped to `[1/c0, c0]`.
    pub fn ratio(&self, w: &[f64]) -> f64 {
        let c0 = self.bound();
        let r = self.raw_ratio(w);
        if r.is_nan() {
            return 1.0;
        }
        r.clamp(1.0 / c0, c0)
    }

    /// `r_{0/1}(w) = 1 / r_{1/0}(w)`.
    pub fn inverse_ratio(&self, w: &[f64]) -> f64 {
        1.0 / self.ratio(w)
    }

    pub fn is_clipped(&self, w: &[f64]) -> bool {
        let c0 = self.bound();
        let r = self.raw_ratio(w);
        !(r > 1.0 / c0 && r < c0)
    }
}

/// Logistic regression of the source indicator on `φ(w)`.
pub fn fit_density_ratio(
    sample: &FusedSample,
    bound: f64,
) -> Result<DensityRatioModel, NuisanceError> {
    let n1 = sample.n_right_censored();
    let n0 = sample.n_current_status();
    if n1 == 0 || n0 == 0 {
        return Err(NuisanceError::InsufficientData(
            "density ratio needs both sources".into(),
        ));
    }
    if !(bound >= 1.0) {
        return Err(NuisanceError::InvalidArgument(format!(
            "overlap bound must be at least 1, got {bound}"
        )));
    }
    let ws: Vec<&[f64]> = sample
        .observations()
        .iter()
        .map(|o| o.covariates.as_slice())
        .collect();
    let y: Vec<f64> = sample
        .observations()
        .iter()
        .map(|o| if o.is_right_censored() { 1.0 } else { 0.0 })
        .collect();
    let features = FeatureMap::full(sample.covariate_dim()).pruned(&ws);
    let fit = fit_logistic(&features.design(&ws), &y)?;
    Ok(DensityRatioModel::Logistic {
        features,
        beta: fit.beta.iter().copied().collect(),
        odds_scale: n0 as f64 / n1 as f64,
        bound,
    })
}
