use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::NuisanceError;
use crate::data::{quantile_sorted, FusedSample, InspectionWindow};
use crate::numerics::normal_cdf;

/// Covariate coordinates with at most this many distinct values use exact
/// matching instead of a Gaussian kernel.
pub const DISCRETE_CARDINALITY: usize = 10;
pub const MIN_CURRENT_STATUS_ROWS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectionBandwidths {
    pub c: f64,
    /// One per covariate coordinate (ignored for discrete coordinates).
    pub w: Vec<f64>,
}

/// Conditional law of the inspection time given covariates, supported on
/// the inspection window.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InspectionDensityModel {
    /// Nadaraya-Watson conditional density, Gaussian kernels.
    Kernel(KernelInspection),
    /// `C = lower + scale * Beta(1, b(w))` with `b(w) = β'(1, w)`.
    ShiftedBeta {
        lower: f64,
        scale: f64,
        shape_coef: Vec<f64>,
    },
    Uniform {
        window: InspectionWindow,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelInspection {
    pub window: InspectionWindow,
    pub bandwidths: InspectionBandwidths,
    pub discrete: Vec<bool>,
    #[serde(skip)]
    times: Vec<f64>,
    #[serde(skip)]
    covariates: Vec<Vec<f64>>,
    /// Kernel mass of each inspection time inside the window.
    #[serde(skip)]
    mass: Vec<f64>,
}

fn silverman(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 && h.is_finite() {
        h
    } else {
        1.0
    }
}

impl KernelInspection {
    /// Normalised kernel weights `a_i(w)` such that
    /// `G(c|w) = Σ a_i(w) [Φ((c - C_i)/h) - Φ((c_l - C_i)/h)]`.
    pub fn weights(&self, w: &[f64]) -> Vec<f64> {
        let log_w: Vec<f64> = self
            .covariates
            .iter()
            .map(|wi| {
                let mut s = 0.0;
                for (k, (&a, &b)) in w.iter().zip(wi).enumerate() {
                    if self.discrete[k] {
                        if a != b {
                            return f64::NEG_INFINITY;
                        }
                    } else {
                        let z = (a - b) / self.bandwidths.w[k];
                        s -= 0.5 * z * z;
                    }
                }
                s
            })
            .collect();
        let mx = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = if mx.is_finite() {
            log_w.iter().map(|l| (l - mx).exp()).collect()
        } else {
            // no row shares the discrete coordinates: marginal law
            vec![1.0; self.times.len()]
        };
        let denom: f64 = raw.iter().zip(&self.mass).map(|(r, m)| r * m).sum();
        raw.iter().map(|r| r / denom).collect()
    }

    fn kernel_cdf_increment(&self, i: usize, c: f64) -> f64 {
        let h = self.bandwidths.c;
        let ci = self.times[i];
        normal_cdf((c - ci) / h) - normal_cdf((self.window.c_lower - ci) / h)
    }

    fn cdf(&self, c: f64, w: &[f64]) -> f64 {
        if c <= self.window.c_lower {
            return 0.0;
        }
        if c >= self.window.c_upper {
            return 1.0;
        }
        let a = self.weights(w);
        let g: f64 = a
            .iter()
            .enumerate()
            .map(|(i, ai)| ai * self.kernel_cdf_increment(i, c))
            .sum();
        g.clamp(0.0, 1.0)
    }

    fn density(&self, c: f64, w: &[f64]) -> f64 {
        if !self.window.contains(c) {
            return 0.0;
        }
        let h = self.bandwidths.c;
        let a = self.weights(w);
        let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
        a.iter()
            .zip(&self.times)
            .map(|(ai, ci)| {
                let z = (c - ci) / h;
                ai * norm * (-0.5 * z * z).exp()
            })
            .sum()
    }

    /// `G(points[j] | ws[i])` for every pair; one dense product.
    pub fn cdf_matrix(&self, ws: &[&[f64]], points: &[f64]) -> DMatrix<f64> {
        let n0 = self.times.len();
        let inside: Vec<usize> = (0..points.len())
            .filter(|&j| points[j] > self.window.c_lower && points[j] < self.window.c_upper)
            .collect();
        let mut a = DMatrix::zeros(ws.len(), n0);
        for (r, w) in ws.iter().enumerate() {
            for (i, v) in self.weights(w).into_iter().enumerate() {
                a[(r, i)] = v;
            }
        }
        let d = DMatrix::from_fn(n0, inside.len(), |i, j| {
            self.kernel_cdf_increment(i, points[inside[j]])
        });
        let prod = a * d;
        let mut out = DMatrix::zeros(ws.len(), points.len());
        for (j, &p) in points.iter().enumerate() {
            if p >= self.window.c_upper {
                out.column_mut(j).fill(1.0);
            }
        }
        for (jj, &j) in inside.iter().enumerate() {
            for r in 0..ws.len() {
                out[(r, j)] = prod[(r, jj)].clamp(0.0, 1.0);
            }
        }
        out
    }
}

impl InspectionDensityModel {
    pub fn window(&self) -> InspectionWindow {
        match self {
            Self::Kernel(k) => k.window,
            Self::ShiftedBeta { lower, scale, .. } => InspectionWindow {
                c_lower: *lower,
                c_upper: lower + scale,
            },
            Self::Uniform { window } => *window,
        }
    }

    fn beta_shape(shape_coef: &[f64], w: &[f64]) -> f64 {
        shape_coef[0]
            + shape_coef[1..]
                .iter()
                .zip(w)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    /// `G(c|w)`; zero below the window and one above it.
    pub fn cdf(&self, c: f64, w: &[f64]) -> f64 {
        let win = self.window();
        if c <= win.c_lower {
            return 0.0;
        }
        if c >= win.c_upper {
            return 1.0;
        }
        match self {
            Self::Kernel(k) => k.cdf(c, w),
            Self::ShiftedBeta {
                lower,
                scale,
                shape_coef,
            } => {
                let b = Self::beta_shape(shape_coef, w);
                1.0 - (1.0 - (c - lower) / scale).powf(b)
            }
            Self::Uniform { window } => (c - window.c_lower) / window.width(),
        }
    }

    /// `g(c|w)`; zero outside the window.
    pub fn density(&self, c: f64, w: &[f64]) -> f64 {
        let win = self.window();
        if !win.contains(c) {
            return 0.0;
        }
        match self {
            Self::Kernel(k) => k.density(c, w),
            Self::ShiftedBeta {
                lower,
                scale,
                shape_coef,
            } => {
                let b = Self::beta_shape(shape_coef, w);
                b / scale * (1.0 - (c - lower) / scale).powf(b - 1.0)
            }
            Self::Uniform { window } => 1.0 / window.width(),
        }
    }

    /// `G(points[j] | ws[i])` for every pair.
    pub fn cdf_matrix(&self, ws: &[&[f64]], points: &[f64]) -> DMatrix<f64> {
        match self {
            Self::Kernel(k) => k.cdf_matrix(ws, points),
            _ => DMatrix::from_fn(ws.len(), points.len(), |i, j| self.cdf(points[j], ws[i])),
        }
    }
}

/// Nadaraya-Watson conditional density of `C` given `W` from the
/// current-status rows, renormalised on the window.
pub fn fit_inspection_density(
    sample: &FusedSample,
    window: InspectionWindow,
    bandwidths: Option<InspectionBandwidths>,
) -> Result<InspectionDensityModel, NuisanceError> {
    let rows: Vec<(&[f64], f64)> = sample.current_status().map(|(w, c, _)| (w, c)).collect();
    if rows.len() < MIN_CURRENT_STATUS_ROWS {
        return Err(NuisanceError::InsufficientData(format!(
            "inspection density needs at least {MIN_CURRENT_STATUS_ROWS} current-status rows, got {}",
            rows.len()
        )));
    }
    let d = sample.covariate_dim();
    let times: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let covariates: Vec<Vec<f64>> = rows.iter().map(|r| r.0.to_vec()).collect();
    let discrete: Vec<bool> = (0..d)
        .map(|k| {
            let mut vals: Vec<f64> = covariates.iter().map(|w| w[k]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            vals.len() <= DISCRETE_CARDINALITY
        })
        .collect();
    let bandwidths = match bandwidths {
        Some(b) => {
            if b.w.len() != d || !(b.c > 0.0) || b.w.iter().any(|h| !(*h > 0.0)) {
                return Err(NuisanceError::InvalidArgument(
                    "bandwidths must be positive with one per covariate".into(),
                ));
            }
            b
        }
        None => InspectionBandwidths {
            c: silverman(&times),
            w: (0..d)
                .map(|k| silverman(&covariates.iter().map(|w| w[k]).collect::<Vec<_>>()))
                .collect(),
        },
    };
    let h = bandwidths.c;
    let mass: Vec<f64> = times
        .iter()
        .map(|ci| {
            (normal_cdf((window.c_upper - ci) / h) - normal_cdf((window.c_lower - ci) / h))
                .max(1e-300)
        })
        .collect();
    Ok(InspectionDensityModel::Kernel(KernelInspection {
        window,
        bandwidths,
        discrete,
        times,
        covariates,
        mass,
    }))
}

/// Shape coefficients on `(1, w)` for the shifted-beta family.
pub fn shifted_beta(lower: f64, scale: f64, shape_coef: Vec<f64>) -> InspectionDensityModel {
    InspectionDensityModel::ShiftedBeta {
        lower,
        scale,
        shape_coef,
    }
}
