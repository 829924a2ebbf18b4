use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::FeatureMap;
use super::NuisanceError;

/// Floor on a linear rate `max(δ, β'φ(w))`.
pub const RATE_FLOOR: f64 = 1e-4;
const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HazardFamily {
    /// Exponential with `ρ(w) = max(δ, β'φ(w))`.
    LinearRate,
    /// Exponential with `ρ(w) = exp(β'φ(w))`.
    LogLinear,
    /// Weibull with `Λ(t|w) = (ρ(w) t)^k`, `ρ(w) = exp(β'φ(w))`.
    Weibull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateLink {
    Linear,
    Log,
}

/// Proportional-scale hazard model `Λ(t|w) = (ρ(w) t)^shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel {
    pub link: RateLink,
    pub shape: f64,
    pub features: FeatureMap,
    pub beta: Vec<f64>,
}

/// The hazard model at a fixed covariate value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardCurve {
    pub rate: f64,
    pub shape: f64,
}

impl HazardCurve {
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if self.shape == 1.0 {
            self.rate * t
        } else {
            (self.rate * t).powf(self.shape)
        }
    }

    pub fn hazard(&self, t: f64) -> f64 {
        if self.shape == 1.0 {
            self.rate
        } else {
            self.shape * self.rate * (self.rate * t.max(0.0)).powf(self.shape - 1.0)
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t)).exp()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        -(-self.cumulative_hazard(t)).exp_m1()
    }

    pub fn density(&self, t: f64) -> f64 {
        self.hazard(t) * self.survival(t)
    }
}

impl HazardModel {
    /// Exponential model with the same rate for every covariate value.
    pub fn constant(rate: f64, covariate_dim: usize) -> Self {
        Self {
            link: RateLink::Linear,
            shape: 1.0,
            features: FeatureMap::intercept(covariate_dim),
            beta: vec![rate],
        }
    }

    /// Linear-rate exponential model with coefficients on the full feature
    /// vector `(1, w, pairwise products)`.
    pub fn linear_rate(beta_full: Vec<f64>, covariate_dim: usize) -> Self {
        assert_eq!(beta_full.len(), FeatureMap::full_len(covariate_dim));
        Self {
            link: RateLink::Linear,
            shape: 1.0,
            features: FeatureMap::full(covariate_dim),
            beta: beta_full,
        }
    }

    pub fn rate(&self, w: &[f64]) -> f64 {
        let eta = self.features.dot(&self.beta, w);
        match self.link {
            RateLink::Linear => eta.max(RATE_FLOOR),
            RateLink::Log => eta.exp(),
        }
    }

    pub fn at(&self, w: &[f64]) -> HazardCurve {
        HazardCurve {
            rate: self.rate(w),
            shape: self.shape,
        }
    }

    pub fn covariate_dim(&self) -> usize {
        self.features.covariate_dim()
    }
}

#[derive(Debug, Clone)]
pub struct HazardFit {
    pub model: HazardModel,
    pub iterations: usize,
    /// No events were observed; the model is the floor rate.
    pub degenerate: bool,
}

struct Problem<'a> {
    x: DMatrix<f64>,
    time: &'a [f64],
    event: Vec<f64>,
}

impl Problem<'_> {
    fn n(&self) -> f64 {
        self.time.len() as f64
    }

    fn eta(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.x * beta
    }
}

/// Damped Newton ascent. `eval` returns `None` for infeasible parameters,
/// otherwise `(loglik, gradient, hessian)`.
fn newton_maximize<F>(
    mut theta: DVector<f64>,
    what: &'static str,
    n: f64,
    eval: F,
) -> Result<(DVector<f64>, usize), NuisanceError>
where
    F: Fn(&DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)>,
{
    let p = theta.len();
    let (mut ll, mut grad, mut hess) = eval(&theta).ok_or_else(|| {
        NuisanceError::InvalidArgument(format!("{what}: infeasible starting point"))
    })?;
    let mut trace = Vec::new();
    for it in 0..MAX_ITER {
        let gmax = grad.amax() / n;
        trace.push(gmax);
        if gmax < GRAD_TOL {
            return Ok((theta, it));
        }
        // Levenberg damping until the negated Hessian is positive definite
        let neg = -&hess;
        let scale = neg.diagonal().amax().max(1e-12);
        let mut lambda = 0.0;
        let step = loop {
            let mut m = neg.clone();
            for j in 0..p {
                m[(j, j)] += lambda + 1e-12 * scale;
            }
            if let Some(ch) = m.cholesky() {
                break ch.solve(&grad);
            }
            lambda = if lambda == 0.0 {
                1e-6 * scale
            } else {
                lambda * 10.0
            };
            if lambda > 1e12 * scale {
                return Err(NuisanceError::NonConvergence { what, trace });
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = &theta + &step * t;
            if let Some((c_ll, c_g, c_h)) = eval(&cand) {
                if c_ll.is_finite() && c_ll >= ll - 1e-13 * ll.abs().max(1.0) {
                    theta = cand;
                    ll = c_ll;
                    grad = c_g;
                    hess = c_h;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // no ascent direction left: accept as converged at working precision
            if gmax < 1e-5 {
                return Ok((theta, it));
            }
            return Err(NuisanceError::NonConvergence { what, trace });
        }
    }
    Err(NuisanceError::NonConvergence { what, trace })
}

/// Right-censored maximum likelihood for `(w, time, event)` rows.
pub fn fit_hazard(
    rows: &[(&[f64], f64, bool)],
    family: HazardFamily,
    features: &FeatureMap,
) -> Result<HazardFit, NuisanceError> {
    let dim = features.covariate_dim();
    if rows.is_empty() {
        return Err(NuisanceError::InsufficientData("no rows to fit".into()));
    }
    let total_time: f64 = rows.iter().map(|r| r.1).sum();
    let events = rows.iter().filter(|r| r.2).count();
    if events == 0 {
        return Err(NuisanceError::DegenerateLikelihood(
            "no events observed".into(),
        ));
    }
    if !(total_time > 0.0) {
        return Err(NuisanceError::DegenerateLikelihood(
            "total follow-up time is zero".into(),
        ));
    }
    let ws: Vec<&[f64]> = rows.iter().map(|r| r.0).collect();
    let features = features.pruned(&ws);
    let prob = Problem {
        x: features.design(&ws),
        time: &rows.iter().map(|r| r.1).collect::<Vec<_>>(),
        event: rows.iter().map(|r| if r.2 { 1.0 } else { 0.0 }).collect(),
    };
    let p = features.len();
    let base_rate = events as f64 / total_time;
    let n = prob.n();

    let fit_log_linear = |prob: &Problem| {
        let mut start = DVector::zeros(p);
        start[0] = base_rate.ln();
        newton_maximize(start, "log-linear exponential fit", n, |beta| {
            let eta = prob.eta(beta);
            let mut ll = 0.0;
            let mut wts = DVector::zeros(prob.x.nrows());
            let mut resid = DVector::zeros(prob.x.nrows());
            for i in 0..eta.len() {
                let rt = eta[i].exp() * prob.time[i];
                ll += prob.event[i] * eta[i] - rt;
                resid[i] = prob.event[i] - rt;
                wts[i] = rt;
            }
            let grad = prob.x.transpose() * resid;
            let hess = -weighted_gram(&prob.x, &wts);
            Some((ll, grad, hess))
        })
    };

    let (model, iterations) = match family {
        HazardFamily::LogLinear => {
            let (beta, it) = fit_log_linear(&prob)?;
            (
                HazardModel {
                    link: RateLink::Log,
                    shape: 1.0,
                    features,
                    beta: beta.iter().copied().collect(),
                },
                it,
            )
        }
        HazardFamily::LinearRate => {
            let mut start = DVector::zeros(p);
            start[0] = base_rate;
            let (beta, it) = newton_maximize(start, "linear-rate exponential fit", n, |beta| {
                let eta = prob.eta(beta);
                if eta.iter().any(|&e| e <= RATE_FLOOR) {
                    return None;
                }
                let mut ll = 0.0;
                let mut wts = DVector::zeros(eta.len());
                let mut resid = DVector::zeros(eta.len());
                for i in 0..eta.len() {
                    let d = prob.event[i];
                    ll += d * eta[i].ln() - eta[i] * prob.time[i];
                    resid[i] = d / eta[i] - prob.time[i];
                    wts[i] = d / (eta[i] * eta[i]);
                }
                let grad = prob.x.transpose() * resid;
                let hess = -weighted_gram(&prob.x, &wts);
                Some((ll, grad, hess))
            })?;
            (
                HazardModel {
                    link: RateLink::Linear,
                    shape: 1.0,
                    features,
                    beta: beta.iter().copied().collect(),
                },
                it,
            )
        }
        HazardFamily::Weibull => {
            let (beta0, _) = fit_log_linear(&prob)?;
            let mut start = DVector::zeros(p + 1);
            start.rows_mut(0, p).copy_from(&beta0);
            let log_t: Vec<f64> = prob.time.iter().map(|&t| t.max(1e-12).ln()).collect();
            let (theta, it) = newton_maximize(start, "Weibull fit", n, |th| {
                let beta = th.rows(0, p).into_owned();
                let k = th[p].exp();
                if !k.is_finite() || k > 1e3 {
                    return None;
                }
                let eta = &prob.x * beta;
                let m = eta.len();
                let mut ll = 0.0;
                let mut g = DVector::zeros(p + 1);
                let mut h = DMatrix::zeros(p + 1, p + 1);
                for i in 0..m {
                    let d = prob.event[i];
                    let z = k * (eta[i] + log_t[i]);
                    let ez = z.exp();
                    if !ez.is_finite() {
                        return None;
                    }
                    ll += d * (th[p] + z - log_t[i]) - ez;
                    let xi = prob.x.row(i);
                    let gb = (d - ez) * k;
                    let gt = d * (1.0 + z) - ez * z;
                    for a in 0..p {
                        g[a] += gb * xi[a];
                        for b in 0..p {
                            h[(a, b)] -= ez * k * k * xi[a] * xi[b];
                        }
                        let cross = k * (d - ez - ez * z) * xi[a];
                        h[(a, p)] += cross;
                        h[(p, a)] += cross;
                    }
                    g[p] += gt;
                    h[(p, p)] += d * z - ez * z * (z + 1.0);
                }
                Some((ll, g, h))
            })?;
            (
                HazardModel {
                    link: RateLink::Log,
                    shape: theta[p].exp(),
                    features,
                    beta: theta.rows(0, p).iter().copied().collect(),
                },
                it,
            )
        }
    };
    debug_assert_eq!(model.covariate_dim(), dim);
    Ok(HazardFit {
        model,
        iterations,
        degenerate: false,
    })
}

fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, wi) in w.iter().enumerate() {
        xw.row_mut(i).scale_mut(*wi);
    }
    x.transpose() * xw
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_identities() {
        let c = HazardCurve {
            rate: 1.3,
            shape: 1.0,
        };
        for &t in &[0.0, 0.2, 1.0, 3.0] {
            assert!(((-c.cumulative_hazard(t)).exp() - (1.0 - c.cdf(t))).abs() < 1e-14);
            assert!((c.density(t) - 1.3 * (-1.3 * t).exp()).abs() < 1e-14);
        }
        let wb = HazardCurve {
            rate: 2.0,
            shape: 1.5,
        };
        // hazard is the derivative of the cumulative hazard
        let t = 0.4;
        let num = (wb.cumulative_hazard(t + 1e-6) - wb.cumulative_hazard(t - 1e-6)) / 2e-6;
        assert!((num - wb.hazard(t)).abs() < 1e-6);
    }

    #[test]
    fn constant_covariate_matches_closed_form() {
        let rows_data: Vec<(Vec<f64>, f64, bool)> = (0..50)
            .map(|i| (vec![1.0], 0.1 + (i as f64 * 0.37) % 2.0, i % 3 != 0))
            .collect();
        let rows: Vec<(&[f64], f64, bool)> = rows_data
            .iter()
            .map(|r| (r.0.as_slice(), r.1, r.2))
            .collect();
        let d: f64 = rows.iter().filter(|r| r.2).count() as f64;
        let y: f64 = rows.iter().map(|r| r.1).sum();
        for fam in [HazardFamily::LinearRate, HazardFamily::LogLinear] {
            let fit = fit_hazard(&rows, fam, &FeatureMap::full(1)).unwrap();
            assert_eq!(fit.model.features.len(), 1);
            assert!((fit.model.rate(&[1.0]) - d / y).abs() < 1e-10);
        }
    }

    #[test]
    fn all_censored_is_degenerate() {
        let w = [0.5];
        let rows = vec![(&w[..], 1.0, false); 5];
        assert!(matches!(
            fit_hazard(&rows, HazardFamily::LogLinear, &FeatureMap::full(1)),
            Err(NuisanceError::DegenerateLikelihood(_))
        ));
    }
}
