use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{inspection_window, quantile_sorted, FusedSample};
use crate::nuisance::{fit_logistic, logistic, FeatureMap};
use crate::numerics::{ordered_mean, ordered_sum, pava_isotonic, RngStream};

use super::{Diagnostics, Estimand, EstimateResult, EstimatorError, EstimatorKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsOnlyConfig {
    /// Knots of the natural cubic spline in `C`.
    pub knots: usize,
    pub subsamples: usize,
    /// Minimum share of subsamples that must fit for an interval.
    pub min_success_fraction: f64,
    pub seed: u64,
    /// Fail on a logistic fitting error instead of falling back to a
    /// smaller working model.
    pub strict_fit: bool,
}

impl Default for CsOnlyConfig {
    fn default() -> Self {
        Self {
            knots: 4,
            subsamples: 200,
            min_success_fraction: 0.5,
            seed: 0,
            strict_fit: false,
        }
    }
}

/// Natural cubic spline basis (linear term plus `K - 2` truncated-power
/// terms) in `C` rescaled to `[0, 1]`, with knots at spread quantiles.
struct Spline {
    lo: f64,
    span: f64,
    knots: Vec<f64>,
}

impl Spline {
    fn new(sorted: &[f64], count: usize) -> Self {
        let lo = sorted[0];
        let span = (sorted[sorted.len() - 1] - lo).max(1e-12);
        let probs: Vec<f64> = match count {
            0..=2 => vec![],
            3 => vec![0.1, 0.5, 0.9],
            4 => vec![0.05, 0.35, 0.65, 0.95],
            k => (0..k)
                .map(|i| 0.05 + 0.9 * i as f64 / (k - 1) as f64)
                .collect(),
        };
        let mut knots: Vec<f64> = probs
            .iter()
            .map(|&p| (quantile_sorted(sorted, p) - lo) / span)
            .collect();
        knots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        if knots.len() < 3 {
            knots.clear();
        }
        Self { lo, span, knots }
    }

    fn len(&self) -> usize {
        1 + self.knots.len().saturating_sub(2)
    }

    fn eval(&self, c: f64, out: &mut Vec<f64>) {
        let x = (c - self.lo) / self.span;
        out.push(x);
        let k = self.knots.len();
        if k < 3 {
            return;
        }
        let cube = |v: f64| v.max(0.0).powi(3);
        let (tk1, tk) = (self.knots[k - 2], self.knots[k - 1]);
        let scale = (tk - self.knots[0]).powi(2);
        for j in 0..k - 2 {
            let tj = self.knots[j];
            let v = cube(x - tj) - cube(x - tk1) * (tk - tj) / (tk - tk1)
                + cube(x - tk) * (tk1 - tj) / (tk - tk1);
            out.push(v / scale);
        }
    }
}

struct CsRows<'s> {
    w: Vec<&'s [f64]>,
    c: Vec<f64>,
    delta: Vec<f64>,
}

/// Working models tried in order when `strict` is false.
#[derive(Debug, Clone, Copy, PartialEq)]
enum WorkingModel {
    Full,
    SplineOnly,
    Unadjusted,
}

/// `1 - θ̂(t*)` from the rows in `idx`.
fn cs_point(
    rows: &CsRows,
    idx: &[usize],
    t_star: f64,
    knots: usize,
    strict: bool,
) -> Result<(f64, WorkingModel), EstimatorError> {
    let mut last = None;
    for model in [
        WorkingModel::Full,
        WorkingModel::SplineOnly,
        WorkingModel::Unadjusted,
    ] {
        match cs_point_with(rows, idx, t_star, knots, model) {
            Ok(p) => return Ok((p, model)),
            Err(e) if !strict => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one model was tried"))
}

fn cs_point_with(
    rows: &CsRows,
    idx: &[usize],
    t_star: f64,
    knots: usize,
    model: WorkingModel,
) -> Result<f64, EstimatorError> {
    let n = idx.len();
    let events: f64 = idx.iter().map(|&i| rows.delta[i]).sum();
    if events == n as f64 {
        return Ok(0.0);
    }
    if events == 0.0 {
        return Ok(1.0);
    }
    let ws: Vec<&[f64]> = idx.iter().map(|&i| rows.w[i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rows.c[idx[a]].total_cmp(&rows.c[idx[b]]));
    let pos = order.partition_point(|&a| rows.c[idx[a]] <= t_star);
    if model == WorkingModel::Unadjusted {
        let y: Vec<f64> = order.iter().map(|&a| rows.delta[idx[a]]).collect();
        let fitted = pava_isotonic(&y, &vec![1.0; n])?;
        let theta = if pos == 0 { fitted[0] } else { fitted[pos - 1] };
        return Ok(1.0 - theta.clamp(0.0, 1.0));
    }
    let features = match model {
        WorkingModel::Full => FeatureMap::full(ws[0].len()).pruned(&ws),
        _ => FeatureMap::intercept(ws[0].len()),
    };
    let mut sorted_c: Vec<f64> = idx.iter().map(|&i| rows.c[i]).collect();
    sorted_c.sort_by(f64::total_cmp);
    let spline = Spline::new(&sorted_c, knots);
    let p = features.len() + spline.len();
    let row_of = |w: &[f64], c: f64| {
        let mut r = features.eval(w);
        spline.eval(c, &mut r);
        r
    };
    let mut design = DMatrix::zeros(n, p);
    for (r, &i) in idx.iter().enumerate() {
        for (j, v) in row_of(rows.w[i], rows.c[i]).into_iter().enumerate() {
            design[(r, j)] = v;
        }
    }
    let y: Vec<f64> = idx.iter().map(|&i| rows.delta[i]).collect();
    let fit = fit_logistic(&design, &y)?;
    let beta = fit.beta.as_slice();
    let lin =
        |w: &[f64], c: f64| -> f64 { row_of(w, c).iter().zip(beta).map(|(a, b)| a * b).sum() };

    // regression-adjusted pseudo-outcomes, isotonized in c
    let mut pseudo = Vec::with_capacity(n);
    for &a in &order {
        let i = idx[a];
        let c = rows.c[i];
        let marginal: Vec<f64> = ws.iter().map(|w| logistic(lin(w, c))).collect();
        let theta_tilde = ordered_mean(&marginal);
        pseudo.push(rows.delta[i] - logistic(lin(rows.w[i], c)) + theta_tilde);
    }
    let fitted = pava_isotonic(&pseudo, &vec![1.0; n])?;
    let theta = if pos == 0 { fitted[0] } else { fitted[pos - 1] };
    Ok(1.0 - theta.clamp(0.0, 1.0))
}

/// Current-status-only estimator: a logistic working model in `(φ(W),
/// spline(C))` marginalised over the current-status covariates, corrected by
/// its residuals and isotonized in `C`. The interval comes from
/// `m = ⌈n_0^{2/3}⌉`-out-of-`n_0` subsampling with cube-root scaling.
pub fn estimate_cs_only(
    sample: &FusedSample,
    t_star: f64,
    alpha: f64,
    config: &CsOnlyConfig,
) -> Result<EstimateResult, EstimatorError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EstimatorError::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let n0 = sample.n_current_status();
    if n0 < 2 {
        return Err(EstimatorError::InsufficientData(format!(
            "need at least 2 current-status rows, got {n0}"
        )));
    }
    let window = inspection_window(sample, (0.0, 1.0))?;
    if !(t_star >= window.c_lower && t_star <= window.c_upper) {
        return Err(EstimatorError::NotIdentified {
            t_star,
            c_lower: window.c_lower,
            c_upper: window.c_upper,
        });
    }
    let mut rows = CsRows {
        w: Vec::with_capacity(n0),
        c: Vec::with_capacity(n0),
        delta: Vec::with_capacity(n0),
    };
    for (w, c, d) in sample.current_status() {
        rows.w.push(w);
        rows.c.push(c);
        rows.delta.push(if d { 1.0 } else { 0.0 });
    }
    let all: Vec<usize> = (0..n0).collect();
    let (point, model) = cs_point(&rows, &all, t_star, config.knots, config.strict_fit)?;

    let m = ((n0 as f64).powf(2.0 / 3.0).ceil() as usize).clamp(2, n0);
    let mut stream = RngStream::new(config.seed, 0x5eedc5);
    let mut stats = Vec::with_capacity(config.subsamples);
    let mut perm: Vec<usize> = (0..n0).collect();
    for _ in 0..config.subsamples {
        // partial Fisher-Yates: the first m entries form the subsample
        for j in 0..m {
            let k = j + stream.index(n0 - j);
            perm.swap(j, k);
        }
        let mut sub = perm[..m].to_vec();
        sub.sort_unstable();
        if let Ok((p, _)) = cs_point(&rows, &sub, t_star, config.knots, false) {
            stats.push((m as f64).cbrt() * (p - point));
        }
    }
    let needed = (config.min_success_fraction * config.subsamples as f64).ceil() as usize;
    if stats.len() < needed.max(2) {
        return Err(EstimatorError::Subsampling {
            succeeded: stats.len(),
            attempted: config.subsamples,
        });
    }
    stats.sort_by(f64::total_cmp);
    let rate = (n0 as f64).cbrt();
    let q_lo = quantile_sorted(&stats, alpha / 2.0);
    let q_hi = quantile_sorted(&stats, 1.0 - alpha / 2.0);
    let lower = (point - q_hi / rate).clamp(0.0, 1.0).min(point);
    let upper = (point - q_lo / rate).clamp(0.0, 1.0).max(point);
    let mean = ordered_mean(&stats);
    let dev: Vec<f64> = stats.iter().map(|s| (s - mean).powi(2)).collect();
    let se = (ordered_sum(&dev) / (stats.len() as f64 - 1.0)).sqrt() / rate;

    Ok(EstimateResult {
        estimand: Estimand {
            t_star,
            target_source: None,
        },
        kind: EstimatorKind::CsOnly,
        point,
        se,
        ci: (lower, upper),
        alpha,
        plug_in: point,
        correction: 0.0,
        gradient_values: Vec::new(),
        terms: Vec::new(),
        nuisance_provenance: None,
        diagnostics: Diagnostics {
            subsamples_used: Some(stats.len()),
            warnings: match model {
                WorkingModel::Full => Vec::new(),
                WorkingModel::SplineOnly => {
                    vec!["covariate terms dropped from the working model after a failed fit".into()]
                }
                WorkingModel::Unadjusted => vec![
                    "working model dropped after failed fits; unadjusted isotonic estimate".into(),
                ],
            },
            asymptotic_guarantee: false,
            ..Diagnostics::default()
        },
    })
}
