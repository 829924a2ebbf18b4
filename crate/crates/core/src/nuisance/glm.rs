use nalgebra::{DMatrix, DVector};

use super::NuisanceError;

pub const MAX_NEWTON_ITERATIONS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
/// Coefficient norms beyond this are taken as evidence of separation.
pub const SEPARATION_NORM: f64 = 50.0;

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub beta: DVector<f64>,
    pub iterations: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logistic(x: f64) -> f64 {
    sigmoid(x)
}

fn log_likelihood(design: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| {
            // log(1 + exp(e)) computed stably
            let softplus = if e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            yi * e - softplus
        })
        .sum()
}

/// Maximum-likelihood logistic regression by damped Newton iteration. The
/// convergence criterion is on the per-observation score.
pub fn fit_logistic(design: &DMatrix<f64>, y: &[f64]) -> Result<LogisticFit, NuisanceError> {
    let (n, p) = design.shape();
    if n != y.len() {
        return Err(NuisanceError::InvalidArgument(format!(
            "design has {n} rows but response has {}",
            y.len()
        )));
    }
    if n == 0 || p == 0 {
        return Err(NuisanceError::InsufficientData(
            "empty logistic design".into(),
        ));
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    if ybar <= 0.0 || ybar >= 1.0 {
        return Err(NuisanceError::Separation {
            norm: f64::INFINITY,
        });
    }
    let mut beta = DVector::zeros(p);
    // intercept start when the first column is constant one
    if design.column(0).iter().all(|&v| v == 1.0) {
        beta[0] = (ybar / (1.0 - ybar)).ln();
    }
    let mut ll = log_likelihood(design, y, &beta);
    let mut trace = Vec::new();
    for it in 0..MAX_NEWTON_ITERATIONS {
        let eta = design * &beta;
        let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid = DVector::from_iterator(n, y.iter().zip(&prob).map(|(yi, pi)| yi - pi));
        let grad = design.transpose() * &resid;
        let gmax = grad.amax() / n as f64;
        trace.push(gmax);
        if gmax < GRADIENT_TOLERANCE {
            let worst = y
                .iter()
                .zip(&prob)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if worst < 1e-6 {
                return Err(NuisanceError::Separation { norm: beta.norm() });
            }
            return Ok(LogisticFit {
                beta,
                iterations: it,
            });
        }
        let mut weighted = design.clone();
        for (i, pi) in prob.iter().enumerate() {
            let w = (pi * (1.0 - pi)).max(1e-12);
            weighted.row_mut(i).scale_mut(w);
        }
        let mut info = design.transpose() * weighted;
        let ridge = 1e-10 * info.trace().abs().max(1.0) / p as f64;
        for j in 0..p {
            info[(j, j)] += ridge;
        }
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .or_else(|| info.lu().solve(&grad))
            .ok_or_else(|| NuisanceError::NonConvergence {
                what: "logistic regression",
                trace: trace.clone(),
            })?;
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            let cand_ll = log_likelihood(design, y, &cand);
            if cand_ll >= ll - 1e-12 * ll.abs() || t < 1e-10 {
                beta = cand;
                ll = cand_ll;
                break;
            }
            t *= 0.5;
        }
        let norm = beta.norm();
        if norm > SEPARATION_NORM {
            return Err(NuisanceError::Separation { norm });
        }
    }
    Err(NuisanceError::NonConvergence {
        what: "logistic regression",
        trace,
    })
}
