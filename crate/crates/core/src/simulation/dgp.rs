use serde::{Deserialize, Serialize};

use crate::data::{FusedObservation, FusedSample};
use crate::nuisance::{FeatureMap, W1Law};
use crate::numerics::{rng_draw, Distribution, RngStream};

use super::SimulationError;

/// Two-covariate data-generating process: `W1 ~ U(0,1)`, `W2 ~ Bern(p)`,
/// exponential event and censoring times with linear rates, and inspection
/// times `C = lower + scale * Beta(1, b(W))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    /// Linear event rate on `(1, w1, w2, w1 w2)`.
    pub event_rate: Vec<f64>,
    /// Linear censoring rate on `(1, w1, w2, w1 w2)`.
    pub censoring_rate: Vec<f64>,
    pub inspection_lower: f64,
    pub inspection_scale: f64,
    /// Beta shape `b(w)` on `(1, w1, w2)`.
    pub inspection_shape: Vec<f64>,
    pub w2_probability: f64,
    /// Law of `W1` in the current-status arm.
    #[serde(default)]
    pub cs_w1: W1Law,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self::benchmark()
    }
}

impl DgpSpec {
    /// The standard two-arm benchmark design.
    pub fn benchmark() -> Self {
        Self {
            event_rate: vec![0.8, 0.4, 0.0, 0.2],
            censoring_rate: vec![1.5, -0.2, -0.5, 0.0],
            inspection_lower: 0.5,
            inspection_scale: 0.5,
            inspection_shape: vec![0.75, 0.5, 0.1],
            w2_probability: 0.5,
            cs_w1: W1Law::Uniform,
        }
    }

    /// The benchmark design with `W1` drawn from density `2w` in the
    /// current-status arm.
    pub fn benchmark_shifted() -> Self {
        Self {
            cs_w1: W1Law::Linear,
            ..Self::benchmark()
        }
    }

    /// Looks up a named design: `benchmark` or `benchmark-shift`.
    pub fn by_id(id: &str) -> Option<Self> {
        match id {
            "benchmark" => Some(Self::benchmark()),
            "benchmark-shift" => Some(Self::benchmark_shifted()),
            _ => None,
        }
    }

    pub fn covariate_dim(&self) -> usize {
        2
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let full = FeatureMap::full_len(2);
        let bad = |m: &str| Err(SimulationError::InvalidConfig(m.to_string()));
        if self.event_rate.len() != full || self.censoring_rate.len() != full {
            return bad("rate coefficients must have 4 entries (1, w1, w2, w1 w2)");
        }
        if self.inspection_shape.len() != 3 {
            return bad("inspection shape must have 3 entries (1, w1, w2)");
        }
        if !(0.0..=1.0).contains(&self.w2_probability) {
            return bad("w2_probability must lie in [0, 1]");
        }
        if !(self.inspection_lower >= 0.0 && self.inspection_scale > 0.0) {
            return bad("inspection support must be a non-empty interval in [0, inf)");
        }
        // rates and shape are linear in w1 for fixed w2, so corners suffice
        for w1 in [0.0, 1.0] {
            for w2 in [0.0, 1.0] {
                let w = [w1, w2];
                if !(self.event_rate_at(&w) > 0.0) || !(self.censoring_rate_at(&w) > 0.0) {
                    return bad("rates must be positive on the covariate support");
                }
                if !(self.inspection_shape_at(&w) > 0.0) {
                    return bad("inspection shape must be positive on the covariate support");
                }
            }
        }
        Ok(())
    }

    pub fn event_rate_at(&self, w: &[f64]) -> f64 {
        FeatureMap::full(2).dot(&self.event_rate, w)
    }

    pub fn censoring_rate_at(&self, w: &[f64]) -> f64 {
        FeatureMap::full(2).dot(&self.censoring_rate, w)
    }

    pub fn inspection_shape_at(&self, w: &[f64]) -> f64 {
        self.inspection_shape[0] + self.inspection_shape[1] * w[0] + self.inspection_shape[2] * w[1]
    }

    fn mean_linear(&self, beta: &[f64]) -> f64 {
        let p = self.w2_probability;
        beta[0] + 0.5 * beta[1] + p * beta[2] + 0.5 * p * beta[3]
    }

    /// `E[ρ_T(W)]` with `W1 ~ U(0,1)`.
    pub fn mean_event_rate(&self) -> f64 {
        self.mean_linear(&self.event_rate)
    }

    /// `E[ρ_R(W)]` with `W1 ~ U(0,1)`.
    pub fn mean_censoring_rate(&self) -> f64 {
        self.mean_linear(&self.censoring_rate)
    }

    /// Number of right-censored rows out of `n`: `round(n / 3)`.
    pub fn n_right_censored(n: usize) -> usize {
        ((n as f64) / 3.0).round() as usize
    }

    fn draw_w(&self, stream: &mut RngStream, law: W1Law) -> Vec<f64> {
        let u = stream.uniform();
        let w1 = match law {
            W1Law::Uniform => u,
            W1Law::Linear => u.sqrt(),
        };
        let w2 = rng_draw(
            &Distribution::Bernoulli {
                p: self.w2_probability,
            },
            stream,
        )
        .expect("validated probability");
        vec![w1, w2]
    }

    /// One right-censored record.
    pub fn draw_right_censored(&self, stream: &mut RngStream) -> FusedObservation {
        let w = self.draw_w(stream, W1Law::Uniform);
        let t = rng_draw(
            &Distribution::Exponential {
                rate: self.event_rate_at(&w),
            },
            stream,
        )
        .expect("positive rate");
        let r = rng_draw(
            &Distribution::Exponential {
                rate: self.censoring_rate_at(&w),
            },
            stream,
        )
        .expect("positive rate");
        FusedObservation::right_censored(w, t.min(r), t <= r)
    }

    /// One current-status record.
    pub fn draw_current_status(&self, stream: &mut RngStream) -> FusedObservation {
        let w = self.draw_w(stream, self.cs_w1);
        let t = rng_draw(
            &Distribution::Exponential {
                rate: self.event_rate_at(&w),
            },
            stream,
        )
        .expect("positive rate");
        let b = rng_draw(
            &Distribution::Beta {
                a: 1.0,
                b: self.inspection_shape_at(&w),
            },
            stream,
        )
        .expect("positive shape");
        let c = self.inspection_lower + self.inspection_scale * b;
        FusedObservation::current_status(w, c, t <= c)
    }
}

/// Draws `n` records; the first `round(n/3)` are right-censored.
pub fn generate_dataset(
    dgp: &DgpSpec,
    n: usize,
    stream: &mut RngStream,
) -> Result<FusedSample, SimulationError> {
    dgp.validate()?;
    if n < 3 {
        return Err(SimulationError::InvalidConfig(format!(
            "need n >= 3 for both sources, got {n}"
        )));
    }
    let n1 = DgpSpec::n_right_censored(n);
    let mut obs = Vec::with_capacity(n);
    for i in 0..n {
        obs.push(if i < n1 {
            dgp.draw_right_censored(stream)
        } else {
            dgp.draw_current_status(stream)
        });
    }
    Ok(FusedSample::new(obs)?)
}

/// `Σ_k a_k e^{-b_k t}` integrated against `U(0,1)`:
/// `(1 - e^{-s t}) / (s t)` for slope `s`.
fn uniform_exp_mean(intercept: f64, slope: f64, t: f64) -> f64 {
    let base = (-intercept * t).exp();
    let x = slope * t;
    if x.abs() < 1e-12 {
        base
    } else {
        base * (-(-x).exp_m1()) / x
    }
}

/// Closed-form `E[S(t*|W)]` with `W1` uniform (or density `2w` when
/// `population_w1` is `Linear`), mixing over `W2`.
pub fn true_phi_for(dgp: &DgpSpec, t_star: f64, population_w1: W1Law) -> f64 {
    if t_star <= 0.0 {
        return 1.0;
    }
    let p = dgp.w2_probability;
    let b = &dgp.event_rate;
    let strata = [(0.0, 1.0 - p), (1.0, p)];
    strata
        .iter()
        .map(|&(w2, prob)| {
            let a = b[0] + b[2] * w2;
            let s = b[1] + b[3] * w2;
            let m = match population_w1 {
                W1Law::Uniform => uniform_exp_mean(a, s, t_star),
                W1Law::Linear => {
                    // E[e^{-(a + s w) t}] with density 2w
                    let x = s * t_star;
                    let base = (-a * t_star).exp();
                    if x.abs() < 1e-8 {
                        base * (1.0 - 2.0 * x / 3.0)
                    } else {
                        base * 2.0 * (1.0 - (-x).exp() * (1.0 + x)) / (x * x)
                    }
                }
            };
            prob * m
        })
        .sum()
}

/// Target `φ = E[S(t*|W)]` in the right-censored population.
pub fn true_phi(dgp: &DgpSpec, t_star: f64) -> f64 {
    true_phi_for(dgp, t_star, W1Law::Uniform)
}
