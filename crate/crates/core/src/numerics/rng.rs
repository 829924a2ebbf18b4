use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NumericsError;

/// The four distribution families used by the data-generating process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    Uniform {
        low: f64,
        high: f64,
    },
    Bernoulli {
        p: f64,
    },
    Exponential {
        rate: f64,
    },
    /// Only `a == 1` or `b == 1` are supported (sampled by inversion).
    Beta {
        a: f64,
        b: f64,
    },
}

impl Distribution {
    pub fn validate(&self) -> Result<(), NumericsError> {
        let ok = match *self {
            Distribution::Uniform { low, high } => {
                low.is_finite() && high.is_finite() && low < high
            }
            Distribution::Bernoulli { p } => (0.0..=1.0).contains(&p),
            Distribution::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            Distribution::Beta { a, b } => {
                a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() && (a == 1.0 || b == 1.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(NumericsError::InvalidArgument(format!(
                "invalid distribution parameters: {self:?}"
            )))
        }
    }
}

/// A reproducible random stream identified by `(seed, stream id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random::<u64>()
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

pub fn rng_draw(spec: &Distribution, stream: &mut RngStream) -> Result<f64, NumericsError> {
    spec.validate()?;
    let u = stream.uniform();
    Ok(match *spec {
        Distribution::Uniform { low, high } => low + (high - low) * u,
        Distribution::Bernoulli { p } => {
            if u < p {
                1.0
            } else {
                0.0
            }
        }
        Distribution::Exponential { rate } => -(1.0 - u).ln() / rate,
        Distribution::Beta { a, b } => {
            if a == 1.0 {
                1.0 - (1.0 - u).powf(1.0 / b)
            } else {
                u.powf(1.0 / a)
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(spec: Distribution, n: usize, seed: u64) -> Vec<f64> {
        let mut s = RngStream::new(seed, 0);
        (0..n).map(|_| rng_draw(&spec, &mut s).unwrap()).collect()
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn exponential_mean() {
        let v = draws(Distribution::Exponential { rate: 2.0 }, 100_000, 1);
        assert!((mean(&v) - 0.5).abs() < 0.01);
    }

    #[test]
    fn beta_one_one_is_uniform() {
        let mut v = draws(Distribution::Beta { a: 1.0, b: 1.0 }, 100_000, 2);
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let ks = v
            .iter()
            .enumerate()
            .map(|(i, x)| ((i + 1) as f64 / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "ks = {ks}");
    }

    #[test]
    fn beta_one_b_mean() {
        let v = draws(Distribution::Beta { a: 1.0, b: 0.75 }, 100_000, 3);
        assert!((mean(&v) - 1.0 / 1.75).abs() < 0.01);
    }

    #[test]
    fn same_seed_same_stream() {
        let a = draws(
            Distribution::Uniform {
                low: 0.0,
                high: 1.0,
            },
            100,
            9,
        );
        let b = draws(
            Distribution::Uniform {
                low: 0.0,
                high: 1.0,
            },
            100,
            9,
        );
        assert_eq!(a, b);
        let mut s1 = RngStream::new(9, 1);
        let mut s2 = RngStream::new(9, 2);
        assert_ne!(s1.next_u64(), s2.next_u64());
    }

    #[test]
    fn invalid_parameters() {
        let mut s = RngStream::new(0, 0);
        for spec in [
            Distribution::Exponential { rate: 0.0 },
            Distribution::Bernoulli { p: 1.5 },
            Distribution::Beta { a: 2.0, b: 3.0 },
            Distribution::Beta { a: 1.0, b: -1.0 },
        ] {
            assert!(rng_draw(&spec, &mut s).is_err());
        }
    }
}
