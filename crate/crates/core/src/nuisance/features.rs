use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Feature map `φ(w) = (1, w_1..w_d, w_i w_j for i < j)` restricted to the
/// columns kept after pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    dim: usize,
    keep: Vec<usize>,
}

impl FeatureMap {
    /// All features for covariate dimension `dim`.
    pub fn full(dim: usize) -> Self {
        Self {
            dim,
            keep: (0..Self::full_len(dim)).collect(),
        }
    }

    /// Intercept only.
    pub fn intercept(dim: usize) -> Self {
        Self { dim, keep: vec![0] }
    }

    /// Intercept and the raw coordinates, no interactions.
    pub fn linear(dim: usize) -> Self {
        Self {
            dim,
            keep: (0..=dim).collect(),
        }
    }

    pub fn full_len(dim: usize) -> usize {
        1 + dim + dim * dim.saturating_sub(1) / 2
    }

    pub fn covariate_dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept(&self) -> &[usize] {
        &self.keep
    }

    pub fn expand_full(w: &[f64]) -> Vec<f64> {
        let d = w.len();
        let mut out = Vec::with_capacity(Self::full_len(d));
        out.push(1.0);
        out.extend_from_slice(w);
        for i in 0..d {
            for j in (i + 1)..d {
                out.push(w[i] * w[j]);
            }
        }
        out
    }

    pub fn eval(&self, w: &[f64]) -> Vec<f64> {
        let full = Self::expand_full(w);
        self.keep.iter().map(|&k| full[k]).collect()
    }

    pub fn dot(&self, beta: &[f64], w: &[f64]) -> f64 {
        let full = Self::expand_full(w);
        self.keep.iter().zip(beta).map(|(&k, b)| full[k] * b).sum()
    }

    /// Coefficients on the full feature vector (zeros for pruned columns).
    pub fn to_full(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; Self::full_len(self.dim)];
        for (&k, b) in self.keep.iter().zip(beta) {
            out[k] = *b;
        }
        out
    }

    pub fn design(&self, rows: &[&[f64]]) -> DMatrix<f64> {
        let p = self.len();
        let mut m = DMatrix::zeros(rows.len(), p);
        for (i, w) in rows.iter().enumerate() {
            for (j, v) in self.eval(w).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Starts from `self` and drops constant or collinear columns on `rows`
    /// (greedy Gram-Schmidt on centred columns; the intercept is always kept
    /// when present).
    pub fn pruned(&self, rows: &[&[f64]]) -> Self {
        let n = rows.len();
        if n == 0 {
            return self.clone();
        }
        let full: Vec<Vec<f64>> = rows.iter().map(|w| Self::expand_full(w)).collect();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut keep = Vec::new();
        for &k in &self.keep {
            if k == 0 {
                keep.push(0);
                continue;
            }
            let col = DVector::from_iterator(n, full.iter().map(|r| r[k]));
            let mean = col.mean();
            let mut v = col.map(|x| x - mean);
            let scale = v.norm();
            if scale <= 1e-10 * (1.0 + mean.abs()) * (n as f64).sqrt() {
                continue;
            }
            for b in &basis {
                let proj = b.dot(&v);
                v -= b * proj;
            }
            let r = v.norm();
            if r <= 1e-8 * scale {
                continue;
            }
            basis.push(v / r);
            keep.push(k);
        }
        Self {
            dim: self.dim,
            keep,
        }
    }
}
