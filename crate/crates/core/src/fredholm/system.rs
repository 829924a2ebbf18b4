use nalgebra::{DMatrix, DVector};

use crate::numerics::{solve_dense_linear, NumericsError};

/// Discrete system, for `j = 0..m`:
///
/// `diag_j x_j + c P_j - e γ = rhs_j`, with
/// `P_j = Σ_{k>j} outer_k X_k`, `X_k = Σ_{i<k} inner_i x_i`,
/// `γ = d Σ_j measure_j P_j` (only when `gamma` is set).
#[derive(Debug, Clone)]
pub struct CoupledSystem {
    pub diag: Vec<f64>,
    pub coupling: f64,
    pub outer: Vec<f64>,
    pub inner: Vec<f64>,
    pub rhs: Vec<f64>,
    pub gamma: Option<GammaCoupling>,
}

#[derive(Debug, Clone)]
pub struct GammaCoupling {
    /// `e`
    pub row_weight: f64,
    /// `d`
    pub scale: f64,
    pub measure: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SystemSolution {
    pub x: Vec<f64>,
    /// `X_j` (left-Riemann prefix sums).
    pub prefix: Vec<f64>,
    pub gamma: f64,
    pub residual_sup: f64,
    pub condition_estimate: Option<f64>,
    pub regularized: bool,
}

impl CoupledSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    fn prefix(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        let mut acc = 0.0;
        for (xi, wi) in x.iter().zip(&self.inner) {
            out.push(acc);
            acc += wi * xi;
        }
        out
    }

    fn suffix(&self, prefix: &[f64]) -> Vec<f64> {
        let m = prefix.len();
        let mut p = vec![0.0; m];
        for j in (0..m.saturating_sub(1)).rev() {
            p[j] = p[j + 1] + self.outer[j + 1] * prefix[j + 1];
        }
        p
    }

    fn gamma_of(&self, p: &[f64]) -> f64 {
        self.gamma
            .as_ref()
            .map(|g| g.scale * g.measure.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
            .unwrap_or(0.0)
    }

    /// `M x` without the right-hand side, in `O(m)`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let prefix = self.prefix(x);
        let p = self.suffix(&prefix);
        let gamma = self.gamma_of(&p);
        let e = self.gamma.as_ref().map(|g| g.row_weight).unwrap_or(0.0);
        (0..x.len())
            .map(|j| self.diag[j] * x[j] + self.coupling * p[j] - e * gamma)
            .collect()
    }

    /// Sup-norm of `M x - rhs`.
    pub fn residual_sup(&self, x: &[f64]) -> f64 {
        self.apply(x)
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Backward Riccati sweep followed by a forward pass; exact for the
    /// assembled system in `O(m)`.
    pub fn solve_sweep(&self) -> SystemSolution {
        let m = self.len();
        let e = self.gamma.as_ref().map(|g| g.row_weight).unwrap_or(0.0);
        let b: Vec<f64> = self.diag.iter().map(|d| self.coupling / d).collect();
        let a0: Vec<f64> = self
            .rhs
            .iter()
            .zip(&self.diag)
            .map(|(r, d)| r / d)
            .collect();
        let a1: Vec<f64> = self.diag.iter().map(|d| e / d).collect();

        let mut alpha = vec![0.0; m];
        let mut beta0 = vec![0.0; m];
        let mut beta1 = vec![0.0; m];
        for j in (0..m.saturating_sub(1)).rev() {
            let kappa = alpha[j + 1] + self.outer[j + 1];
            let denom = 1.0 + kappa * self.inner[j] * b[j];
            alpha[j] = kappa / denom;
            beta0[j] = (kappa * self.inner[j] * a0[j] + beta0[j + 1]) / denom;
            beta1[j] = (kappa * self.inner[j] * a1[j] + beta1[j + 1]) / denom;
        }

        // x = x0 + γ x1
        let mut x0 = vec![0.0; m];
        let mut x1 = vec![0.0; m];
        let mut p0 = vec![0.0; m];
        let mut p1 = vec![0.0; m];
        let (mut big_x0, mut big_x1) = (0.0, 0.0);
        for j in 0..m {
            p0[j] = alpha[j] * big_x0 + beta0[j];
            p1[j] = alpha[j] * big_x1 + beta1[j];
            x0[j] = a0[j] - b[j] * p0[j];
            x1[j] = a1[j] - b[j] * p1[j];
            big_x0 += self.inner[j] * x0[j];
            big_x1 += self.inner[j] * x1[j];
        }
        let gamma = match &self.gamma {
            Some(g) => {
                let g0: f64 = g.scale * g.measure.iter().zip(&p0).map(|(a, b)| a * b).sum::<f64>();
                let g1: f64 = g.scale * g.measure.iter().zip(&p1).map(|(a, b)| a * b).sum::<f64>();
                g0 / (1.0 - g1)
            }
            None => 0.0,
        };
        let x: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| a + gamma * b).collect();
        let prefix = self.prefix(&x);
        let residual_sup = self.residual_sup(&x);
        SystemSolution {
            x,
            prefix,
            gamma,
            residual_sup,
            condition_estimate: None,
            regularized: false,
        }
    }

    /// Dense `m x m` matrix of the system.
    pub fn assemble_dense(&self) -> DMatrix<f64> {
        let m = self.len();
        // Q_t = Σ_{k>t} outer_k
        let mut q = vec![0.0; m];
        for t in (0..m.saturating_sub(1)).rev() {
            q[t] = q[t + 1] + self.outer[t + 1];
        }
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                a[(j, i)] = self.coupling * self.inner[i] * q[j.max(i)];
            }
            a[(i, i)] += self.diag[i];
        }
        if let Some(g) = &self.gamma {
            // γ(x) = d Σ_i inner_i x_i Σ_l measure_l Q_{max(l,i)}
            let mut cum_measure = vec![0.0; m + 1];
            for l in 0..m {
                cum_measure[l + 1] = cum_measure[l] + g.measure[l];
            }
            let mut tail_mq = vec![0.0; m + 1];
            for l in (0..m).rev() {
                tail_mq[l] = tail_mq[l + 1] + g.measure[l] * q[l];
            }
            for i in 0..m {
                let s = cum_measure[i + 1] * q[i] + tail_mq[i + 1];
                let gv = g.scale * self.inner[i] * s;
                for j in 0..m {
                    a[(j, i)] -= g.row_weight * gv;
                }
            }
        }
        a
    }

    /// Solves the dense system by LU; for certification and small grids.
    pub fn solve_dense(&self) -> Result<SystemSolution, NumericsError> {
        let a = self.assemble_dense();
        let b = DVector::from_column_slice(&self.rhs);
        let sol = solve_dense_linear(&a, &b)?;
        let x: Vec<f64> = sol.x.iter().copied().collect();
        let prefix = self.prefix(&x);
        let p = self.suffix(&prefix);
        let gamma = self.gamma_of(&p);
        let residual_sup = self.residual_sup(&x);
        Ok(SystemSolution {
            x,
            prefix,
            gamma,
            residual_sup,
            condition_estimate: Some(sol.condition_estimate),
            regularized: sol.regularized,
        })
    }
}
