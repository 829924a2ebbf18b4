use nalgebra::{DMatrix, DVector};

use super::NumericsError;

/// Condition estimates above this trigger the ridge fallback.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Ridge scale relative to `trace(A) / dim`.
pub const RIDGE_SCALE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub x: DVector<f64>,
    /// Lower-bound estimate of the 1-norm condition number.
    pub condition_estimate: f64,
    /// True when the ridge fallback was applied.
    pub regularized: bool,
    pub residual_sup: f64,
}

fn check_finite_matrix(a: &DMatrix<f64>, what: &'static str) -> Result<(), NumericsError> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite(what));
    }
    Ok(())
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `A x = b` by LU with partial pivoting. Ill-conditioned systems get
/// a small ridge `rho = 1e-10 trace(A)/dim` and are flagged.
pub fn solve_dense_linear(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<LinearSolution, NumericsError> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(NumericsError::InvalidArgument(format!(
            "matrix must be square and non-empty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.len() != n {
        return Err(NumericsError::LengthMismatch {
            expected: n,
            found: b.len(),
        });
    }
    check_finite_matrix(a, "system matrix")?;
    if b.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite("right-hand side"));
    }

    let lu = a.clone().lu();
    let condition_estimate = lu
        .solve(b)
        .map(|_| estimate_condition(a, &lu))
        .unwrap_or(f64::INFINITY);

    if condition_estimate <= CONDITION_LIMIT {
        if let Some(mut x) = lu.solve(b) {
            // one step of iterative refinement
            let r = b - a * &x;
            if let Some(dx) = lu.solve(&r) {
                x += dx;
            }
            let residual_sup = sup_norm(&(a * &x - b));
            if x.iter().all(|v| v.is_finite()) {
                return Ok(LinearSolution {
                    x,
                    condition_estimate,
                    regularized: false,
                    residual_sup,
                });
            }
        }
    }

    let trace: f64 = a.diagonal().iter().sum();
    let rho = RIDGE_SCALE * trace.abs() / n as f64;
    if !(rho > 0.0) {
        return Err(NumericsError::Singular { condition_estimate });
    }
    let mut ridged = a.clone();
    for i in 0..n {
        ridged[(i, i)] += rho;
    }
    let x = ridged
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or(NumericsError::Singular { condition_estimate })?;
    let residual_sup = sup_norm(&(a * &x - b));
    Ok(LinearSolution {
        x,
        condition_estimate,
        regularized: true,
        residual_sup,
    })
}

/// `||A||_1 * max ||A^{-1} v||_1 / ||v||_1` over a few probe vectors.
fn estimate_condition(
    a: &DMatrix<f64>,
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
) -> f64 {
    let n = a.nrows();
    let probes = [
        DVector::from_element(n, 1.0),
        DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }),
        DVector::from_fn(n, |i, _| 1.0 + i as f64 / n as f64),
    ];
    let mut inv_norm = 0.0_f64;
    for v in &probes {
        match lu.solve(v) {
            Some(x) => {
                let ratio =
                    x.iter().map(|t| t.abs()).sum::<f64>() / v.iter().map(|t| t.abs()).sum::<f64>();
                if !ratio.is_finite() {
                    return f64::INFINITY;
                }
                inv_norm = inv_norm.max(ratio);
            }
            None => return f64::INFINITY,
        }
    }
    one_norm(a) * inv_norm
}

#[derive(Debug, Clone)]
pub struct LeastSquaresSolution {
    pub coefficients: DVector<f64>,
    pub residual_norm: f64,
    pub rank: usize,
    /// True when the design was rank deficient and the minimum-norm solution
    /// was returned.
    pub rank_deficient: bool,
}

/// Minimizes `||design * beta - target||_2` through an SVD. Rank-deficient
/// designs return the minimum-norm minimizer.
pub fn least_squares(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
) -> Result<LeastSquaresSolution, NumericsError> {
    if design.nrows() != target.len() {
        return Err(NumericsError::LengthMismatch {
            expected: design.nrows(),
            found: target.len(),
        });
    }
    if design.ncols() == 0 {
        return Err(NumericsError::InvalidArgument(
            "design has no columns".into(),
        ));
    }
    check_finite_matrix(design, "design matrix")?;
    if target.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite("least-squares target"));
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * design.nrows().max(design.ncols()) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let coefficients = svd
        .solve(target, eps)
        .map_err(|e| NumericsError::InvalidArgument(e.to_string()))?;
    let residual_norm = (design * &coefficients - target).norm();
    Ok(LeastSquaresSolution {
        coefficients,
        residual_norm,
        rank,
        rank_deficient: rank < design.ncols(),
    })
}
