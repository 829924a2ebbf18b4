use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{h_system, Evaluate, FredholmError, FredholmProblem};
use crate::nuisance::InspectionDensityModel;
use crate::numerics::least_squares;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    /// Chebyshev polynomials on the grid span times `1(t > t*)` and
    /// `1(t <= t*)`: `2 (degree + 1)` functions.
    IndicatorSplit,
    /// Constants on the pieces outside the inspection window and Chebyshev
    /// polynomials in the coordinate `G(t|w)` on the window pieces, with
    /// breaks at `c_l`, `t*` and `c_u`.
    WindowAdapted,
    /// One Chebyshev polynomial of degree `2 degree + 1` on the grid span,
    /// without indicator interactions.
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
enum Coordinate {
    /// `x = 2 (t - a) / (b - a) - 1`
    Time { a: f64, b: f64 },
    /// `x = 2 (G(t|w) - a) / (b - a) - 1`
    Inspection { a: f64, b: f64 },
}

/// One interval `(lo, hi]` (closed at the left end of the span).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct Piece {
    lo: f64,
    hi: f64,
    coordinate: Coordinate,
    offset: usize,
    count: usize,
}

/// `h*` represented in a finite basis.
#[derive(Debug, Clone, Serialize)]
pub struct BasisSolution {
    pub kind: BasisKind,
    pub degree: usize,
    pub coefficients: Vec<f64>,
    pub t_star: f64,
    /// Sup-norm of the discrete residual `L_j` at the fitted coefficients.
    pub residual_sup: f64,
    pub ls_residual_norm: f64,
    pub rank_deficient: bool,
    pieces: Vec<Piece>,
    #[serde(skip)]
    inspection: Option<InspectionDensityModel>,
    covariate: Vec<f64>,
}

fn chebyshev(x: f64, count: usize, out: &mut [f64]) {
    let x = x.clamp(-1.0, 1.0);
    if count == 0 {
        return;
    }
    out[0] = 1.0;
    if count > 1 {
        out[1] = x;
    }
    for k in 2..count {
        out[k] = 2.0 * x * out[k - 1] - out[k - 2];
    }
}

impl BasisSolution {
    pub fn len(&self) -> usize {
        self.pieces.iter().map(|p| p.count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coefficients of the `1(t > t*)` block (indicator-split basis only).
    pub fn alpha(&self) -> Option<&[f64]> {
        (self.kind == BasisKind::IndicatorSplit).then(|| {
            let p = &self.pieces[1];
            &self.coefficients[p.offset..p.offset + p.count]
        })
    }

    /// Coefficients of the `1(t <= t*)` block (indicator-split basis only).
    pub fn gamma(&self) -> Option<&[f64]> {
        (self.kind == BasisKind::IndicatorSplit).then(|| {
            let p = &self.pieces[0];
            &self.coefficients[p.offset..p.offset + p.count]
        })
    }

    fn piece_of(&self, t: f64) -> Option<&Piece> {
        let first = self.pieces.first()?;
        if t < first.lo || t > self.pieces.last()?.hi {
            return None;
        }
        self.pieces.iter().find(|p| t <= p.hi)
    }

    fn row(&self, t: f64, out: &mut [f64]) -> Option<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        let p = *self.piece_of(t)?;
        let x = match p.coordinate {
            Coordinate::Time { a, b } => 2.0 * (t - a) / (b - a) - 1.0,
            Coordinate::Inspection { a, b } => {
                let g = self.inspection.as_ref()?.cdf(t, &self.covariate);
                2.0 * (g - a) / (b - a) - 1.0
            }
        };
        chebyshev(x, p.count, &mut out[p.offset..p.offset + p.count]);
        Some(())
    }
}

impl Evaluate for BasisSolution {
    fn evaluate(&self, t: f64) -> Result<f64, FredholmError> {
        let mut row = vec![0.0; self.len()];
        self.row(t, &mut row).ok_or(FredholmError::OutOfRange {
            t,
            lo: self.pieces[0].lo,
            hi: self.pieces[self.pieces.len() - 1].hi,
        })?;
        Ok(row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
    }
}

fn build_pieces(kind: BasisKind, degree: usize, problem: &FredholmProblem) -> Vec<Piece> {
    let pts = problem.grid.points();
    let (t0, t1) = (pts[0], problem.grid.t_max());
    let t_star = problem.t_star;
    let span = Coordinate::Time { a: t0, b: t1 };
    let mut pieces = Vec::new();
    let mut push = |lo: f64, hi: f64, coordinate: Coordinate, count: usize| {
        let offset = pieces.iter().map(|p: &Piece| p.count).sum();
        pieces.push(Piece {
            lo,
            hi,
            coordinate,
            offset,
            count,
        });
    };
    match kind {
        BasisKind::IndicatorSplit => {
            push(t0, t_star, span, degree + 1);
            push(t_star, t1, span, degree + 1);
        }
        BasisKind::Polynomial => push(t0, t1, span, 2 * degree + 2),
        BasisKind::WindowAdapted => {
            let win = problem.nuisances.window();
            let mut breaks: Vec<f64> = [win.c_lower, t_star, win.c_upper]
                .into_iter()
                .filter(|&b| b > t0 && b < t1)
                .collect();
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            let mut edges = vec![t0];
            edges.extend(breaks);
            edges.push(t1);
            let w = &problem.covariate;
            for pair in edges.windows(2) {
                let (lo, hi) = (pair[0], pair[1]);
                let inside = lo >= win.c_lower && hi <= win.c_upper;
                let (ga, gb) = (
                    problem.nuisances.inspection.cdf(lo, w),
                    problem.nuisances.inspection.cdf(hi, w),
                );
                if inside && gb > ga {
                    push(lo, hi, Coordinate::Inspection { a: ga, b: gb }, degree + 1);
                } else {
                    push(lo, hi, span, 1);
                }
            }
        }
    }
    pieces
}

/// Least-squares solution of the discrete `h*` system in a finite basis.
pub fn solve_h_basis(
    problem: &FredholmProblem,
    degree: usize,
    kind: BasisKind,
) -> Result<BasisSolution, FredholmError> {
    if degree < 1 {
        return Err(FredholmError::InvalidProblem(
            "basis degree must be at least 1".into(),
        ));
    }
    let pieces = build_pieces(kind, degree, problem);
    let mut sol = BasisSolution {
        kind,
        degree,
        coefficients: Vec::new(),
        t_star: problem.t_star,
        residual_sup: f64::NAN,
        ls_residual_norm: f64::NAN,
        rank_deficient: false,
        pieces,
        inspection: (kind == BasisKind::WindowAdapted)
            .then(|| problem.nuisances.inspection.clone()),
        covariate: problem.covariate.clone(),
    };
    let profile = problem.profile();
    let system = h_system(&profile, problem.pi, problem.ratio_weights);
    let pts = problem.grid.points();
    let (m, p) = (pts.len(), sol.len());

    let mut basis = DMatrix::zeros(m, p);
    let mut row = vec![0.0; p];
    for (j, &t) in pts.iter().enumerate() {
        sol.row(t, &mut row).ok_or_else(|| {
            FredholmError::InvalidProblem(format!("basis cannot be evaluated at t = {t}"))
        })?;
        for k in 0..p {
            basis[(j, k)] = row[k];
        }
    }
    let mut design = DMatrix::zeros(m, p);
    for k in 0..p {
        let col: Vec<f64> = basis.column(k).iter().copied().collect();
        for (j, v) in system.apply(&col).into_iter().enumerate() {
            design[(j, k)] = v;
        }
    }
    let target = DVector::from_column_slice(&system.rhs);
    let ls = least_squares(&design, &target).map_err(|e| FredholmError::Solver {
        covariate: problem.covariate.clone(),
        source: e,
    })?;
    if ls.rank_deficient {
        warn!(
            "basis design rank {} < {} columns; using the minimum-norm solution",
            ls.rank, p
        );
    }
    let values = &basis * &ls.coefficients;
    sol.residual_sup = system.residual_sup(values.as_slice());
    sol.ls_residual_norm = ls.residual_norm;
    sol.rank_deficient = ls.rank_deficient;
    sol.coefficients = ls.coefficients.iter().copied().collect();
    Ok(sol)
}
