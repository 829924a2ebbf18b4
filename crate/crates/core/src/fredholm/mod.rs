//! Integral equations for `h*` and `η*`, their grid and basis solvers, and
//! residual certification.

mod basis;
mod profile;
mod system;

pub use basis::{solve_h_basis, BasisKind, BasisSolution};
pub use profile::{Profile, SURVIVAL_FLOOR};
pub use system::{CoupledSystem, GammaCoupling, SystemSolution};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nuisance::NuisanceBundle;
use crate::numerics::{NumericsError, StepFunctionOnGrid, TimeGrid};

/// Residual bound certified for grid solutions.
pub const GRID_RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FredholmError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("t = {t} outside the solution span [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("solver failed for covariate {covariate:?}: {source}")]
    Solver {
        covariate: Vec<f64>,
        #[source]
        source: NumericsError,
    },
    #[error(
        "residual {residual:.3e} exceeds tolerance {tolerance:.1e} for covariate {covariate:?}"
    )]
    Residual {
        covariate: Vec<f64>,
        residual: f64,
        tolerance: f64,
    },
    #[error("positivity violation: {0}")]
    Positivity(String),
}

impl FredholmError {
    pub fn is_validation(&self) -> bool {
        matches!(self, Self::InvalidProblem(_) | Self::OutOfRange { .. })
    }
}

/// Multipliers `(dP_1/dP_i, dP_0/dP_i)(w)` applied to the right-censored and
/// current-status parts of the `h*` equation; `(1, 1)` without covariate
/// shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioWeights {
    pub right_censored: f64,
    pub current_status: f64,
}

impl Default for RatioWeights {
    fn default() -> Self {
        Self {
            right_censored: 1.0,
            current_status: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FredholmProblem<'a> {
    pub pi: f64,
    pub t_star: f64,
    pub nuisances: &'a NuisanceBundle,
    pub covariate: Vec<f64>,
    pub grid: Arc<TimeGrid>,
    pub ratio_weights: RatioWeights,
}

impl<'a> FredholmProblem<'a> {
    /// Validates the inputs; `t*`, `c_l` and `c_u` are added to the grid
    /// when absent.
    pub fn new(
        pi: f64,
        t_star: f64,
        nuisances: &'a NuisanceBundle,
        covariate: Vec<f64>,
        grid: Arc<TimeGrid>,
    ) -> Result<Self, FredholmError> {
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(FredholmError::InvalidProblem(format!(
                "pi must lie in (0, 1], got {pi}"
            )));
        }
        if !(t_star > 0.0) || !t_star.is_finite() {
            return Err(FredholmError::InvalidProblem(format!(
                "t* must be positive, got {t_star}"
            )));
        }
        if covariate.len() != nuisances.covariate_dim() {
            return Err(FredholmError::InvalidProblem(format!(
                "covariate has dimension {}, nuisances expect {}",
                covariate.len(),
                nuisances.covariate_dim()
            )));
        }
        let win = nuisances.window();
        if grid.t_max() <= win.c_upper.max(t_star) {
            return Err(FredholmError::InvalidProblem(format!(
                "grid must extend beyond max(c_u, t*) = {}",
                win.c_upper.max(t_star)
            )));
        }
        let needed = [t_star, win.c_lower, win.c_upper];
        let grid = if needed.iter().all(|&p| grid.index_of(p).is_some()) {
            grid
        } else {
            Arc::new(
                grid.with_points(&needed)
                    .map_err(|e| FredholmError::InvalidProblem(e.to_string()))?,
            )
        };
        Ok(Self {
            pi,
            t_star,
            nuisances,
            covariate,
            grid,
            ratio_weights: RatioWeights::default(),
        })
    }

    pub fn with_ratio_weights(mut self, weights: RatioWeights) -> Self {
        self.ratio_weights = weights;
        self
    }

    pub fn profile(&self) -> Profile {
        Profile::compute(
            self.nuisances,
            &self.covariate,
            &self.grid,
            self.t_star,
            None,
        )
    }
}

/// The discrete `h*` system on a profile.
pub fn h_system(profile: &Profile, pi: f64, weights: RatioWeights) -> CoupledSystem {
    let m = profile.len();
    let diag = vec![pi * weights.right_censored; m];
    let rhs = (0..m)
        .map(|j| if profile.above_t_star(j) { 1.0 } else { 0.0 } - profile.mu)
        .collect();
    CoupledSystem {
        diag,
        coupling: weights.current_status * (1.0 - pi),
        outer: profile.q.clone(),
        inner: profile.d_cdf.clone(),
        rhs,
        gamma: Some(GammaCoupling {
            row_weight: weights.current_status,
            scale: 1.0 - pi,
            measure: profile.d_cdf.clone(),
        }),
    }
}

/// The discrete `η*` system on a profile.
pub fn eta_system(profile: &Profile, pi: f64) -> CoupledSystem {
    let m = profile.len();
    CoupledSystem {
        diag: (0..m)
            .map(|j| pi * profile.gamma[j] * profile.survival_left[j])
            .collect(),
        coupling: 1.0 - pi,
        outer: profile
            .q
            .iter()
            .zip(&profile.survival_left)
            .map(|(q, s)| q * s * s)
            .collect(),
        inner: profile
            .d_cdf
            .iter()
            .zip(&profile.survival)
            .map(|(d, s)| d / s)
            .collect(),
        rhs: (0..m)
            .map(|j| {
                if profile.above_t_star(j) {
                    0.0
                } else {
                    -profile.mu
                }
            })
            .collect(),
        gamma: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    HStar,
    EtaStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GridSolver {
    /// `O(m)` backward sweep.
    #[default]
    Sweep,
    /// Dense LU factorisation of the assembled matrix.
    DenseLu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum SolutionMethod {
    GridLinear { solver: GridSolver },
}

#[derive(Debug, Clone, Serialize)]
pub struct FredholmSolution {
    pub kind: SolutionKind,
    #[serde(skip)]
    pub values: StepFunctionOnGrid,
    /// `H*` for `h*`, `Θ*` for `η*`, at the grid points.
    #[serde(skip)]
    pub derived: StepFunctionOnGrid,
    pub gamma_w: Option<f64>,
    pub residual_sup: f64,
    pub method: SolutionMethod,
    pub t_star: f64,
    pub mu: f64,
    pub pi: f64,
    pub ratio_weights: RatioWeights,
    /// `Σ_j h*(u_j) dF_j` (h* only).
    pub weighted_mean: Option<f64>,
    pub condition_estimate: Option<f64>,
    pub regularized: bool,
}

impl FredholmSolution {
    pub fn grid(&self) -> &TimeGrid {
        self.values.grid()
    }

    /// Constant value of the solution beyond `max(c_u, t*)`:
    /// `(1 - μ + r_0 γ) / (π r_1)` for `h*`, zero for `η*`.
    pub fn tail_value(&self) -> f64 {
        match self.kind {
            SolutionKind::HStar => {
                (1.0 - self.mu + self.ratio_weights.current_status * self.gamma_w.unwrap_or(0.0))
                    / (self.pi * self.ratio_weights.right_censored)
            }
            SolutionKind::EtaStar => 0.0,
        }
    }
}

fn certify(
    sol: SystemSolution,
    problem: &FredholmProblem,
    solver: GridSolver,
    kind: SolutionKind,
    profile: &Profile,
) -> Result<FredholmSolution, FredholmError> {
    let tol = GRID_RESIDUAL_TOLERANCE * (1.0 + sol.x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    if !(sol.residual_sup <= tol) || sol.x.iter().any(|v| !v.is_finite()) {
        return Err(FredholmError::Residual {
            covariate: problem.covariate.clone(),
            residual: sol.residual_sup,
            tolerance: tol,
        });
    }
    let weighted_mean = (kind == SolutionKind::HStar)
        .then(|| sol.x.iter().zip(&profile.d_cdf).map(|(h, d)| h * d).sum());
    let grid = problem.grid.clone();
    let to_fn = |v: Vec<f64>| {
        StepFunctionOnGrid::new(grid.clone(), v).map_err(|e| FredholmError::Solver {
            covariate: problem.covariate.clone(),
            source: e,
        })
    };
    Ok(FredholmSolution {
        kind,
        values: to_fn(sol.x)?,
        derived: to_fn(sol.prefix)?,
        gamma_w: (kind == SolutionKind::HStar).then_some(sol.gamma),
        residual_sup: sol.residual_sup,
        method: SolutionMethod::GridLinear { solver },
        t_star: problem.t_star,
        mu: profile.mu,
        pi: problem.pi,
        ratio_weights: problem.ratio_weights,
        weighted_mean,
        condition_estimate: sol.condition_estimate,
        regularized: sol.regularized,
    })
}

fn run(
    system: &CoupledSystem,
    solver: GridSolver,
    covariate: &[f64],
) -> Result<SystemSolution, FredholmError> {
    match solver {
        GridSolver::Sweep => Ok(system.solve_sweep()),
        GridSolver::DenseLu => system.solve_dense().map_err(|e| FredholmError::Solver {
            covariate: covariate.to_vec(),
            source: e,
        }),
    }
}

/// Solves the discretised `h*` equation on the problem grid.
pub fn solve_h_grid(
    problem: &FredholmProblem,
    solver: GridSolver,
) -> Result<FredholmSolution, FredholmError> {
    solve_on_profile(problem, &problem.profile(), SolutionKind::HStar, solver)
}

/// Solves the discretised `η*` equation on the problem grid.
pub fn solve_eta_grid(
    problem: &FredholmProblem,
    solver: GridSolver,
) -> Result<FredholmSolution, FredholmError> {
    solve_on_profile(problem, &problem.profile(), SolutionKind::EtaStar, solver)
}

/// Solves either equation on a precomputed profile of `problem`.
pub fn solve_on_profile(
    problem: &FredholmProblem,
    profile: &Profile,
    kind: SolutionKind,
    solver: GridSolver,
) -> Result<FredholmSolution, FredholmError> {
    if profile.len() != problem.grid.len() {
        return Err(FredholmError::InvalidProblem(format!(
            "profile has {} points, grid has {}",
            profile.len(),
            problem.grid.len()
        )));
    }
    let system = match kind {
        SolutionKind::HStar => h_system(profile, problem.pi, problem.ratio_weights),
        SolutionKind::EtaStar => eta_system(profile, problem.pi),
    };
    let sol = run(&system, solver, &problem.covariate)?;
    certify(sol, problem, solver, kind, profile)
}

/// Sup over grid points with `S(u_j) >= 0.01` of `|η* - h* - H*/S(u_j-)|`.
pub fn eta_identity_discrepancy(
    h: &FredholmSolution,
    eta: &FredholmSolution,
    profile: &Profile,
) -> f64 {
    let hv = h.values.values();
    let big_h = h.derived.values();
    let ev = eta.values.values();
    (0..hv.len())
        .filter(|&j| 1.0 - profile.cdf[j] >= 0.01)
        .map(|j| (ev[j] - hv[j] - big_h[j] / profile.survival_left[j]).abs())
        .fold(0.0, f64::max)
}

/// The kernel `K(t, s | w)` of the `h*` equation, with the inner integrals
/// over the inspection window taken as trapezoid sums against `dG` on the
/// problem grid (with `s` and `t` inserted).
#[allow(non_snake_case)]
pub fn kernel_K(t: f64, s: f64, problem: &FredholmProblem) -> Result<f64, FredholmError> {
    let grid = &problem.grid;
    for v in [t, s] {
        if !grid.contains(v) {
            return Err(FredholmError::OutOfRange {
                t: v,
                lo: grid.points()[0],
                hi: grid.t_max(),
            });
        }
    }
    if problem.pi == 1.0 {
        return Ok(0.0);
    }
    let bundle = problem.nuisances;
    let w = &problem.covariate;
    let win = bundle.window();
    let zeta = bundle.event.zeta;
    let lo = win.c_lower.max(s);
    if lo >= win.c_upper {
        return Ok(0.0);
    }
    let mut pts: Vec<f64> = grid
        .points()
        .iter()
        .copied()
        .filter(|&c| c > lo && c < win.c_upper)
        .collect();
    pts.push(lo);
    pts.push(win.c_upper);
    if t > lo && t < win.c_upper {
        pts.push(t);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut acc = 0.0;
    for pair in pts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let dg = bundle.inspection.cdf(b, w) - bundle.inspection.cdf(a, w);
        // t is a breakpoint, so each cell lies on one side of it
        let below = b <= t;
        let phi = |c: f64| {
            let f = bundle.event.cdf(c, w).clamp(zeta, 1.0 - zeta);
            if below {
                1.0 / (1.0 - f)
            } else {
                -1.0 / f
            }
        };
        acc += dg * 0.5 * (phi(a) + phi(b));
    }
    let pi = problem.pi;
    Ok((1.0 - pi) / pi * bundle.event.density(s, w) * acc)
}

/// Evaluation of a solved function at an arbitrary time.
pub trait Evaluate {
    fn evaluate(&self, t: f64) -> Result<f64, FredholmError>;
}

impl Evaluate for FredholmSolution {
    /// Nearest grid point on the same side of `t*` as `t`; `t = t*` belongs to
    /// the `t <= t*` side.
    fn evaluate(&self, t: f64) -> Result<f64, FredholmError> {
        let grid = self.grid();
        let pts = grid.points();
        if !grid.contains(t) {
            return Err(FredholmError::OutOfRange {
                t,
                lo: pts[0],
                hi: grid.t_max(),
            });
        }
        let vals = self.values.values();
        let star = grid.cell_end(self.t_star).min(pts.len() - 1);
        let (lo_idx, hi_idx) = if t <= self.t_star {
            (0, star)
        } else {
            (star + 1, pts.len() - 1)
        };
        let hi_idx = hi_idx.max(lo_idx);
        let k = grid.cell_end(t).clamp(lo_idx, hi_idx);
        let best = if k > lo_idx && (t - pts[k - 1]).abs() <= (pts[k] - t).abs() {
            k - 1
        } else {
            k
        };
        Ok(vals[best])
    }
}

pub fn evaluate_solution<E: Evaluate>(sol: &E, t: f64) -> Result<f64, FredholmError> {
    sol.evaluate(t)
}
