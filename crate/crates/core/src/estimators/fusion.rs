use std::collections::BTreeMap;
use std::sync::Arc;

use crate::data::{FusedSample, Outcome};
use crate::fredholm::{
    solve_on_profile, FredholmProblem, FredholmSolution, Profile, RatioWeights, SolutionKind,
};
use crate::nuisance::{InspectionDensityModel, NuisanceBundle};
use crate::numerics::{ordered_mean, ordered_sum, TimeGrid};

use super::{
    wald_ci, Diagnostics, Estimand, EstimateResult, EstimationOptions, EstimatorError,
    EstimatorKind, GradientTerm, OVERLAP_WARNING_FRACTION,
};

/// Covariate values whose inspection-time CDF rows are computed per batch.
const KERNEL_BATCH: usize = 128;

/// Gradient-based estimators sharing one grid and one set of profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    RcOnly,
    Dr,
    Eff,
    /// Covariate-shift estimator for source 0 or 1.
    Shift(u8),
}

impl FusionKind {
    pub fn estimator_kind(self) -> EstimatorKind {
        match self {
            Self::RcOnly => EstimatorKind::RcOnly,
            Self::Dr => EstimatorKind::FusionDr,
            Self::Eff => EstimatorKind::FusionEff,
            Self::Shift(0) => EstimatorKind::Shift0,
            Self::Shift(_) => EstimatorKind::Shift1,
        }
    }

    pub fn from_estimator_kind(kind: EstimatorKind) -> Option<Self> {
        match kind {
            EstimatorKind::RcOnly => Some(Self::RcOnly),
            EstimatorKind::FusionDr => Some(Self::Dr),
            EstimatorKind::FusionEff => Some(Self::Eff),
            EstimatorKind::Shift0 => Some(Self::Shift(0)),
            EstimatorKind::Shift1 => Some(Self::Shift(1)),
            _ => None,
        }
    }

    fn uses_current_status(self) -> bool {
        !matches!(self, Self::RcOnly)
    }
}

struct Group {
    w: Vec<f64>,
    rows: Vec<usize>,
}

/// Per-row quantities of one estimator at one `t*`.
struct Accumulator {
    kind: FusionKind,
    t_star: f64,
    terms: Vec<GradientTerm>,
    /// Weight multiplying `μ̂ - φ̂` in the gradient.
    centre: Vec<f64>,
    mu: Vec<f64>,
    max_residual: f64,
    regularized: usize,
    clipped_rows: usize,
}

/// Shared state for the right-censored and fusion estimators on one sample.
pub struct FusionEngine<'a> {
    sample: &'a FusedSample,
    bundle: &'a NuisanceBundle,
    options: EstimationOptions,
    t_stars: Vec<f64>,
    grid: Arc<TimeGrid>,
    pi: f64,
    groups: Vec<Group>,
    /// Grid index of each row's `Y` or `C`.
    row_index: Vec<usize>,
}

impl<'a> FusionEngine<'a> {
    pub fn new(
        sample: &'a FusedSample,
        bundle: &'a NuisanceBundle,
        t_stars: &[f64],
        options: EstimationOptions,
    ) -> Result<Self, EstimatorError> {
        if t_stars.is_empty() || t_stars.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(EstimatorError::InvalidArgument(format!(
                "t* values must be positive and finite, got {t_stars:?}"
            )));
        }
        if !(options.alpha > 0.0 && options.alpha < 1.0) {
            return Err(EstimatorError::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                options.alpha
            )));
        }
        if options.grid_points < 2 || !(options.grid_extent >= 1.0) {
            return Err(EstimatorError::InvalidArgument(
                "grid needs at least 2 points and an extent of at least 1".into(),
            ));
        }
        if bundle.covariate_dim() != sample.covariate_dim() {
            return Err(EstimatorError::InvalidArgument(format!(
                "nuisances expect {} covariates, sample has {}",
                bundle.covariate_dim(),
                sample.covariate_dim()
            )));
        }
        if sample.n_right_censored() < 2 {
            return Err(EstimatorError::InsufficientData(format!(
                "need at least 2 right-censored rows, got {}",
                sample.n_right_censored()
            )));
        }
        let pi = options.pi.unwrap_or(sample.pi());
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(EstimatorError::InvalidArgument(format!(
                "pi must lie in (0, 1], got {pi}"
            )));
        }

        let win = bundle.window();
        let top = t_stars
            .iter()
            .copied()
            .fold(sample.max_time().max(win.c_upper), f64::max);
        let base = TimeGrid::uniform(
            options.grid_extent * top * (1.0 + 1e-9),
            options.grid_points,
        )?;
        let mut extra: Vec<f64> = t_stars.to_vec();
        extra.push(win.c_lower);
        extra.push(win.c_upper);
        let times: Vec<f64> = sample
            .observations()
            .iter()
            .map(|o| match o.outcome {
                Outcome::RightCensored { y, .. } => y,
                Outcome::CurrentStatus { c, .. } => c,
            })
            .collect();
        extra.extend(times.iter().copied().filter(|&t| t > 0.0));
        let grid = Arc::new(base.with_points(&extra)?);
        let row_index = times
            .iter()
            .map(|&t| grid.index_of(t).unwrap_or_else(|| grid.cell_end(t)))
            .collect();

        let mut map: BTreeMap<Vec<u64>, Group> = BTreeMap::new();
        for (i, o) in sample.observations().iter().enumerate() {
            let key: Vec<u64> = o.covariates.iter().map(|v| v.to_bits()).collect();
            map.entry(key)
                .or_insert_with(|| Group {
                    w: o.covariates.clone(),
                    rows: Vec::new(),
                })
                .rows
                .push(i);
        }
        Ok(Self {
            sample,
            bundle,
            options,
            t_stars: t_stars.to_vec(),
            grid,
            pi,
            groups: map.into_values().collect(),
            row_index,
        })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn distinct_covariates(&self) -> usize {
        self.groups.len()
    }

    fn check_kind(&self, kind: FusionKind) -> Result<(), EstimatorError> {
        let n0 = self.sample.n_current_status();
        if kind.uses_current_status() && self.pi < 1.0 && n0 < 2 {
            return Err(EstimatorError::InsufficientData(format!(
                "fusion estimators need at least 2 current-status rows, got {n0}"
            )));
        }
        if let FusionKind::Shift(target) = kind {
            if target > 1 {
                return Err(EstimatorError::InvalidArgument(format!(
                    "target source must be 0 or 1, got {target}"
                )));
            }
            if self.bundle.ratio.is_none() {
                return Err(EstimatorError::InvalidArgument(
                    "covariate-shift estimation needs a density-ratio model".into(),
                ));
            }
            let (share, count) = if target == 1 {
                (self.pi, self.sample.n_right_censored())
            } else {
                (1.0 - self.pi, n0)
            };
            if !(share > 0.0) || count == 0 {
                return Err(EstimatorError::InvalidArgument(format!(
                    "target source {target} has probability zero in this sample"
                )));
            }
        }
        Ok(())
    }

    /// Runs every requested estimator at every `t*`; results are ordered by
    /// `t*` first, then by the order of `kinds`.
    pub fn estimate(&self, kinds: &[FusionKind]) -> Result<Vec<EstimateResult>, EstimatorError> {
        if kinds.is_empty() {
            return Ok(Vec::new());
        }
        for &k in kinds {
            self.check_kind(k)?;
        }
        let n = self.sample.len();
        let mut accs: Vec<Accumulator> = self
            .t_stars
            .iter()
            .flat_map(|&t| {
                kinds.iter().map(move |&kind| Accumulator {
                    kind,
                    t_star: t,
                    terms: vec![GradientTerm::default(); n],
                    centre: vec![0.0; n],
                    mu: vec![0.0; n],
                    max_residual: 0.0,
                    regularized: 0,
                    clipped_rows: 0,
                })
            })
            .collect();

        let kernel = match &self.bundle.inspection {
            InspectionDensityModel::Kernel(k) => Some(k),
            _ => None,
        };
        for chunk in self.groups.chunks(KERNEL_BATCH) {
            let rows_g = kernel.map(|k| {
                let ws: Vec<&[f64]> = chunk.iter().map(|g| g.w.as_slice()).collect();
                k.cdf_matrix(&ws, self.grid.points())
            });
            for (gi, group) in chunk.iter().enumerate() {
                let g_row: Option<Vec<f64>> = rows_g
                    .as_ref()
                    .map(|mat| mat.row(gi).iter().copied().collect());
                let base = Profile::compute(
                    self.bundle,
                    &group.w,
                    &self.grid,
                    self.t_stars[0],
                    g_row.as_deref(),
                );
                for (ti, &t_star) in self.t_stars.iter().enumerate() {
                    let profile = if ti == 0 {
                        base.clone()
                    } else {
                        base.retarget(self.bundle, &group.w, &self.grid, t_star)
                    };
                    if profile.gamma_floored > 0 {
                        return Err(EstimatorError::Positivity {
                            covariate: group.w.clone(),
                            detail: format!(
                                "censoring survival below {} at {} grid points before max(c_u, t*)",
                                self.bundle.censoring.epsilon, profile.gamma_floored
                            ),
                        });
                    }
                    let offset = ti * kinds.len();
                    let mut dr_cache: Option<FredholmSolution> = None;
                    for (ki, &kind) in kinds.iter().enumerate() {
                        let acc = &mut accs[offset + ki];
                        self.fill_group(group, &profile, t_star, kind, acc, &mut dr_cache)?;
                    }
                }
            }
        }

        accs.into_iter().map(|a| self.finish(a)).collect()
    }

    fn problem(&self, w: &[f64], t_star: f64) -> Result<FredholmProblem<'a>, EstimatorError> {
        Ok(FredholmProblem::new(
            self.pi,
            t_star,
            self.bundle,
            w.to_vec(),
            self.grid.clone(),
        )?)
    }

    fn fill_group(
        &self,
        group: &Group,
        profile: &Profile,
        t_star: f64,
        kind: FusionKind,
        acc: &mut Accumulator,
        dr_cache: &mut Option<FredholmSolution>,
    ) -> Result<(), EstimatorError> {
        let obs = self.sample.observations();
        let zeta = self.bundle.event.zeta;
        let cs_factor = |k: usize, delta: bool| {
            let f = profile.cdf[k];
            let fc = f.clamp(zeta, 1.0 - zeta);
            (if delta { 1.0 } else { 0.0 } - f) / (fc * (1.0 - fc))
        };
        match kind {
            FusionKind::RcOnly => {
                let hv: Vec<f64> = (0..profile.len())
                    .map(|j| if profile.above_t_star(j) { 1.0 } else { 0.0 })
                    .collect();
                let mart = Martingale::new(profile, &hv);
                for &i in &group.rows {
                    if let Outcome::RightCensored { delta_r, .. } = obs[i].outcome {
                        let c = 1.0 / self.pi;
                        acc.terms[i].rc_term = c * mart.integral(self.row_index[i], delta_r);
                        acc.centre[i] = c;
                    }
                    acc.mu[i] = profile.mu;
                }
            }
            FusionKind::Dr | FusionKind::Shift(_) => {
                let (h, centre_weight) = match kind {
                    FusionKind::Dr => {
                        if dr_cache.is_none() {
                            let p = self.problem(&group.w, t_star)?;
                            *dr_cache = Some(solve_on_profile(
                                &p,
                                profile,
                                SolutionKind::HStar,
                                self.options.solver,
                            )?);
                        }
                        (dr_cache.clone().expect("solved above"), None)
                    }
                    FusionKind::Shift(target) => {
                        let ratio = self.bundle.ratio.as_ref().expect("checked in check_kind");
                        let r = ratio.ratio(&group.w);
                        if ratio.is_clipped(&group.w) {
                            acc.clipped_rows += group.rows.len();
                        }
                        let weights = if target == 1 {
                            RatioWeights {
                                right_censored: 1.0,
                                current_status: 1.0 / r,
                            }
                        } else {
                            RatioWeights {
                                right_censored: r,
                                current_status: 1.0,
                            }
                        };
                        let p = self.problem(&group.w, t_star)?.with_ratio_weights(weights);
                        let sol = solve_on_profile(
                            &p,
                            profile,
                            SolutionKind::HStar,
                            self.options.solver,
                        )?;
                        let share = if target == 1 { self.pi } else { 1.0 - self.pi };
                        (sol, Some((target, share)))
                    }
                    _ => unreachable!(),
                };
                acc.max_residual = acc.max_residual.max(h.residual_sup);
                acc.regularized += h.regularized as usize;
                let hv = h.values.values();
                let big_h = h.derived.values();
                let mart = Martingale::new(profile, hv);
                for &i in &group.rows {
                    let k = self.row_index[i];
                    let source_one = match obs[i].outcome {
                        Outcome::RightCensored { delta_r, .. } => {
                            acc.terms[i].rc_term = mart.integral(k, delta_r);
                            true
                        }
                        Outcome::CurrentStatus { delta_c, .. } => {
                            acc.terms[i].cs_term = cs_factor(k, delta_c) * big_h[k];
                            false
                        }
                    };
                    acc.centre[i] = match centre_weight {
                        None => 1.0,
                        Some((target, share)) => {
                            if (target == 1) == source_one {
                                1.0 / share
                            } else {
                                0.0
                            }
                        }
                    };
                    acc.mu[i] = profile.mu;
                }
            }
            FusionKind::Eff => {
                let p = self.problem(&group.w, t_star)?;
                let eta =
                    solve_on_profile(&p, profile, SolutionKind::EtaStar, self.options.solver)?;
                acc.max_residual = acc.max_residual.max(eta.residual_sup);
                acc.regularized += eta.regularized as usize;
                let ev = eta.values.values();
                let theta = eta.derived.values();
                for &i in &group.rows {
                    let k = self.row_index[i];
                    match obs[i].outcome {
                        Outcome::RightCensored { delta_r, .. } => {
                            let jump = if delta_r { ev[k] } else { 0.0 };
                            acc.terms[i].rc_term = jump - theta[k];
                        }
                        Outcome::CurrentStatus { delta_c, .. } => {
                            acc.terms[i].cs_term =
                                cs_factor(k, delta_c) * profile.survival_left[k] * theta[k];
                        }
                    }
                    acc.centre[i] = 1.0;
                    acc.mu[i] = profile.mu;
                }
            }
        }
        Ok(())
    }

    fn finish(&self, acc: Accumulator) -> Result<EstimateResult, EstimatorError> {
        let n = self.sample.len();
        let plug: Vec<f64> = acc.centre.iter().zip(&acc.mu).map(|(c, m)| c * m).collect();
        let rest: Vec<f64> = acc.terms.iter().map(|t| t.rc_term + t.cs_term).collect();
        let plug_in = ordered_sum(&plug) / n as f64;
        let correction = ordered_sum(&rest) / n as f64;
        let point = plug_in + correction;
        let mut terms = acc.terms;
        for (i, t) in terms.iter_mut().enumerate() {
            t.mu_term = acc.centre[i] * (acc.mu[i] - point);
        }
        let gradient_values: Vec<f64> = terms.iter().map(GradientTerm::total).collect();
        let mean = ordered_mean(&gradient_values);
        let dev: Vec<f64> = gradient_values.iter().map(|g| (g - mean).powi(2)).collect();
        let var = ordered_sum(&dev) / (n as f64 - 1.0).max(1.0);
        let se = (var / n as f64).sqrt();
        if !point.is_finite() || !se.is_finite() {
            return Err(EstimatorError::Numerics(
                crate::numerics::NumericsError::NonFinite("estimate or standard error"),
            ));
        }
        let ci = wald_ci(point, se, self.options.alpha)?;

        let mut diagnostics = Diagnostics {
            max_residual: acc.max_residual,
            regularized_solves: acc.regularized,
            distinct_covariates: self.groups.len(),
            grid_points: self.grid.len(),
            asymptotic_guarantee: true,
            ..Diagnostics::default()
        };
        if self.bundle.censoring.degenerate {
            diagnostics
                .warnings
                .push("no censored rows; censoring model fixed at the floor rate".into());
        }
        if let FusionKind::Shift(_) = acc.kind {
            let frac = acc.clipped_rows as f64 / n as f64;
            diagnostics.clipped_fraction = Some(frac);
            if frac > OVERLAP_WARNING_FRACTION {
                diagnostics.warnings.push(format!(
                    "density ratio clipped for {:.1}% of rows; overlap is poor",
                    100.0 * frac
                ));
            }
        }
        Ok(EstimateResult {
            estimand: Estimand {
                t_star: acc.t_star,
                target_source: match acc.kind {
                    FusionKind::Shift(t) => Some(t),
                    _ => None,
                },
            },
            kind: acc.kind.estimator_kind(),
            point,
            se,
            ci,
            alpha: self.options.alpha,
            plug_in,
            correction,
            gradient_values,
            terms,
            nuisance_provenance: Some(self.bundle.provenance.to_string()),
            diagnostics,
        })
    }
}

/// Counting-process integral `∫ (h - E[h(T)|T >= u]) / Γ(u) dM(u)` on the
/// grid, with `h_j` constant on `(u_{j-1}, u_j]` and the compensator summed
/// cell by cell against the discrete hazard `1 - S_j / S_{j-1}`.
struct Martingale<'p> {
    profile: &'p Profile,
    /// `h_j - E[h(T) | T > u_j]`.
    centred: Vec<f64>,
    /// Compensator accumulated up to and including cell `j`.
    compensator: Vec<f64>,
}

impl<'p> Martingale<'p> {
    fn new(profile: &'p Profile, h: &[f64]) -> Self {
        let m = profile.len();
        let mut tail = vec![0.0; m];
        for j in (0..m - 1).rev() {
            tail[j] = tail[j + 1] + h[j + 1] * profile.d_cdf[j + 1];
        }
        let centred: Vec<f64> = (0..m)
            .map(|j| h[j] - tail[j] / profile.survival[j])
            .collect();
        let mut compensator = vec![0.0; m];
        for j in 1..m {
            let hazard = 1.0 - profile.survival[j] / profile.survival_left[j];
            let inv_gamma = 0.5 * (1.0 / profile.gamma[j - 1] + 1.0 / profile.gamma[j]);
            compensator[j] = compensator[j - 1] + centred[j] * hazard * inv_gamma;
        }
        Self {
            profile,
            centred,
            compensator,
        }
    }

    fn integral(&self, k: usize, event: bool) -> f64 {
        let jump = if event {
            self.centred[k] / self.profile.gamma[k]
        } else {
            0.0
        };
        jump - self.compensator[k]
    }
}
