use crate::data::InspectionWindow;
use crate::nuisance::NuisanceBundle;
use crate::numerics::TimeGrid;

/// Floor on survival values inside the `η*` assembly.
pub const SURVIVAL_FLOOR: f64 = 1e-6;

/// Nuisance values for one covariate value on a grid `u_0 < ... < u_{m-1}`.
///
/// Increments are left-Riemann: `dF_j = F(u_j) - F(u_{j-1})`, `dF_0 = F(u_0)`,
/// and the last increment absorbs the mass `1 - F(u_{m-1})` so that the
/// increments sum to one.
#[derive(Debug, Clone)]
pub struct Profile {
    /// `F(u_j|w)` without the tail closure.
    pub cdf: Vec<f64>,
    pub d_cdf: Vec<f64>,
    /// `max(1 - F(u_j|w), floor)` with the tail closure (last entry floored).
    pub survival: Vec<f64>,
    /// `S(u_{j-1}|w)`, one at `j = 0`.
    pub survival_left: Vec<f64>,
    pub inspection_cdf: Vec<f64>,
    pub d_inspection_cdf: Vec<f64>,
    /// `dG_k / (F_k (1 - F_k))` with `F` clipped on the window.
    pub q: Vec<f64>,
    /// `Γ(u_j|w)` floored at the censoring model's epsilon.
    pub gamma: Vec<f64>,
    /// Grid points on `[0, max(c_u, t*)]` where the floor was active.
    pub gamma_floored: usize,
    /// `S(t*|w)`.
    pub mu: f64,
    /// Index of `t*` on the grid.
    pub t_star_index: usize,
}

impl Profile {
    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    /// Builds a profile; `inspection_row` optionally supplies `G(u_j|w)`
    /// computed in a batch.
    pub fn compute(
        bundle: &NuisanceBundle,
        w: &[f64],
        grid: &TimeGrid,
        t_star: f64,
        inspection_row: Option<&[f64]>,
    ) -> Self {
        let pts = grid.points();
        let m = pts.len();
        let curve = bundle.event.at(w);
        let cens = bundle.censoring.hazard.at(w);
        let window: InspectionWindow = bundle.window();
        let zeta = bundle.event.zeta;
        let eps = bundle.censoring.epsilon;
        let relevant = window.c_upper.max(t_star);

        let cdf: Vec<f64> = pts.iter().map(|&t| curve.cdf(t)).collect();
        let mut d_cdf = Vec::with_capacity(m);
        let mut prev = 0.0;
        for &f in &cdf {
            d_cdf.push(f - prev);
            prev = f;
        }
        d_cdf[m - 1] += 1.0 - cdf[m - 1];
        let mut survival: Vec<f64> = cdf.iter().map(|f| (1.0 - f).max(SURVIVAL_FLOOR)).collect();
        survival[m - 1] = SURVIVAL_FLOOR;
        let mut survival_left = Vec::with_capacity(m);
        survival_left.push(1.0);
        survival_left.extend_from_slice(&survival[..m - 1]);

        let inspection_cdf: Vec<f64> = match inspection_row {
            Some(r) => r.to_vec(),
            None => pts.iter().map(|&t| bundle.inspection.cdf(t, w)).collect(),
        };
        let mut d_inspection_cdf = Vec::with_capacity(m);
        let mut prev = 0.0;
        for &g in &inspection_cdf {
            d_inspection_cdf.push((g - prev).max(0.0));
            prev = g;
        }
        let q: Vec<f64> = d_inspection_cdf
            .iter()
            .zip(&cdf)
            .map(|(&dg, &f)| {
                if dg > 0.0 {
                    let fc = f.clamp(zeta, 1.0 - zeta);
                    dg / (fc * (1.0 - fc))
                } else {
                    0.0
                }
            })
            .collect();
        let mut gamma_floored = 0;
        let gamma: Vec<f64> = pts
            .iter()
            .map(|&t| {
                let g = cens.survival(t);
                if g < eps {
                    if t <= relevant {
                        gamma_floored += 1;
                    }
                    eps
                } else {
                    g
                }
            })
            .collect();
        let t_star_index = grid.cell_end(t_star).min(m - 1);
        Self {
            cdf,
            d_cdf,
            survival,
            survival_left,
            inspection_cdf,
            d_inspection_cdf,
            q,
            gamma,
            gamma_floored,
            mu: curve.survival(t_star),
            t_star_index,
        }
    }

    /// Same profile for another target time on the same grid.
    pub fn retarget(
        &self,
        bundle: &NuisanceBundle,
        w: &[f64],
        grid: &TimeGrid,
        t_star: f64,
    ) -> Self {
        let m = self.len();
        let relevant = bundle.window().c_upper.max(t_star);
        let pts = grid.points();
        let gamma_floored = (0..m)
            .filter(|&j| pts[j] <= relevant && self.gamma[j] <= bundle.censoring.epsilon)
            .count();
        Self {
            mu: bundle.event.at(w).survival(t_star),
            t_star_index: grid.cell_end(t_star).min(m - 1),
            gamma_floored,
            ..self.clone()
        }
    }

    /// `1(u_j > t*)`.
    pub fn above_t_star(&self, j: usize) -> bool {
        j > self.t_star_index
    }
}
