use std::sync::Arc;

use serde::Serialize;

use super::NumericsError;

/// Ascending time grid used for every quadrature and discretized system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

/// Extra points closer than this (relative to the grid span) to an existing
/// point replace it instead of being inserted.
const MERGE_TOLERANCE: f64 = 1e-12;

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self, NumericsError> {
        if points.len() < 2 {
            return Err(NumericsError::InvalidArgument(format!(
                "a time grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(NumericsError::NonFinite("time grid"));
        }
        if points[0] < 0.0 {
            return Err(NumericsError::InvalidArgument(
                "time grid points must be non-negative".into(),
            ));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(NumericsError::InvalidArgument(
                "time grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// `count` equally spaced points on `[0, t_max]`.
    pub fn uniform(t_max: f64, count: usize) -> Result<Self, NumericsError> {
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(NumericsError::InvalidArgument(format!(
                "grid upper end must be positive and finite, got {t_max}"
            )));
        }
        if count < 2 {
            return Err(NumericsError::InvalidArgument(
                "a time grid needs at least 2 points".into(),
            ));
        }
        let step = t_max / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|i| i as f64 * step).collect();
        points[count - 1] = t_max;
        Self::new(points)
    }

    /// Returns a grid containing every current point plus `extra`. Extra
    /// points that coincide (up to rounding) with an existing point replace
    /// it, so that lookups of the extra values are exact afterwards.
    pub fn with_points(&self, extra: &[f64]) -> Result<Self, NumericsError> {
        let span = self.t_max().max(1.0);
        let mut extra: Vec<f64> = extra.to_vec();
        if extra.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(NumericsError::InvalidArgument(
                "extra grid points must be finite and non-negative".into(),
            ));
        }
        extra.sort_by(f64::total_cmp);
        extra.dedup();

        let mut merged: Vec<f64> = Vec::with_capacity(self.points.len() + extra.len());
        let mut i = 0;
        let mut j = 0;
        while i < self.points.len() || j < extra.len() {
            let next = match (self.points.get(i), extra.get(j)) {
                (Some(&a), Some(&b)) if (a - b).abs() <= MERGE_TOLERANCE * span => {
                    i += 1;
                    j += 1;
                    b
                }
                (Some(&a), Some(&b)) if a < b => {
                    i += 1;
                    a
                }
                (Some(_), Some(&b)) => {
                    j += 1;
                    b
                }
                (Some(&a), None) => {
                    i += 1;
                    a
                }
                (None, Some(&b)) => {
                    j += 1;
                    b
                }
                (None, None) => unreachable!(),
            };
            match merged.last() {
                Some(&last) if (next - last).abs() <= MERGE_TOLERANCE * span => {
                    // keep whichever value was supplied explicitly (extra wins)
                    if extra.binary_search_by(|e| e.total_cmp(&next)).is_ok() {
                        *merged.last_mut().unwrap() = next;
                    }
                }
                _ => merged.push(next),
            }
        }
        Self::new(merged)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn t_max(&self) -> f64 {
        *self.points.last().expect("grid has at least two points")
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of a point that is exactly on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.points.binary_search_by(|p| p.total_cmp(&t)).ok()
    }

    /// Index of the first grid point `>= t` (the end of the cell containing `t`).
    pub fn cell_end(&self, t: f64) -> usize {
        self.points.partition_point(|&p| p < t)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.points[0] && t <= self.t_max()
    }
}

/// Values of a function at the points of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunctionOnGrid {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
}

impl StepFunctionOnGrid {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self, NumericsError> {
        if values.len() != grid.len() {
            return Err(NumericsError::LengthMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite("grid function values"));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn shared_grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Trapezoidal rule `sum 0.5 (f_j + f_{j+1}) (u_{j+1} - u_j)`.
pub fn trapezoid_integral(f_values: &[f64], grid: &TimeGrid) -> Result<f64, NumericsError> {
    if f_values.len() != grid.len() {
        return Err(NumericsError::LengthMismatch {
            expected: grid.len(),
            found: f_values.len(),
        });
    }
    if f_values.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite("integrand"));
    }
    let p = grid.points();
    Ok(f_values
        .windows(2)
        .zip(p.windows(2))
        .map(|(f, u)| 0.5 * (f[0] + f[1]) * (u[1] - u[0]))
        .sum())
}
