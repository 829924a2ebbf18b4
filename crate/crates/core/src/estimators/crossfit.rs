use super::{wald_ci, EstimateResult, EstimationOptions, EstimatorError, FusionEngine, FusionKind};
use crate::data::{FusedObservation, FusedSample, InspectionWindow};
use crate::nuisance::{fit_bundle, NuisanceConfig};
use crate::numerics::RngStream;

/// Fold labels, assigned separately within each source so every fold keeps
/// both kinds of rows.
fn fold_labels(sample: &FusedSample, folds: usize, seed: u64) -> Vec<usize> {
    let mut stream = RngStream::new(seed, 0xc8055f17);
    let mut labels = vec![0; sample.len()];
    for source_rc in [true, false] {
        let mut rows: Vec<usize> = (0..sample.len())
            .filter(|&i| sample.observations()[i].is_right_censored() == source_rc)
            .collect();
        for i in (1..rows.len()).rev() {
            let j = stream.index(i + 1);
            rows.swap(i, j);
        }
        for (pos, &i) in rows.iter().enumerate() {
            labels[i] = pos % folds;
        }
    }
    labels
}

fn subset(
    sample: &FusedSample,
    keep: impl Fn(usize) -> bool,
) -> Result<FusedSample, EstimatorError> {
    let rows: Vec<FusedObservation> = sample
        .observations()
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, o)| o.clone())
        .collect();
    Ok(FusedSample::new(rows)?)
}

/// K-fold cross-fitted fusion estimates. Nuisances are fitted on the other
/// folds and the gradient is evaluated on the held-out fold; fold estimates
/// are averaged with weights `n_k / n` and their variances combined
/// accordingly. Output layout matches [`FusionEngine::estimate`]; gradient
/// values are grouped by fold rather than in sample order.
#[allow(clippy::too_many_arguments)]
pub fn estimate_cross_fitted(
    sample: &FusedSample,
    window: InspectionWindow,
    t_stars: &[f64],
    kinds: &[FusionKind],
    folds: usize,
    nuisance: &NuisanceConfig,
    options: &EstimationOptions,
    seed: u64,
) -> Result<Vec<EstimateResult>, EstimatorError> {
    if folds < 2 {
        return Err(EstimatorError::InvalidArgument(format!(
            "cross-fitting needs at least 2 folds, got {folds}"
        )));
    }
    if sample.n_right_censored() < 2 * folds || sample.n_current_status() < 5 * folds {
        return Err(EstimatorError::InsufficientData(format!(
            "too few rows for {folds} folds"
        )));
    }
    let labels = fold_labels(sample, folds, seed);
    let options = EstimationOptions {
        pi: Some(options.pi.unwrap_or(sample.pi())),
        ..options.clone()
    };
    let n = sample.len() as f64;
    let mut per_fold: Vec<(f64, Vec<EstimateResult>)> = Vec::with_capacity(folds);
    for k in 0..folds {
        let train = subset(sample, |i| labels[i] != k)?;
        let held = subset(sample, |i| labels[i] == k)?;
        let bundle = fit_bundle(&train, window, nuisance)?;
        let engine = FusionEngine::new(&held, &bundle, t_stars, options.clone())?;
        per_fold.push((held.len() as f64 / n, engine.estimate(kinds)?));
    }

    let count = per_fold[0].1.len();
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let mut combined = per_fold[0].1[j].clone();
        let (mut point, mut plug_in, mut correction, mut var) = (0.0, 0.0, 0.0, 0.0);
        let mut gradient_values = Vec::new();
        let mut terms = Vec::new();
        for (f, (share, results)) in per_fold.iter().enumerate() {
            let r = &results[j];
            point += share * r.point;
            plug_in += share * r.plug_in;
            correction += share * r.correction;
            var += (share * r.se).powi(2);
            gradient_values.extend_from_slice(&r.gradient_values);
            terms.extend_from_slice(&r.terms);
            let d = &mut combined.diagnostics;
            d.max_residual = d.max_residual.max(r.diagnostics.max_residual);
            if f > 0 {
                d.regularized_solves += r.diagnostics.regularized_solves;
                d.distinct_covariates += r.diagnostics.distinct_covariates;
                for w in &r.diagnostics.warnings {
                    if !d.warnings.contains(w) {
                        d.warnings.push(w.clone());
                    }
                }
            }
        }
        combined.point = point;
        combined.plug_in = plug_in;
        combined.correction = correction;
        combined.se = var.sqrt();
        combined.ci = wald_ci(point, combined.se, options.alpha)?;
        combined.gradient_values = gradient_values;
        combined.terms = terms;
        combined.nuisance_provenance = Some(format!("cross-fitted ({folds} folds)"));
        out.push(combined);
    }
    Ok(out)
}
