use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{inspection_window, FusedSample};
use crate::estimators::{
    estimate_cs_only, naive_ivw_combine, CsOnlyConfig, EstimateResult, EstimationOptions,
    EstimatorError, EstimatorKind, FusionEngine, FusionKind,
};
use crate::fredholm::GridSolver;
use crate::nuisance::{
    fit_bundle, misspecified_bundle, oracle_bundle, MisspecifiedPart, NuisanceBundle,
    NuisanceConfig, W1Law,
};
use crate::numerics::{ordered_mean, ordered_sum, RngStream};

use super::{generate_dataset, true_phi_for, DgpSpec, SimulationError};

/// Largest share of failed replications a cell may have before the report
/// is flagged.
pub const FAILURE_CAP: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NuisanceMode {
    #[serde(rename = "fitted")]
    Fitted,
    #[serde(rename = "oracle")]
    Oracle,
    #[serde(rename = "misspec-event")]
    MisspecEvent,
    #[serde(rename = "misspec-gR")]
    MisspecGr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_total: Vec<usize>,
    pub t_star: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub nuisance: NuisanceMode,
    pub alpha: f64,
    pub dgp: DgpSpec,
    pub grid_points: usize,
    pub solver: GridSolver,
    /// Used in fitted mode.
    pub nuisance_config: NuisanceConfig,
    pub cs_only: CsOnlyConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_total: vec![300, 600, 1500],
            t_star: vec![0.2, 0.7, 0.9],
            replications: 500,
            seed: 0,
            estimators: vec![
                EstimatorKind::CsOnly,
                EstimatorKind::RcOnly,
                EstimatorKind::FusionDr,
                EstimatorKind::FusionEff,
            ],
            nuisance: NuisanceMode::Fitted,
            alpha: 0.05,
            dgp: DgpSpec::benchmark(),
            grid_points: 2000,
            solver: GridSolver::Sweep,
            nuisance_config: NuisanceConfig::default(),
            cs_only: CsOnlyConfig::default(),
        }
    }
}

impl SimConfig {
    /// Defaults of the rate study: `t* = 0.7`, 200 replications, CS-only,
    /// RC-only and DR.
    pub fn rate_default() -> Self {
        Self {
            t_star: vec![0.7],
            replications: 200,
            estimators: vec![
                EstimatorKind::CsOnly,
                EstimatorKind::RcOnly,
                EstimatorKind::FusionDr,
            ],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::InvalidConfig(m));
        if self.replications < 1 {
            return bad("replications must be at least 1".into());
        }
        if self.n_total.is_empty() || self.t_star.is_empty() || self.estimators.is_empty() {
            return bad("n_total, t_star and estimators must be non-empty".into());
        }
        if let Some(n) = self.n_total.iter().find(|&&n| n < 30) {
            return bad(format!("every n must be at least 30, got {n}"));
        }
        if let Some(t) = self.t_star.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return bad(format!("t* values must be positive and finite, got {t}"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.grid_points < 2 {
            return bad("grid_points must be at least 2".into());
        }
        let shifts = self
            .estimators
            .iter()
            .any(|k| matches!(k, EstimatorKind::Shift0 | EstimatorKind::Shift1));
        if shifts && self.nuisance == NuisanceMode::Fitted && !self.nuisance_config.fit_ratio {
            return bad("shift estimators in fitted mode need nuisance_config.fit_ratio".into());
        }
        self.dgp.validate()
    }

    fn options(&self) -> EstimationOptions {
        EstimationOptions {
            alpha: self.alpha,
            grid_points: self.grid_points,
            solver: self.solver,
            ..EstimationOptions::default()
        }
    }

    /// True value of the estimand of `kind` at `t_star`.
    pub fn truth(&self, kind: EstimatorKind, t_star: f64) -> f64 {
        let population = match kind {
            EstimatorKind::Shift0 => self.dgp.cs_w1,
            _ => W1Law::Uniform,
        };
        true_phi_for(&self.dgp, t_star, population)
    }
}

/// One row of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCell {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub t_star: f64,
    pub true_phi: f64,
    /// Replications that produced an estimate.
    pub replications: usize,
    pub failures: usize,
    /// Replications where the estimand is not identified by this estimator;
    /// neither failures nor part of the summaries.
    pub not_identified: usize,
    pub mean_point: Option<f64>,
    pub bias: Option<f64>,
    pub mse: Option<f64>,
    pub mean_ci_length: Option<f64>,
    pub coverage: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub cells: Vec<SimCell>,
    /// Some cell exceeded the failure cap.
    pub flagged: bool,
    /// One message per failed replication, in `(n, replication)` order.
    pub failure_messages: Vec<String>,
}

impl SimReport {
    pub fn cell(&self, kind: EstimatorKind, n: usize, t_star: f64) -> Option<&SimCell> {
        self.cells
            .iter()
            .find(|c| c.estimator == kind && c.n == n && c.t_star == t_star)
    }

    /// Table-shaped CSV, one row per (estimator, n, t*).
    pub fn to_csv(&self) -> Result<String, SimulationError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "estimator",
            "n",
            "t_star",
            "true_phi",
            "replications",
            "failures",
            "not_identified",
            "mean_point",
            "bias",
            "mse",
            "mean_ci_length",
            "coverage",
            "flagged",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            w.write_record([
                c.estimator.label().to_string(),
                c.n.to_string(),
                c.t_star.to_string(),
                c.true_phi.to_string(),
                c.replications.to_string(),
                c.failures.to_string(),
                c.not_identified.to_string(),
                opt(c.mean_point),
                opt(c.bias),
                opt(c.mse),
                opt(c.mean_ci_length),
                opt(c.coverage),
                c.flagged.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| SimulationError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| SimulationError::Io(e.to_string()))
    }
}

/// Outcome of one estimator in one replication.
#[derive(Debug, Clone)]
enum Outcome {
    Estimate { point: f64, ci: (f64, f64) },
    NotIdentified,
    Failed(String),
}

/// Outcomes of one replication, indexed `[t* index][estimator index]`.
type RepOutcomes = Vec<Vec<Outcome>>;

fn bundle_for(config: &SimConfig, sample: &FusedSample) -> Result<NuisanceBundle, SimulationError> {
    Ok(match config.nuisance {
        NuisanceMode::Oracle => oracle_bundle(&config.dgp),
        NuisanceMode::MisspecEvent => misspecified_bundle(&config.dgp, MisspecifiedPart::Event),
        NuisanceMode::MisspecGr => {
            misspecified_bundle(&config.dgp, MisspecifiedPart::InspectionCensoring)
        }
        NuisanceMode::Fitted => {
            let window = inspection_window(sample, (0.0, 1.0))?;
            fit_bundle(sample, window, &config.nuisance_config)?
        }
    })
}

fn classify(r: Result<&EstimateResult, &EstimatorError>) -> Outcome {
    match r {
        Ok(e) => Outcome::Estimate {
            point: e.point,
            ci: e.ci,
        },
        Err(EstimatorError::NotIdentified { .. }) => Outcome::NotIdentified,
        Err(e) => Outcome::Failed(e.to_string()),
    }
}

/// Stream id of replication `rep` at sample size `n`.
fn stream_id(n: usize, rep: usize) -> u64 {
    ((n as u64) << 32) | rep as u64
}

fn run_one(config: &SimConfig, n: usize, rep: usize) -> RepOutcomes {
    let ks = &config.estimators;
    let all_failed = |msg: String| vec![vec![Outcome::Failed(msg); ks.len()]; config.t_star.len()];
    let mut stream = RngStream::new(config.seed, stream_id(n, rep));
    let sample = match generate_dataset(&config.dgp, n, &mut stream) {
        Ok(s) => s,
        Err(e) => return all_failed(e.to_string()),
    };
    let fusion: Vec<FusionKind> = ks
        .iter()
        .filter_map(|&k| FusionKind::from_estimator_kind(k))
        .collect();
    let needs_cs = ks
        .iter()
        .any(|k| matches!(k, EstimatorKind::CsOnly | EstimatorKind::NaiveIvw));
    let needs_rc = ks
        .iter()
        .any(|k| matches!(k, EstimatorKind::RcOnly | EstimatorKind::NaiveIvw));
    let mut fusion_kinds = fusion.clone();
    if needs_rc && !fusion_kinds.contains(&FusionKind::RcOnly) {
        fusion_kinds.push(FusionKind::RcOnly);
    }

    // fusion results indexed [t*][fusion kind]
    let mut fused: Vec<Vec<Result<EstimateResult, String>>> = Vec::new();
    if !fusion_kinds.is_empty() {
        let outcome = bundle_for(config, &sample)
            .map_err(|e| e.to_string())
            .and_then(|bundle| {
                let engine = FusionEngine::new(&sample, &bundle, &config.t_star, config.options())
                    .map_err(|e| e.to_string())?;
                let nt = config.t_star.len();
                let mut per_t: Vec<Vec<Result<EstimateResult, String>>> =
                    (0..nt).map(|_| Vec::new()).collect();
                match engine.estimate(&fusion_kinds) {
                    Ok(all) => {
                        for (i, r) in all.into_iter().enumerate() {
                            per_t[i / fusion_kinds.len()].push(Ok(r));
                        }
                    }
                    // isolate the failing estimator
                    Err(_) => {
                        for &k in &fusion_kinds {
                            match engine.estimate(&[k]) {
                                Ok(all) => {
                                    for (ti, r) in all.into_iter().enumerate() {
                                        per_t[ti].push(Ok(r));
                                    }
                                }
                                Err(e) => {
                                    for row in per_t.iter_mut() {
                                        row.push(Err(e.to_string()));
                                    }
                                }
                            }
                        }
                    }
                }
                Ok(per_t)
            });
        match outcome {
            Ok(v) => fused = v,
            Err(msg) => return all_failed(msg),
        }
    }

    let mut cs_cfg = config.cs_only.clone();
    cs_cfg.seed = config.cs_only.seed ^ stream_id(n, rep).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut out = Vec::with_capacity(config.t_star.len());
    for (ti, &t) in config.t_star.iter().enumerate() {
        let cs = needs_cs.then(|| estimate_cs_only(&sample, t, config.alpha, &cs_cfg));
        let fusion_of = |fk: FusionKind| -> Option<&Result<EstimateResult, String>> {
            fusion_kinds
                .iter()
                .position(|&k| k == fk)
                .map(|i| &fused[ti][i])
        };
        let mut row = Vec::with_capacity(ks.len());
        for &k in ks {
            let o = match k {
                EstimatorKind::CsOnly => classify(cs.as_ref().expect("cs was run").as_ref()),
                EstimatorKind::NaiveIvw => {
                    let rc = fusion_of(FusionKind::RcOnly).expect("rc was run");
                    match (cs.as_ref().expect("cs was run"), rc) {
                        (Err(EstimatorError::NotIdentified { .. }), _) => Outcome::NotIdentified,
                        (Err(e), _) => Outcome::Failed(e.to_string()),
                        (_, Err(e)) => Outcome::Failed(e.clone()),
                        (Ok(a), Ok(b)) => classify(naive_ivw_combine(a, b).as_ref()),
                    }
                }
                _ => {
                    let fk = FusionKind::from_estimator_kind(k).expect("fusion kind");
                    match fusion_of(fk).expect("fusion kind was run") {
                        Ok(e) => Outcome::Estimate {
                            point: e.point,
                            ci: e.ci,
                        },
                        Err(e) => Outcome::Failed(e.clone()),
                    }
                }
            };
            row.push(o);
        }
        out.push(row);
    }
    out
}

/// Runs every replication on one thread.
pub fn run_replications(config: &SimConfig) -> Result<SimReport, SimulationError> {
    run_replications_with(config, 1)
}

/// Runs the replications on `threads` workers. The report does not depend
/// on `threads`.
pub fn run_replications_with(
    config: &SimConfig,
    threads: usize,
) -> Result<SimReport, SimulationError> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = config
        .n_total
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |r| (n, r)))
        .collect();
    let slots: Vec<Mutex<Option<RepOutcomes>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let j = next.fetch_add(1, Ordering::Relaxed);
        if j >= jobs.len() {
            break;
        }
        let (n, rep) = jobs[j];
        let res = run_one(config, n, rep);
        *slots[j].lock().expect("slot lock") = Some(res);
        if (rep + 1) % 50 == 0 {
            log::info!(
                "n = {n}: replication {} of {}",
                rep + 1,
                config.replications
            );
        }
    };
    let threads = threads.max(1).min(jobs.len());
    if threads == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(worker);
            }
        });
    }
    let results: Vec<RepOutcomes> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every job ran"))
        .collect();

    let mut cells = Vec::new();
    let mut failure_messages = Vec::new();
    for (ni, &n) in config.n_total.iter().enumerate() {
        let reps = &results[ni * config.replications..(ni + 1) * config.replications];
        for (ti, &t) in config.t_star.iter().enumerate() {
            for (ki, &kind) in config.estimators.iter().enumerate() {
                let truth = config.truth(kind, t);
                let mut points = Vec::new();
                let mut sq = Vec::new();
                let mut lengths = Vec::new();
                let mut covered = 0usize;
                let (mut failures, mut not_identified) = (0, 0);
                for (rep, r) in reps.iter().enumerate() {
                    match &r[ti][ki] {
                        Outcome::Estimate { point, ci } => {
                            points.push(*point);
                            sq.push((point - truth).powi(2));
                            lengths.push(ci.1 - ci.0);
                            if ci.0 <= truth && truth <= ci.1 {
                                covered += 1;
                            }
                        }
                        Outcome::NotIdentified => not_identified += 1,
                        Outcome::Failed(msg) => {
                            failures += 1;
                            failure_messages.push(format!(
                                "{} n={n} t*={t} replication {rep}: {msg}",
                                kind.label()
                            ));
                        }
                    }
                }
                let k = points.len();
                let some = |v: f64| (k > 0).then_some(v);
                let mean = some(ordered_mean(&points));
                cells.push(SimCell {
                    estimator: kind,
                    n,
                    t_star: t,
                    true_phi: truth,
                    replications: k,
                    failures,
                    not_identified,
                    mean_point: mean,
                    bias: mean.map(|m| m - truth),
                    mse: some(ordered_mean(&sq)),
                    mean_ci_length: some(ordered_mean(&lengths)),
                    coverage: some(covered as f64 / k.max(1) as f64),
                    flagged: failures as f64 > FAILURE_CAP * config.replications as f64,
                });
            }
        }
    }
    let flagged = cells.iter().any(|c| c.flagged);
    if flagged {
        log::warn!("failure cap exceeded in at least one cell");
    }
    Ok(SimReport {
        config: config.clone(),
        cells,
        flagged,
        failure_messages,
    })
}

/// Least-squares line of `log MSE` on `log n` for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub estimator: EstimatorKind,
    pub log_n: Vec<f64>,
    pub log_mse: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub t_star: f64,
    pub fits: Vec<RateFit>,
    pub report: SimReport,
}

impl RateStudy {
    pub fn fit(&self, kind: EstimatorKind) -> Option<&RateFit> {
        self.fits.iter().find(|f| f.estimator == kind)
    }

    /// Long-format CSV: `estimator, log_n, log_mse, slope, intercept`.
    pub fn to_csv(&self) -> Result<String, SimulationError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["estimator", "log_n", "log_mse", "slope", "intercept"])?;
        for f in &self.fits {
            for (x, y) in f.log_n.iter().zip(&f.log_mse) {
                w.write_record([
                    f.estimator.label().to_string(),
                    x.to_string(),
                    y.to_string(),
                    f.slope.to_string(),
                    f.intercept.to_string(),
                ])?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| SimulationError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| SimulationError::Io(e.to_string()))
    }
}

/// `(slope, intercept)` of the least-squares line through the points.
pub fn ols_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = ordered_mean(x);
    let my = ordered_mean(y);
    let sxy: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let sxx: Vec<f64> = x.iter().map(|a| (a - mx).powi(2)).collect();
    let den = ordered_sum(&sxx);
    if den <= 0.0 {
        return None;
    }
    let slope = ordered_sum(&sxy) / den;
    Some((slope, my - slope * mx))
}

/// Slope of `log MSE` on `log n` per estimator at a single `t*`.
pub fn rate_study(config: &SimConfig, threads: usize) -> Result<RateStudy, SimulationError> {
    let mut distinct = config.n_total.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(SimulationError::InvalidConfig(
            "the rate study needs at least 3 distinct n values".into(),
        ));
    }
    if config.replications < 200 {
        return Err(SimulationError::InvalidConfig(format!(
            "the rate study needs at least 200 replications, got {}",
            config.replications
        )));
    }
    if config.t_star.len() != 1 {
        return Err(SimulationError::InvalidConfig(
            "the rate study takes exactly one t*".into(),
        ));
    }
    let report = run_replications_with(config, threads)?;
    let t_star = config.t_star[0];
    let mut fits = Vec::new();
    for &kind in &config.estimators {
        let mut by_n = BTreeMap::new();
        for c in report.cells.iter().filter(|c| c.estimator == kind) {
            if let Some(mse) = c.mse.filter(|m| *m > 0.0) {
                by_n.insert(c.n, mse.ln());
            }
        }
        let log_n: Vec<f64> = by_n.keys().map(|&n| (n as f64).ln()).collect();
        let log_mse: Vec<f64> = by_n.values().copied().collect();
        let (slope, intercept) = ols_line(&log_n, &log_mse).ok_or_else(|| {
            SimulationError::InvalidConfig(format!(
                "{}: fewer than 2 sample sizes with a finite MSE",
                kind.label()
            ))
        })?;
        fits.push(RateFit {
            estimator: kind,
            log_n,
            log_mse,
            slope,
            intercept,
        });
    }
    Ok(RateStudy {
        t_star,
        fits,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_a_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 - 2.0 * v).collect();
        let (s, i) = ols_line(&x, &y).unwrap();
        assert!((s + 2.0).abs() < 1e-12 && (i - 0.5).abs() < 1e-12);
        assert!(ols_line(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = [
            SimConfig {
                replications: 0,
                ..SimConfig::default()
            },
            SimConfig {
                n_total: vec![29],
                ..SimConfig::default()
            },
            SimConfig {
                alpha: 1.0,
                ..SimConfig::default()
            },
            SimConfig {
                estimators: vec![EstimatorKind::Shift0],
                ..SimConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let json = r#"{"n_total": [300], "bogus": 1}"#;
        assert!(serde_json::from_str::<SimConfig>(json).is_err());
    }

    #[test]
    fn truth_depends_on_the_target_population() {
        let c = SimConfig {
            dgp: DgpSpec::benchmark_shifted(),
            ..SimConfig::default()
        };
        assert_eq!(
            c.truth(EstimatorKind::FusionDr, 0.7),
            c.truth(EstimatorKind::Shift1, 0.7)
        );
        assert!(c.truth(EstimatorKind::Shift0, 0.7) < c.truth(EstimatorKind::Shift1, 0.7));
    }
}
