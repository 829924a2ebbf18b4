use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use survfuse::data::{ingest_csv, inspection_window, CsvSchema, FusedSample};
use survfuse::estimators::{
    estimate_cross_fitted, estimate_cs_only, naive_ivw_combine, CsOnlyConfig, EstimateResult,
    EstimationOptions, EstimatorError, EstimatorKind, FusionEngine, FusionKind,
};
use survfuse::fredholm::{
    eta_system, h_system, solve_on_profile, FredholmProblem, GridSolver, SolutionKind,
};
use survfuse::nuisance::{fit_bundle, oracle_bundle, NuisanceBundle, NuisanceConfig};
use survfuse::numerics::{RngStream, TimeGrid};
use survfuse::simulation::{
    generate_dataset, rate_study, run_replications_with, DgpSpec, SimConfig,
};
use survfuse::Error;

/// Exit status when a simulation report exceeds its failure cap.
const EXIT_FLAGGED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "survfuse",
    version,
    about = "Survival probabilities from fused right-censored and current-status samples"
)]
struct Cli {
    /// Log level for stderr (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate S(t*) from a CSV file.
    Estimate(EstimateArgs),
    /// Monte Carlo replications from a JSON config.
    Simulate(SimulateArgs),
    /// log MSE against log n slopes.
    Rates(SimulateArgs),
    /// Solve h* and eta* at one covariate value of a named design.
    Solve(SolveArgs),
    /// Write a simulated sample as CSV.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorChoice {
    Cs,
    Rc,
    Dr,
    Eff,
    Shift0,
    Shift1,
    All,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Repeatable.
    #[arg(long = "t-star", required = true)]
    t_star: Vec<f64>,
    #[arg(long, value_enum, default_value = "all")]
    estimator: EstimatorChoice,
    /// `fit`, or `oracle:<design>` with a design such as `benchmark`.
    #[arg(long, default_value = "fit")]
    nuisance: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the empirical share of right-censored rows.
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    grid_points: usize,
    /// Number of folds for cross-fitted nuisances; fusion estimators only.
    #[arg(long)]
    cross_fit: Option<usize>,
    /// JSON file with the column names.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON config; `rates` falls back to its defaults without one.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// CSV table; stdout when absent.
    #[arg(long)]
    output_csv: Option<PathBuf>,
    #[arg(long)]
    output_json: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value = "benchmark")]
    dgp: String,
    /// Comma-separated covariate value.
    #[arg(long, value_delimiter = ',', required = true)]
    w: Vec<f64>,
    #[arg(long)]
    pi: f64,
    #[arg(long = "t-star")]
    t_star: f64,
    #[arg(long, default_value_t = 2000)]
    grid_points: usize,
    #[arg(long, default_value_t = 1.25)]
    grid_extent: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "benchmark")]
    dgp: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Numeric(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

macro_rules! lift {
    ($e:expr) => {
        $e.map_err(|e| CliError::from(Error::from(e)))
    };
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Validation(format!("{}: {e}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_error(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        log::info!("no --seed given; using random seed {s}");
        s
    })
}

fn dgp_by_id(id: &str) -> Result<DgpSpec, CliError> {
    DgpSpec::by_id(id).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown design `{id}`; expected benchmark or benchmark-shift"
        ))
    })
}

#[derive(Serialize)]
struct EstimateReport {
    input: String,
    seed: u64,
    t_star: Vec<f64>,
    nuisance_provenance: String,
    results: Vec<EstimateResult>,
    errors: Vec<EstimateFailure>,
}

#[derive(Serialize)]
struct EstimateFailure {
    estimator: EstimatorKind,
    t_star: f64,
    message: String,
}

fn load_bundle(
    spec: &str,
    sample: &FusedSample,
    fit_ratio: bool,
) -> Result<NuisanceBundle, CliError> {
    if spec == "fit" {
        let window = lift!(inspection_window(sample, (0.0, 1.0)))?;
        let config = NuisanceConfig {
            fit_ratio,
            ..NuisanceConfig::default()
        };
        return lift!(fit_bundle(sample, window, &config));
    }
    match spec.strip_prefix("oracle:") {
        Some(id) => Ok(oracle_bundle(&dgp_by_id(id)?)),
        None => Err(CliError::Validation(format!(
            "--nuisance must be `fit` or `oracle:<design>`, got `{spec}`"
        ))),
    }
}

fn cmd_estimate(args: EstimateArgs) -> Result<ExitCode, CliError> {
    let seed = resolve_seed(args.seed);
    let schema = match &args.schema {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            serde_json::from_str::<CsvSchema>(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
        }
        None => CsvSchema::default(),
    };
    let sample = lift!(ingest_csv(&args.input, &schema))?;
    let all = args.estimator == EstimatorChoice::All;
    let kinds: Vec<EstimatorKind> = match args.estimator {
        EstimatorChoice::Cs => vec![EstimatorKind::CsOnly],
        EstimatorChoice::Rc => vec![EstimatorKind::RcOnly],
        EstimatorChoice::Dr => vec![EstimatorKind::FusionDr],
        EstimatorChoice::Eff => vec![EstimatorKind::FusionEff],
        EstimatorChoice::Shift0 => vec![EstimatorKind::Shift0],
        EstimatorChoice::Shift1 => vec![EstimatorKind::Shift1],
        EstimatorChoice::All => vec![
            EstimatorKind::CsOnly,
            EstimatorKind::RcOnly,
            EstimatorKind::FusionDr,
            EstimatorKind::FusionEff,
        ],
    };
    let options = EstimationOptions {
        alpha: args.alpha,
        pi: args.pi,
        grid_points: args.grid_points,
        ..EstimationOptions::default()
    };
    let fusion: Vec<FusionKind> = kinds
        .iter()
        .filter_map(|&k| FusionKind::from_estimator_kind(k))
        .collect();
    let needs_ratio = fusion.iter().any(|k| matches!(k, FusionKind::Shift(_)));

    let start = std::time::Instant::now();
    let mut provenance = String::from("none");
    // [t*][kind]
    let mut slots: Vec<Vec<Option<Result<EstimateResult, Failed>>>> = args
        .t_star
        .iter()
        .map(|_| kinds.iter().map(|_| None).collect())
        .collect();
    if !fusion.is_empty() {
        let bundle = load_bundle(&args.nuisance, &sample, needs_ratio)?;
        provenance = bundle.provenance.to_string();
        let engine = lift!(FusionEngine::new(
            &sample,
            &bundle,
            &args.t_star,
            options.clone()
        ))?;
        let cross = match args.cross_fit {
            None | Some(1) => None,
            Some(k) if args.nuisance == "fit" => {
                provenance = format!("cross-fitted ({k} folds)");
                Some((k, lift!(inspection_window(&sample, (0.0, 1.0)))?))
            }
            Some(_) => {
                return Err(CliError::Validation(
                    "--cross-fit requires --nuisance fit".into(),
                ))
            }
        };
        let nuisance_config = NuisanceConfig {
            fit_ratio: needs_ratio,
            ..NuisanceConfig::default()
        };
        let run = |fk: &[FusionKind]| match cross {
            Some((k, window)) => estimate_cross_fitted(
                &sample,
                window,
                &args.t_star,
                fk,
                k,
                &nuisance_config,
                &options,
                seed,
            ),
            None => engine.estimate(fk),
        };
        let record = |slots: &mut Vec<Vec<Option<Result<EstimateResult, Failed>>>>,
                      fk: &[FusionKind],
                      res: Result<Vec<EstimateResult>, EstimatorError>| {
            let v = res?;
            for (i, r) in v.into_iter().enumerate() {
                let (ti, f) = (i / fk.len(), fk[i % fk.len()]);
                let ki = kinds
                    .iter()
                    .position(|&k| k == f.estimator_kind())
                    .expect("requested kind");
                slots[ti][ki] = Some(Ok(r));
            }
            Ok::<(), EstimatorError>(())
        };
        if let Err(e) = record(&mut slots, &fusion, run(&fusion)) {
            if !all {
                return Err(Failed::from(&e).into());
            }
            for &f in &fusion {
                if let Err(e) = record(&mut slots, &[f], run(&[f])) {
                    let ki = kinds
                        .iter()
                        .position(|&k| k == f.estimator_kind())
                        .expect("requested kind");
                    for row in slots.iter_mut() {
                        row[ki] = Some(Err(Failed::from(&e)));
                    }
                }
            }
        }
    }
    if let Some(ki) = kinds.iter().position(|&k| k == EstimatorKind::CsOnly) {
        let config = CsOnlyConfig {
            seed,
            ..CsOnlyConfig::default()
        };
        for (ti, &t) in args.t_star.iter().enumerate() {
            slots[ti][ki] = Some(
                estimate_cs_only(&sample, t, args.alpha, &config).map_err(|e| Failed::from(&e)),
            );
        }
    }
    log::info!("estimation took {:.2}s", start.elapsed().as_secs_f64());

    let mut results = Vec::new();
    let mut errors = Vec::new();
    for (ti, row) in slots.into_iter().enumerate() {
        let t = args.t_star[ti];
        let mut by_kind: Vec<(EstimatorKind, Result<EstimateResult, Failed>)> = kinds
            .iter()
            .zip(row)
            .map(|(&k, r)| (k, r.expect("every estimator ran")))
            .collect();
        if all {
            let ivw = match (&by_kind[0].1, &by_kind[1].1) {
                (Ok(cs), Ok(rc)) => naive_ivw_combine(cs, rc).map_err(|e| Failed::from(&e)),
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            };
            by_kind.push((EstimatorKind::NaiveIvw, ivw));
        }
        for (k, r) in by_kind {
            match r {
                Ok(mut est) => {
                    if est.nuisance_provenance.is_none()
                        && k != EstimatorKind::CsOnly
                        && k != EstimatorKind::NaiveIvw
                    {
                        est.nuisance_provenance = Some(provenance.clone());
                    }
                    results.push(est);
                }
                Err(e) if all => {
                    log::warn!("{} at t* = {t}: {}", k.label(), e.message);
                    errors.push(EstimateFailure {
                        estimator: k,
                        t_star: t,
                        message: e.message,
                    });
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    if results.is_empty() {
        return Err(CliError::Validation("no estimator succeeded".into()));
    }
    let report = EstimateReport {
        input: args.input.display().to_string(),
        seed,
        t_star: args.t_star.clone(),
        nuisance_provenance: provenance,
        results,
        errors,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_out(args.output.as_deref(), &json)?;
    Ok(ExitCode::SUCCESS)
}

/// An estimator error reduced to what the report and the exit code need.
#[derive(Clone)]
struct Failed {
    message: String,
    validation: bool,
}

impl From<&EstimatorError> for Failed {
    fn from(e: &EstimatorError) -> Self {
        Failed {
            message: e.to_string(),
            validation: e.is_validation(),
        }
    }
}

impl From<Failed> for CliError {
    fn from(f: Failed) -> Self {
        if f.validation {
            CliError::Validation(f.message)
        } else {
            CliError::Numeric(f.message)
        }
    }
}

fn load_sim_config(
    path: Option<&Path>,
    seed: Option<u64>,
    fallback: SimConfig,
) -> Result<SimConfig, CliError> {
    let (mut config, has_seed) = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            let has_seed = value.get("seed").is_some();
            let config: SimConfig = serde_json::from_value(value)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            (config, has_seed)
        }
        None => (fallback, false),
    };
    config.seed = match seed {
        Some(s) => s,
        None if has_seed => config.seed,
        None => resolve_seed(None),
    };
    lift!(config.validate())?;
    Ok(config)
}

fn threads(arg: Option<usize>) -> usize {
    arg.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, CliError> {
    let config = load_sim_config(args.config.as_deref(), args.seed, SimConfig::default())?;
    let start = std::time::Instant::now();
    let report = lift!(run_replications_with(&config, threads(args.threads)))?;
    log::info!("simulation took {:.1}s", start.elapsed().as_secs_f64());
    write_out(args.output_csv.as_deref(), &lift!(report.to_csv())?)?;
    if let Some(p) = &args.output_json {
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        fs::write(p, json).map_err(|e| io_error(p, e))?;
    }
    if report.flagged {
        log::error!(
            "failure cap exceeded; {} failed estimates",
            report.failure_messages.len()
        );
        return Ok(ExitCode::from(EXIT_FLAGGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_rates(args: SimulateArgs) -> Result<ExitCode, CliError> {
    let config = load_sim_config(args.config.as_deref(), args.seed, SimConfig::rate_default())?;
    let start = std::time::Instant::now();
    let study = lift!(rate_study(&config, threads(args.threads)))?;
    log::info!("rate study took {:.1}s", start.elapsed().as_secs_f64());
    for f in &study.fits {
        log::info!(
            "{}: slope {:.3}, intercept {:.3}",
            f.estimator.label(),
            f.slope,
            f.intercept
        );
    }
    write_out(args.output_csv.as_deref(), &lift!(study.to_csv())?)?;
    if let Some(p) = &args.output_json {
        let json = serde_json::to_string_pretty(&study).expect("study serializes") + "\n";
        fs::write(p, json).map_err(|e| io_error(p, e))?;
    }
    if study.report.flagged {
        log::error!("failure cap exceeded in the underlying replications");
        return Ok(ExitCode::from(EXIT_FLAGGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode, CliError> {
    let dgp = dgp_by_id(&args.dgp)?;
    let bundle = oracle_bundle(&dgp);
    if !(args.grid_extent > 1.0) {
        return Err(CliError::Validation("--grid-extent must exceed 1".into()));
    }
    let window = bundle.window();
    let t_max = args.grid_extent * window.c_upper.max(args.t_star);
    let grid = Arc::new(lift!(TimeGrid::uniform(t_max, args.grid_points))?);
    let problem = lift!(FredholmProblem::new(
        args.pi,
        args.t_star,
        &bundle,
        args.w.clone(),
        grid
    ))?;
    let profile = problem.profile();
    let h = lift!(solve_on_profile(
        &problem,
        &profile,
        SolutionKind::HStar,
        GridSolver::Sweep
    ))?;
    let eta = lift!(solve_on_profile(
        &problem,
        &profile,
        SolutionKind::EtaStar,
        GridSolver::Sweep
    ))?;
    let hv = h.values.values();
    let ev = eta.values.values();
    let residual = |system: survfuse::fredholm::CoupledSystem, x: &[f64]| -> Vec<f64> {
        system
            .apply(x)
            .iter()
            .zip(&system.rhs)
            .map(|(a, b)| (a - b).abs())
            .collect()
    };
    let rh = residual(h_system(&profile, problem.pi, problem.ratio_weights), hv);
    let re = residual(eta_system(&profile, problem.pi), ev);
    log::info!(
        "gamma(w) = {:?}, mu(w) = {}, residual sup h* {:.2e}, eta* {:.2e}",
        h.gamma_w,
        h.mu,
        h.residual_sup,
        eta.residual_sup
    );
    let mut w = csv_writer();
    w.write_record(["t", "h_star", "eta_star", "residual"])
        .map_err(csv_error)?;
    for (j, t) in problem.grid.points().iter().enumerate() {
        w.write_record([
            t.to_string(),
            hv[j].to_string(),
            ev[j].to_string(),
            rh[j].max(re[j]).to_string(),
        ])
        .map_err(csv_error)?;
    }
    let text = String::from_utf8(
        w.into_inner()
            .map_err(|e| CliError::Numeric(e.to_string()))?,
    )
    .expect("csv output is utf-8");
    write_out(args.output.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Numeric(e.to_string())
}

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode, CliError> {
    let dgp = dgp_by_id(&args.dgp)?;
    let seed = resolve_seed(args.seed);
    let sample = lift!(generate_dataset(&dgp, args.n, &mut RngStream::new(seed, 0)))?;
    lift!(sample.write_csv(&args.output))?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Rates(a) => cmd_rates(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
