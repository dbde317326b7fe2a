use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tail_angular::bounds::{bound_classification, bound_truncated, bound_untruncated, BoundInputs};
use tail_angular::classify::{empirical_risk, test_error, train_grid_majority};
use tail_angular::estimators::{
    fit_empirical_with, fit_oracle, fit_truncated_with, write_masses_csv, Band, Retained,
};
use tail_angular::experiment::{
    grid_truth, run_classif_experiment, run_sweep, truncation_level, write_sweep_csv, ClassifConfig, SweepConfig,
};
use tail_angular::geometry::GridClass;
use tail_angular::mvset::{score_anomalies, solve_mvset_greedy_cells};
use tail_angular::simgen::SimSpec;
use tail_angular::transform::{Dataset, LinearMargins, RankModel};
use tail_angular::Error;

#[derive(Parser)]
#[command(name = "tail-angular", version, about = "Angular measure estimation for multivariate extremes")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (0 = all cores). TAIL_ANGULAR_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a sample from the Pareto-Dirichlet model.
    Simulate(SimulateArgs),
    /// Monte Carlo masses of every grid cell.
    Truth(TruthArgs),
    /// Estimate grid-cell masses from a dataset.
    Estimate(EstimateArgs),
    /// Estimation error sweep against a Monte Carlo truth.
    Sweep(SweepArgs),
    /// Evaluate the deviation bounds.
    Bound(BoundArgs),
    /// Minimum-volume set over grid cells and anomaly flags for a test set.
    Mvset(MvsetArgs),
    /// Train and evaluate grid classifiers in the extreme region.
    Classify(ClassifyArgs),
    /// Compare plain and truncated classifiers over replications.
    ClassifExperiment(ClassifExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    /// Dirichlet concentration (unlabeled mode).
    #[arg(long, required_unless_present = "nu_plus")]
    nu: Option<f64>,
    #[arg(long, requires = "nu_minus")]
    nu_plus: Option<f64>,
    #[arg(long, requires = "nu_plus")]
    nu_minus: Option<f64>,
    /// Share of positive rows in labeled mode.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Intervals per free axis.
    #[arg(long = "s-grid", default_value_t = 5)]
    s: usize,
}

#[derive(Args)]
struct TruthArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    nu: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 10_000_000)]
    samples: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Empirical,
    Truncated,
    Oracle,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    /// The last column holds -1/1 labels.
    #[arg(long)]
    labeled: bool,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "empirical")]
    estimator: EstimatorArg,
    #[arg(long)]
    m: Option<f64>,
    /// Oracle standardization `v(x) = scale x`; defaults to the dimension.
    #[arg(long)]
    oracle_scale: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "2")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 10.0)]
    nu: f64,
    #[arg(long, value_delimiter = ',', default_value = "5000,10000,50000,100000")]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.02")]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 10_000_000)]
    mc_samples: u64,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    k: u64,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0.05)]
    rho: f64,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long = "cap-c", default_value_t = 1.0)]
    cap_c: f64,
    #[arg(long, default_value_t = 4.0)]
    vc: f64,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    bias: f64,
    /// Report the classification risk bound instead.
    #[arg(long)]
    classification: bool,
}

impl BoundArgs {
    fn inputs(&self) -> BoundInputs {
        BoundInputs {
            n: self.n,
            k: self.k,
            d: self.d,
            delta: self.delta,
            rho: self.rho,
            tau: self.tau,
            c: self.c,
            cap_c: self.cap_c,
            vc: self.vc,
            m: self.m,
            bias: self.bias,
        }
    }
}

#[derive(Args)]
struct MvsetArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Per-test-point flags (row_id, extreme, anomaly).
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    alpha: f64,
    /// Mass tolerance; derived from the deviation bound when omitted.
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0.05)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long = "cap-c", default_value_t = 1.0)]
    cap_c: f64,
    #[arg(long, default_value_t = 4.0)]
    vc: f64,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    m: Option<f64>,
    /// Share of retained points discarded by the truncated model when `--m` is absent.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long = "s-grid", default_value_t = 2)]
    s: usize,
}

#[derive(Args)]
struct ClassifExperimentArgs {
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    nu_plus: f64,
    #[arg(long, default_value_t = 2.0)]
    nu_minus: f64,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 20_000)]
    n_test: usize,
    #[arg(long, default_value_t = 30)]
    reps: usize,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long = "s-grid", default_value_t = 2)]
    s: usize,
    #[arg(long, default_value_t = 0.05)]
    fraction: f64,
}

/// Exit status and message of a failed run.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn degenerate(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NoRetainedPoints | Error::EmptyClass(_) | Error::EmptyCandidateClass | Error::ZeroVector => 3,
            Error::Io(_) => 1,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self { code: 1, message: e.to_string() }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self { code: 1, message: e.to_string() }
    }
}

type Outcome = Result<(), Failure>;

fn open_output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn read_dataset(path: &Path, labeled: bool) -> Result<Dataset, Failure> {
    let file = File::open(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    Ok(Dataset::read_csv(BufReader::new(file), labeled)?)
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_json(out: Option<&Path>, value: &serde_json::Value) -> Outcome {
    let mut w = open_output(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Writes a JSON sidecar next to `out`, or to standard error without an output file.
fn write_sidecar(out: Option<&Path>, value: &serde_json::Value) -> Outcome {
    match out {
        Some(p) => write_json(Some(&sidecar_path(p)), value),
        None => {
            eprintln!("{}", serde_json::to_string(value)?);
            Ok(())
        }
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Outcome {
    let spec = match (a.nu, a.nu_plus, a.nu_minus) {
        (_, Some(plus), Some(minus)) => SimSpec::labeled(a.d, plus, minus, a.p, a.n, cli.seed),
        (Some(nu), None, None) => SimSpec::unlabeled(a.d, nu, a.n, cli.seed),
        _ => return Err(Failure::config("give --nu, or both --nu-plus and --nu-minus")),
    };
    let data = spec.sample()?;
    let mut w = open_output(cli.out.as_deref())?;
    data.write_csv(&mut w)?;
    w.flush()?;
    write_sidecar(cli.out.as_deref(), &serde_json::to_value(&spec)?)
}

fn truth(cli: &Cli, a: &TruthArgs) -> Outcome {
    let t = grid_truth(a.d, a.nu, a.grid.tau, a.grid.s, a.samples, cli.seed)?;
    let masses: Vec<f64> = t.cells.iter().map(|c| c.mass).collect();
    write_masses_csv(open_output(cli.out.as_deref())?, &masses)?;
    write_sidecar(cli.out.as_deref(), &serde_json::to_value(&t)?)
}

fn estimate(cli: &Cli, a: &EstimateArgs) -> Outcome {
    let data = read_dataset(&a.data, a.labeled)?;
    let grid = GridClass::new(data.d(), a.grid.tau, a.grid.s)?;
    let est = match a.estimator {
        EstimatorArg::Empirical => fit_empirical_with(&RankModel::fit(&data)?, &data, a.k)?,
        EstimatorArg::Truncated => {
            let m = a.m.ok_or_else(|| Failure::config("--m is required for the truncated estimator"))?;
            fit_truncated_with(&RankModel::fit(&data)?, &data, a.k, m)?
        }
        EstimatorArg::Oracle => {
            let scale = a.oracle_scale.unwrap_or(data.d() as f64);
            fit_oracle(&data, a.k, &LinearMargins { scale })?
        }
    };
    if est.retained_count() == 0 {
        return Err(Failure::degenerate("no point passes the radial threshold"));
    }
    write_masses_csv(open_output(cli.out.as_deref())?, &est.query_grid(&grid))?;
    Ok(())
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Outcome {
    let cfg = SweepConfig {
        dims: a.dims.clone(),
        nu: a.nu,
        n_list: a.n_list.clone(),
        reps: a.reps,
        tau: a.grid.tau,
        s: a.grid.s,
        truncation_fractions: a.fractions.clone(),
        seed: cli.seed,
        mc_samples: a.mc_samples,
    };
    let out = run_sweep(&cfg)?;
    write_sweep_csv(open_output(cli.out.as_deref())?, &out.rows)?;
    let truths: Vec<_> = out
        .truths
        .iter()
        .map(|t| json!({ "d": t.d, "nu": t.nu, "samples": t.samples, "seed": t.seed }))
        .collect();
    write_sidecar(cli.out.as_deref(), &json!({ "config": cfg, "truth": truths }))
}

fn bound(cli: &Cli, a: &BoundArgs) -> Outcome {
    let inputs = a.inputs();
    let value = if a.classification {
        serde_json::to_value(bound_classification(&inputs)?)?
    } else if inputs.m.is_some() {
        serde_json::to_value(bound_truncated(&inputs)?)?
    } else {
        serde_json::to_value(bound_untruncated(&inputs)?)?
    };
    write_json(cli.out.as_deref(), &value)
}

fn mvset(cli: &Cli, a: &MvsetArgs) -> Outcome {
    let train = read_dataset(&a.train, false)?;
    let n = train.n();
    let model = RankModel::fit(&train)?;
    let est = match a.m {
        Some(m) => fit_truncated_with(&model, &train, a.k, m)?,
        None => fit_empirical_with(&model, &train, a.k)?,
    };
    let psi = match a.psi {
        Some(psi) => psi,
        None => {
            let inputs = BoundInputs {
                n: n as u64,
                k: a.k as u64,
                d: train.d(),
                delta: a.delta,
                rho: a.rho,
                tau: a.grid.tau,
                c: a.c,
                cap_c: a.cap_c,
                vc: a.vc,
                m: a.m,
                bias: 0.0,
            };
            let report = if a.m.is_some() { bound_truncated(&inputs)? } else { bound_untruncated(&inputs)? };
            report.total
        }
    };
    if psi >= a.alpha {
        let message = format!("psi = {psi} must be below alpha = {}", a.alpha);
        return Err(if a.psi.is_some() { Failure::config(message) } else { Failure::degenerate(message) });
    }
    let grid = GridClass::new(train.d(), a.grid.tau, a.grid.s)?;
    let result = solve_mvset_greedy_cells(&grid, a.alpha, psi, &est)?;
    write_json(
        cli.out.as_deref(),
        &json!({
            "feasible": result.feasible,
            "alpha": a.alpha,
            "psi": psi,
            "cells": result.members,
            "volume": result.volume,
            "mass_hat": result.mass_hat,
            "chosen": result.chosen,
        }),
    )?;
    if !result.feasible {
        return Err(Failure::degenerate("no union of cells reaches alpha - psi"));
    }
    if let Some(test_path) = &a.test {
        let test = read_dataset(test_path, false)?;
        let flags = score_anomalies(&result, &model, a.k, n, &test)?;
        let mut w = open_output(Some(a.scores.as_deref().unwrap_or(Path::new("scores.csv"))))?;
        writeln!(w, "row_id,extreme,anomaly")?;
        for (i, f) in flags.iter().enumerate() {
            writeln!(w, "{i},{},{}", f.extreme, f.anomaly)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn classify(cli: &Cli, a: &ClassifyArgs) -> Outcome {
    let train = read_dataset(&a.train, true)?;
    let test = read_dataset(&a.test, true)?;
    let n = train.n();
    let model = RankModel::fit(&train)?;
    let g = train_grid_majority(&model, &train, a.k, a.tau, a.s, None)?;
    let risk_train = empirical_risk(&g, &model, &train, a.k, a.tau, None)?;
    let risk_test = test_error(&g, &model, &test, a.k, n, a.tau)?;
    let m = match (a.m, a.fraction) {
        (Some(m), _) => Some(m),
        (None, Some(f)) => {
            let kept = Retained::ranked(&model, &train, Band::Above(Band::threshold(n, a.k)))?;
            Some(truncation_level(&kept.norms, n, a.k, f)?)
        }
        (None, None) => None,
    };
    let truncated = match m {
        Some(m) => {
            let gm = train_grid_majority(&model, &train, a.k, a.tau, a.s, Some(m))?;
            let risk = empirical_risk(&gm, &model, &train, a.k, a.tau, Some(m))?;
            Some((m, risk, test_error(&gm, &model, &test, a.k, n, a.tau)?))
        }
        None => None,
    };
    write_json(
        cli.out.as_deref(),
        &json!({
            "risk_train": risk_train.empirical_risk,
            "risk_test": risk_test,
            "m": truncated.as_ref().map(|t| t.0),
            "risk_train_truncated_model": truncated.as_ref().map(|t| t.1.empirical_risk),
            "risk_test_truncated_model": truncated.as_ref().and_then(|t| t.2),
            "retained_counts": {
                "train": risk_train.retained,
                "train_truncated": truncated.as_ref().map(|t| t.1.retained),
            },
        }),
    )?;
    if risk_test.is_none() {
        return Err(Failure::degenerate("no test point in the extreme region"));
    }
    Ok(())
}

fn classif_experiment(cli: &Cli, a: &ClassifExperimentArgs) -> Outcome {
    let cfg = ClassifConfig {
        d: a.d,
        nu_plus: a.nu_plus,
        nu_minus: a.nu_minus,
        p: a.p,
        n: a.n,
        n_test: a.n_test,
        reps: a.reps,
        tau: a.tau,
        s: a.s,
        truncation_fraction: a.fraction,
        seed: cli.seed,
    };
    let summary = run_classif_experiment(&cfg)?;
    write_json(cli.out.as_deref(), &serde_json::to_value(summary)?)
}

fn thread_count(cli: &Cli) -> Result<Option<usize>, Failure> {
    match std::env::var("TAIL_ANGULAR_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::config(format!("TAIL_ANGULAR_THREADS must be an integer, got {v:?}"))),
        Err(_) => Ok(cli.threads),
    }
}

fn run(cli: &Cli) -> Outcome {
    if let Some(threads) = thread_count(cli)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::config(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Truth(a) => truth(cli, a),
        Command::Estimate(a) => estimate(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Bound(a) => bound(cli, a),
        Command::Mvset(a) => mvset(cli, a),
        Command::Classify(a) => classify(cli, a),
        Command::ClassifExperiment(a) => classif_experiment(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
