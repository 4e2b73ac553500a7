//! The `sgdgap` experiment runner.
//!
//! Every subcommand writes a per-row CSV and a `summary.json` into the output
//! directory. Exit codes: 0 when every verdict passes, 1 when a verification
//! fails (reports are still written), 2 for usage, configuration and I/O
//! errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::{load_dataset, partition_at, sample_realization};
use crate::error::{Error, Result};
use crate::gradstats::{estimate_moments, joint_covariance_check, stats_eigenpairs, Eigenpair};
use crate::linalg::rel_diff;
use crate::optim::run_training;
use crate::oracle::oracle_stats;
use crate::report::{TheoryReport, Verdict};
use crate::theory::{
    delta_gap_order_fit, emulation_fit, ensemble_report, gradient_shift, shift_mode_order_fit, two_step_exact,
    two_step_order_fit, two_step_taylor, OrderFit, Quantity, ShiftMode,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Exponent windows and exactness tolerances for the order checks.
pub mod windows {
    pub const DELTA_GAP_ORDER: (f64, f64) = (1.8, 2.2);
    pub const TWO_STEP_ORDER: (f64, f64) = (2.7, 3.3);
    pub const SHIFT_MODE_ORDER: (f64, f64) = (1.7, 2.3);
    pub const EMULATION_ORDER: (f64, f64) = (2.5, 3.5);
    pub const TWO_STEP_EXACT_TOL: f64 = 1e-12;
    pub const SHIFT_EXACT_TOL: f64 = 1e-10;
}

#[derive(Debug, Parser)]
#[command(
    name = "sgdgap",
    version,
    about = "Gradient-statistics experiments for SGD versus GD"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the configured output_dir, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; affects speed only.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cross-covariance of overlapping batch gradients against the overlap-scaled Σ.
    VerifyCovScaling(Common),
    /// Ensemble mean gap change against η tr Σ / N, plus its O(η²) remainder.
    VerifyGap(Common),
    /// Ensemble mean gradient shift against −½ ∇(η tr Σ / N).
    VerifyMain(Common),
    /// Two-step expansion and gradient-shift closed form: exactness or remainder order.
    VerifyTaylor(Common),
    /// SGD versus GD on the regularized loss: O(η³) agreement of ensemble means.
    VerifyEmulation(Common),
    /// Training trajectories for the configured algorithms.
    Train(Common),
    /// Gradient statistics at the configured θ.
    Stats {
        #[command(flatten)]
        common: Common,
        /// CSV dataset (header x_1,...,x_d,y) used instead of a sampled train set.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of leading covariance eigenpairs.
        #[arg(long, default_value_t = 8)]
        k: usize,
    },
}

#[derive(Debug, Serialize)]
struct Check {
    name: String,
    value: f64,
    lower: Option<f64>,
    upper: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    points: Vec<(f64, f64)>,
    verdict: Verdict,
}

impl Check {
    fn window(name: &str, fit: &OrderFit, (lo, hi): (f64, f64)) -> Self {
        Self {
            name: name.to_string(),
            value: fit.exponent,
            lower: Some(lo),
            upper: Some(hi),
            points: fit.points.clone(),
            verdict: Verdict::from_bool(fit.within(lo, hi)),
        }
    }

    fn at_most(name: &str, value: f64, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            lower: None,
            upper: Some(tol),
            points: Vec::new(),
            verdict: Verdict::from_bool(value <= tol),
        }
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    command: String,
    seed: u64,
    config: ExperimentConfig,
    reports: Vec<TheoryReport>,
    checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<serde_json::Value>,
    verdict: Verdict,
}

struct Output {
    summary: Summary,
    csv_name: &'static str,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn fmt(v: f64) -> String {
    // shortest round-trip representation
    format!("{v:?}")
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

fn summary(command: &str, config: &ExperimentConfig, reports: Vec<TheoryReport>, checks: Vec<Check>) -> Summary {
    let ok = reports.iter().all(|r| r.passed()) && checks.iter().all(|c| c.verdict.passed());
    Summary {
        command: command.to_string(),
        seed: config.seed,
        config: config.clone(),
        reports,
        checks,
        details: None,
        verdict: Verdict::from_bool(ok),
    }
}

fn cov_scaling(config: &ExperimentConfig) -> Result<Output> {
    let cs = &config.cov_scaling;
    let model = config.model_spec();
    let gen = config.generator_spec()?;
    let theta = config.theta()?;
    let p = model.param_count();
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for &overlap in &cs.overlaps {
        let report = joint_covariance_check(
            &model,
            &theta,
            &gen,
            cs.size_a,
            cs.size_b,
            overlap,
            cs.trials,
            config.seed,
            config.z_threshold,
        )?;
        for (t, row) in report.rows.iter().enumerate() {
            let mut line = vec![overlap.to_string(), t.to_string()];
            line.extend(row.iter().map(|v| fmt(*v)));
            rows.push(line);
        }
        reports.push(report);
    }
    let mut header = vec!["overlap".to_string(), "trial".to_string()];
    header.extend(indexed("g_a", p));
    header.extend(indexed("g_b", p));
    Ok(Output {
        summary: summary("verify-cov-scaling", config, reports, Vec::new()),
        csv_name: "cov_scaling.csv",
        header,
        rows,
    })
}

fn ensemble_rows(reports: &[&TheoryReport]) -> Vec<Vec<String>> {
    let m = reports[0].rows.len();
    (0..m)
        .map(|r| {
            let mut line = vec![r.to_string()];
            for rep in reports {
                line.extend(rep.rows[r].iter().map(|v| fmt(*v)));
            }
            line
        })
        .collect()
}

fn realization_halves(config: &ExperimentConfig) -> Result<(crate::DataRealization, Vec<crate::Batch>)> {
    let gen = config.generator_spec()?;
    let data = sample_realization(&gen, config.n_train, config.n_test, config.seed)?;
    let halves = partition_at(&data.train, 2, config.seed, 0)?;
    Ok((data, halves))
}

fn verify_gap(config: &ExperimentConfig) -> Result<Output> {
    let m = config.ensemble_size;
    let gap = ensemble_report(config, Quantity::DeltaGap, m)?;
    let divergence = ensemble_report(config, Quantity::TrainTestDivergence, m)?;
    let (data, _) = realization_halves(config)?;
    let fit = delta_gap_order_fit(
        &config.model_spec(),
        &config.theta()?,
        &data.train,
        &data.test,
        &config.order_etas,
    )?;
    let rows = ensemble_rows(&[&gap, &divergence]);
    let checks = vec![Check::window(
        "delta_gap_remainder_order",
        &fit,
        windows::DELTA_GAP_ORDER,
    )];
    Ok(Output {
        summary: summary("verify-gap", config, vec![gap, divergence], checks),
        csv_name: "verify_gap.csv",
        header: vec!["realization".into(), "delta_gap".into(), "train_test_divergence".into()],
        rows,
    })
}

fn verify_main(config: &ExperimentConfig) -> Result<Output> {
    let shift = ensemble_report(config, Quantity::GradientShift, config.ensemble_size)?;
    let rows = ensemble_rows(&[&shift]);
    let mut header = vec!["realization".to_string()];
    header.extend(indexed("delta_g", config.model_spec().param_count()));
    Ok(Output {
        summary: summary("verify-main", config, vec![shift], Vec::new()),
        csv_name: "verify_main.csv",
        header,
        rows,
    })
}

fn verify_taylor(config: &ExperimentConfig) -> Result<Output> {
    let model = config.model_spec();
    let theta = config.theta()?;
    let (data, halves) = realization_halves(config)?;
    let (b, c) = (&halves[0], &halves[1]);
    let etas = &config.order_etas;
    let mut checks = Vec::new();
    let mut rows = Vec::new();

    let gap_fit = delta_gap_order_fit(&model, &theta, &data.train, &data.test, etas)?;
    checks.push(Check::window(
        "delta_gap_remainder_order",
        &gap_fit,
        windows::DELTA_GAP_ORDER,
    ));

    if model.is_linear() {
        let mut worst_step: f64 = 0.0;
        let mut worst_shift: f64 = 0.0;
        for &eta in etas {
            let step = rel_diff(
                &two_step_exact(&model, &theta, b, c, eta)?,
                &two_step_taylor(&model, &theta, b, c, eta)?,
            );
            let shift = rel_diff(
                &gradient_shift(&model, &theta, b, c, eta, ShiftMode::Definition)?,
                &gradient_shift(&model, &theta, b, c, eta, ShiftMode::ClosedForm)?,
            );
            worst_step = worst_step.max(step);
            worst_shift = worst_shift.max(shift);
            rows.push(vec![fmt(eta), fmt(step), fmt(shift)]);
        }
        checks.push(Check::at_most(
            "two_step_exactness",
            worst_step,
            windows::TWO_STEP_EXACT_TOL,
        ));
        checks.push(Check::at_most(
            "gradient_shift_exactness",
            worst_shift,
            windows::SHIFT_EXACT_TOL,
        ));
    } else {
        let step_fit = two_step_order_fit(&model, &theta, b, c, etas)?;
        let shift_fit = shift_mode_order_fit(&model, &theta, b, c, etas)?;
        for ((s, h), _) in step_fit.points.iter().zip(&shift_fit.points).zip(etas) {
            rows.push(vec![fmt(s.0), fmt(s.1), fmt(h.1)]);
        }
        checks.push(Check::window(
            "two_step_remainder_order",
            &step_fit,
            windows::TWO_STEP_ORDER,
        ));
        checks.push(Check::window(
            "gradient_shift_mode_order",
            &shift_fit,
            windows::SHIFT_MODE_ORDER,
        ));
    }
    let header = if model.is_linear() {
        vec!["eta".into(), "two_step_rel_diff".into(), "shift_rel_diff".into()]
    } else {
        vec!["eta".into(), "two_step_residual".into(), "shift_residual".into()]
    };
    Ok(Output {
        summary: summary("verify-taylor", config, Vec::new(), checks),
        csv_name: "verify_taylor.csv",
        header,
        rows,
    })
}

#[derive(Serialize)]
struct EnsembleMean {
    eta: f64,
    measured: Vec<f64>,
    se: Vec<f64>,
}

fn verify_emulation(config: &ExperimentConfig) -> Result<Output> {
    let fit = emulation_fit(config, &config.emulation_etas, config.ensemble_size)?;
    let order = OrderFit {
        points: fit.points.clone(),
        exponent: fit.exponent,
    };
    let p = config.model_spec().param_count();
    let mut rows = Vec::new();
    for (rep, (eta, _)) in fit.reports.iter().zip(&fit.points) {
        for (r, row) in rep.rows.iter().enumerate() {
            let mut line = vec![fmt(*eta), r.to_string()];
            line.extend(row.iter().map(|v| fmt(*v)));
            rows.push(line);
        }
    }
    let means: Vec<EnsembleMean> = fit
        .reports
        .iter()
        .zip(&fit.points)
        .map(|(r, (eta, _))| EnsembleMean {
            eta: *eta,
            measured: r.measured.clone(),
            se: r.se.clone(),
        })
        .collect();
    let mut s = summary(
        "verify-emulation",
        config,
        Vec::new(),
        vec![Check::window(
            "sgd_vs_regularized_gd_order",
            &order,
            windows::EMULATION_ORDER,
        )],
    );
    s.details = Some(serde_json::json!({ "ensemble_means": means }));
    let mut header = vec!["eta".to_string(), "realization".to_string()];
    header.extend(indexed("diff", p));
    Ok(Output {
        summary: s,
        csv_name: "verify_emulation.csv",
        header,
        rows,
    })
}

fn train(config: &ExperimentConfig) -> Result<Output> {
    let mut rows = Vec::new();
    let mut finals = serde_json::Map::new();
    for &alg in &config.algorithms {
        let traj = run_training(config, alg)?;
        for rec in &traj.records {
            rows.push(vec![
                alg.name().to_string(),
                rec.step.to_string(),
                fmt(rec.train_loss),
                fmt(rec.test_loss),
                fmt(rec.gap),
                fmt(rec.trace_sigma),
                rec.lambda.map(fmt).unwrap_or_default(),
            ]);
        }
        let last = traj.records.last().expect("trajectory is nonempty");
        finals.insert(
            alg.name().to_string(),
            serde_json::to_value(last).expect("serializable"),
        );
    }
    let mut s = summary("train", config, Vec::new(), Vec::new());
    s.details = Some(serde_json::json!({ "final": finals }));
    Ok(Output {
        summary: s,
        csv_name: "train.csv",
        header: [
            "algorithm",
            "step",
            "train_loss",
            "test_loss",
            "gap",
            "trace_sigma",
            "lambda",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        rows,
    })
}

fn stats(config: &ExperimentConfig, data_path: Option<&Path>, k: usize) -> Result<Output> {
    let model = config.model_spec();
    let theta = config.theta()?;
    let batch = match data_path {
        Some(path) => load_dataset(path)?,
        None => {
            let gen = config.generator_spec()?;
            sample_realization(&gen, config.n_train, config.n_test, config.seed)?.train
        }
    };
    let est = estimate_moments(&model, &theta, &batch)?;
    let k = k.clamp(1, model.param_count());
    let eig = stats_eigenpairs(&model, &theta, &batch, k)?;
    let mut details = serde_json::json!({
        "sample_count": batch.len(),
        "mean": est.mean,
        "se_mean": est.se_mean,
        "trace": est.trace(),
        "eigenpairs": eig.pairs,
        "near_degenerate": eig.near_degenerate,
    });
    if model.is_linear() && data_path.is_none() {
        let oracle = oracle_stats(&theta, &config.generator_spec()?)?;
        details["oracle"] = serde_json::json!({
            "mean": oracle.mean,
            "trace": oracle.trace(),
        });
    }
    let rows = eig
        .pairs
        .iter()
        .enumerate()
        .map(|(i, Eigenpair { value, vector })| {
            let mut line = vec![i.to_string(), fmt(*value)];
            line.extend(vector.iter().map(|v| fmt(*v)));
            line
        })
        .collect();
    let mut header = vec!["index".to_string(), "eigenvalue".to_string()];
    header.extend(indexed("v", model.param_count()));
    let mut s = summary("stats", config, Vec::new(), Vec::new());
    s.details = Some(details);
    Ok(Output {
        summary: s,
        csv_name: "stats.csv",
        header,
        rows,
    })
}

fn write_output(dir: &Path, out: &Output) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let csv_path = dir.join(out.csv_name);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Io {
        path: csv_path.clone(),
        source: e.into(),
    })?;
    let csv_err = |e: csv::Error| Error::Io {
        path: csv_path.clone(),
        source: e.into(),
    };
    w.write_record(&out.header).map_err(csv_err)?;
    for row in &out.rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(io(&csv_path))?;
    let json_path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&out.summary).expect("summary is serializable");
    text.push('\n');
    fs::write(&json_path, text).map_err(io(&json_path))
}

fn execute(command: Command) -> Result<i32> {
    let (common, extra) = match &command {
        Command::VerifyCovScaling(c)
        | Command::VerifyGap(c)
        | Command::VerifyMain(c)
        | Command::VerifyTaylor(c)
        | Command::VerifyEmulation(c)
        | Command::Train(c) => (c.clone(), None),
        Command::Stats { common, data, k } => (common.clone(), Some((data.clone(), *k))),
    };
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out_dir = common.out.clone().unwrap_or_else(|| config.output_dir.clone());

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let output = pool.install(|| match command {
        Command::VerifyCovScaling(_) => cov_scaling(&config),
        Command::VerifyGap(_) => verify_gap(&config),
        Command::VerifyMain(_) => verify_main(&config),
        Command::VerifyTaylor(_) => verify_taylor(&config),
        Command::VerifyEmulation(_) => verify_emulation(&config),
        Command::Train(_) => train(&config),
        Command::Stats { .. } => {
            let (data, k) = extra.expect("stats arguments");
            stats(&config, data.as_deref(), k)
        }
    })?;
    write_output(&out_dir, &output)?;
    for r in &output.summary.reports {
        eprintln!("{:<40} max|z| = {:>8.3}  {:?}", r.name, r.max_abs_z, r.verdict);
    }
    for c in &output.summary.checks {
        eprintln!("{:<40} value  = {:>8.4e}  {:?}", c.name, c.value, c.verdict);
    }
    Ok(if output.summary.verdict.passed() {
        EXIT_PASS
    } else {
        EXIT_FAIL
    })
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
