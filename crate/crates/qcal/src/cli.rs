//! The `qcal` command line: argument parsing, config resolution, output
//! directory policy, per-command runners and `--assert` evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use qcal_core::bayes::Phase;
use qcal_core::fidelity::{FidelityMetric, FidelityReport, FidelityRun, StateSource};
use serde::Serialize;

use crate::calib::{
    self, baseline_accounting, collect_ensemble, run_calibration, sweep_energy_mismatch, sweep_environment,
    CalibrationConfig, RunArtifact, RunOptions, SweepBase,
};
use crate::config::Config;
use crate::io::{self, Header};
use crate::oracles;
use crate::plots::{self, PlotData};
use crate::track::{self, TrackingSetup};
use crate::{QcalError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "qcal",
    version,
    about = "Measurement-based qubit gate calibration: trajectory simulation, real-time estimation and Bayesian pulse optimization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate measured trajectories from one initial state.
    Simulate,
    /// Simulate, run both estimators and report tracking and fidelity.
    Estimate,
    /// Optimize the DRAG scale and phase ramp with Bayesian optimization.
    Calibrate,
    /// Fidelity error against estimator frequency mismatch.
    SweepEnergy,
    /// Fidelity error against simulated bath coupling.
    SweepEnv,
    /// Calibrate, then compare the cost with an exhaustive grid search.
    Accounting,
    /// Run the numerical self-checks.
    OracleCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Calibrate => "calibrate",
            Command::SweepEnergy => "sweep-energy",
            Command::SweepEnv => "sweep-env",
            Command::Accounting => "accounting",
            Command::OracleCheck => "oracle-check",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML); see example.conf for every key and default.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent [default: runs/<command>].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Root seed; overrides QCAL_SEED, which overrides the config.
    #[arg(long, global = true, env = "QCAL_SEED", value_name = "N")]
    pub seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    pub workers: usize,
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Require a summary metric, e.g. "fidelity>=0.99"; repeatable. Exit 3 on failure.
    #[arg(long = "assert", global = true, value_name = "EXPR")]
    pub asserts: Vec<String>,
    /// Override the DRAG scale alpha_s.
    #[arg(long, global = true, allow_hyphen_values = true, value_name = "X")]
    pub alpha_s: Option<f64>,
    /// Override the phase-ramp parameter (MHz); disables the optimal phase.
    #[arg(long, global = true, allow_hyphen_values = true, value_name = "MHZ")]
    pub phi: Option<f64>,
    /// Stamp trace records with elapsed seconds (files are then not reproducible).
    #[arg(long, global = true)]
    pub wall_time: bool,
    /// Continue calibration from a previous trace.jsonl.
    #[arg(long, global = true, value_name = "PATH")]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Ge,
    Le,
    Gt,
    Lt,
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assertion {
    pub metric: String,
    pub op: Op,
    pub value: f64,
    pub text: String,
}

impl Assertion {
    pub fn parse(text: &str) -> Result<Self> {
        let ops = [
            (">=", Op::Ge),
            ("<=", Op::Le),
            ("==", Op::Eq),
            (">", Op::Gt),
            ("<", Op::Lt),
        ];
        for (sym, op) in ops {
            if let Some(pos) = text.find(sym) {
                let metric = text[..pos].trim();
                let value: f64 = text[pos + sym.len()..]
                    .trim()
                    .parse()
                    .map_err(|_| QcalError::Config(format!("--assert {text:?}: right-hand side is not a number")))?;
                if metric.is_empty() {
                    break;
                }
                return Ok(Assertion {
                    metric: metric.to_string(),
                    op,
                    value,
                    text: text.to_string(),
                });
            }
        }
        Err(QcalError::Config(format!(
            "--assert {text:?}: expected NAME OP VALUE with OP one of >= <= > < =="
        )))
    }

    pub fn holds(&self, x: f64) -> bool {
        match self.op {
            Op::Ge => x >= self.value,
            Op::Le => x <= self.value,
            Op::Gt => x > self.value,
            Op::Lt => x < self.value,
            Op::Eq => x == self.value,
        }
    }
}

/// Summary metrics each command reports, in output order.
pub fn metric_names(cmd: Command, cfg: &Config) -> Vec<String> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    match cmd {
        Command::Simulate => s(&["n_traj", "mean_final_x", "mean_final_y", "mean_final_z"]),
        Command::Estimate => s(&[
            "n_traj",
            "fraction_within",
            "mean_error",
            "max_error",
            "fidelity_pure",
            "fidelity_measured",
            "fidelity_rose",
            "fidelity_pse",
            "pse_vs_pure",
            "p1_repair_fraction",
            "p2_repair_fraction",
        ]),
        Command::Calibrate => s(&[
            "fidelity",
            "fidelity_pure",
            "fidelity_pure_six_state",
            "best_observed",
            "evaluations",
            "suggestions",
            "failed_evaluations",
            "alpha_s",
            "phi_mhz",
        ]),
        Command::SweepEnergy => {
            let mut v = s(&["n_points"]);
            for d in 1..=cfg.sweep_energy.drives.len() {
                v.push(format!("max_error_drive{d}_within_3mhz"));
                v.push(format!("error_drive{d}_at_3mhz"));
                v.push(format!("error_drive{d}_at_10mhz"));
            }
            v
        }
        Command::SweepEnv => {
            let mut v = s(&["n_points", "max_error"]);
            v.extend(cfg.sweep_env.r_factors.iter().map(|f| format!("error_at_{f}")));
            v
        }
        Command::Accounting => s(&[
            "evaluations",
            "data_number_baseline",
            "data_number_proposed",
            "test_time_baseline_us",
            "test_time_proposed_us",
            "trying_times_baseline",
            "trying_times_proposed",
        ]),
        Command::OracleCheck => s(&["checks_passed", "checks_failed"]),
    }
}

/// Creates the output directory; a non-empty one needs `force`.
pub fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(QcalError::Config(format!(
                "--out {} exists and is not a directory",
                dir.display()
            )));
        }
        let non_empty = std::fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(QcalError::Config(format!(
                "output directory {} is not empty; pass --force or choose another --out",
                dir.display()
            )));
        }
    } else {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Config with command-line overrides applied and validated.
pub fn resolve_config(g: &GlobalArgs, cmd: Command) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p)?,
        None if cmd == Command::OracleCheck => Config::default(),
        None => {
            return Err(QcalError::Config(format!(
                "{} needs --config PATH; copy example.conf and edit it",
                cmd.name()
            )))
        }
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(a) = g.alpha_s {
        cfg.pulse.alpha_s = a;
    }
    if let Some(phi) = g.phi {
        cfg.pulse.phi_mhz = phi;
        cfg.pulse.optimal_phase = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Metrics plus the config hash and seed they came from.
#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub command: String,
    pub metrics: BTreeMap<String, f64>,
}

/// Parses arguments already validated by clap and runs the command. Returns
/// the summary so callers can inspect it.
pub fn run(cli: &Cli) -> Result<Summary> {
    let g = &cli.global;
    let cmd = cli.command;
    let cfg = resolve_config(g, cmd)?;
    let asserts = g
        .asserts
        .iter()
        .map(|a| Assertion::parse(a))
        .collect::<Result<Vec<_>>>()?;
    let names = metric_names(cmd, &cfg);
    for a in &asserts {
        if !names.contains(&a.metric) {
            return Err(QcalError::Config(format!(
                "--assert: {} has no metric {:?}; available: {}",
                cmd.name(),
                a.metric,
                names.join(", ")
            )));
        }
    }
    let resume = match &g.resume {
        Some(p) => io::read_trace(p)?,
        None => Vec::new(),
    };
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(cmd.name()));
    prepare_out(&out, g.force)?;

    let header = Header::new(cfg.hash(), cfg.seed);
    io::write_json(&out.join("config_resolved.json"), &header, &cfg)?;
    let opts = RunOptions { wall_time: g.wall_time };
    let metrics = match cmd {
        Command::Simulate => simulate(&cfg, &out, &header)?,
        Command::Estimate => estimate(&cfg, &out, &header)?,
        Command::Calibrate => calibrate(&cfg, &out, &header, opts, &resume)?,
        Command::SweepEnergy => sweep_energy(&cfg, &out, &header)?,
        Command::SweepEnv => sweep_env(&cfg, &out, &header)?,
        Command::Accounting => accounting(&cfg, &out, &header, opts, &resume)?,
        Command::OracleCheck => oracle_check(&cfg, &out, &header)?,
    };
    let summary = Summary {
        command: cmd.name().to_string(),
        metrics,
    };
    io::write_json(&out.join("summary.json"), &header, &summary)?;
    for (k, v) in &summary.metrics {
        println!("{k} = {v}");
    }

    let mut failed = Vec::new();
    for a in &asserts {
        let v = summary.metrics[&a.metric];
        if a.holds(v) {
            println!("assert {} PASS ({} = {v})", a.text, a.metric);
        } else {
            println!("assert {} FAIL ({} = {v})", a.text, a.metric);
            failed.push(format!("{} (got {v})", a.text));
        }
    }
    if cmd == Command::OracleCheck && summary.metrics["checks_failed"] > 0.0 {
        failed.push("oracle checks failed".to_string());
    }
    if !failed.is_empty() {
        return Err(QcalError::Assert(format!("assertion failed: {}", failed.join("; "))));
    }
    Ok(summary)
}

type Metrics = BTreeMap<String, f64>;

fn simulate(cfg: &Config, out: &Path, header: &Header) -> Result<Metrics> {
    let setup = TrackingSetup::new(cfg)?;
    let recs = setup.simulate()?;
    for (k, rec) in recs.iter().take(cfg.simulate.export_records).enumerate() {
        io::write_record_csv(&out.join(format!("trajectory_{k:04}.csv")), header, rec)?;
        io::write_record_binary(&out.join(format!("trajectory_{k:04}.bin")), header, rec)?;
    }
    let finals: Vec<FinalRow> = recs
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let s = r.final_state();
            FinalRow {
                traj: k,
                x: s.x,
                y: s.y,
                z: s.z,
            }
        })
        .collect();
    io::write_csv(&out.join("final_states.csv"), header, &finals)?;
    let plot = PlotData {
        record_average: Some(track::fig3a(&recs[0], cfg.simulate.window_ns)?),
        ..PlotData::default()
    };
    plot.emit_all(out, header)?;
    let n = finals.len() as f64;
    let mut m = Metrics::new();
    m.insert("n_traj".into(), n);
    m.insert("mean_final_x".into(), finals.iter().map(|f| f.x).sum::<f64>() / n);
    m.insert("mean_final_y".into(), finals.iter().map(|f| f.y).sum::<f64>() / n);
    m.insert("mean_final_z".into(), finals.iter().map(|f| f.z).sum::<f64>() / n);
    Ok(m)
}

#[derive(Serialize)]
struct FinalRow {
    traj: usize,
    x: f64,
    y: f64,
    z: f64,
}

/// Tracking statistics on the configured state plus the six-state
/// fidelity of every source with identical noise.
fn estimate(cfg: &Config, out: &Path, header: &Header) -> Result<Metrics> {
    let setup = TrackingSetup::new(cfg)?;
    let recs = setup.simulate()?;
    let hs = setup.estimate(&recs)?;
    let pure = setup.pure_record()?;
    let dist = track::tracking_errors(&recs, &hs, cfg.simulate.error_threshold)?;
    io::write_csv(&out.join("estimator_history.csv"), header, &track::history_rows(&hs[0]))?;
    io::write_json(&out.join("tracking_errors.json"), header, &dist)?;
    let plot = PlotData {
        record_average: Some(track::fig3a(&recs[0], cfg.simulate.window_ns)?),
        tracking: Some(track::fig3b(&recs[0], &hs[0])),
        reconstruction: Some(track::fig3c(&pure, &hs)),
        error_histogram: Some(track::histogram(&dist)),
        ..PlotData::default()
    };
    plot.emit_all(out, header)?;

    let cal = CalibrationConfig {
        n_traj: cfg.simulate_n_traj(),
        metric: FidelityMetric::SixState,
        ..CalibrationConfig::from_config(cfg)
    };
    let run = FidelityRun::new(cal.setup([cal.pulse.alpha_s, cal.pulse.phi], 0), true)?;
    let ens = collect_ensemble(&run)?;
    let reports: Vec<FidelityReport> = StateSource::ALL
        .iter()
        .map(|&s| calib::report(&ens, &cal.gate, FidelityMetric::SixState, s))
        .collect();
    io::write_json(&out.join("fidelity.json"), header, &reports)?;

    let mut m = Metrics::new();
    m.insert("n_traj".into(), recs.len() as f64);
    m.insert("fraction_within".into(), dist.fraction_within);
    m.insert("mean_error".into(), dist.mean);
    m.insert("max_error".into(), dist.max);
    for r in &reports {
        m.insert(format!("fidelity_{}", source_key(r.source)), r.average);
    }
    m.insert("pse_vs_pure".into(), (m["fidelity_pse"] - m["fidelity_pure"]).abs());
    let steps: f64 = hs
        .iter()
        .map(|h| h.times.len().saturating_sub(1) as f64)
        .sum::<f64>()
        .max(1.0);
    let p1 = hs.iter().map(|h| h.p1_repairs as f64).sum::<f64>() / steps;
    let p2 = hs.iter().map(|h| h.p2_repairs as f64).sum::<f64>() / steps;
    if p1 > 0.0 || p2 > 0.0 {
        log::warn!(
            "covariance repairs on {:.1}% (P1) and {:.1}% (P2) of estimator steps",
            100.0 * p1,
            100.0 * p2
        );
    }
    m.insert("p1_repair_fraction".into(), p1);
    m.insert("p2_repair_fraction".into(), p2);
    Ok(m)
}

fn source_key(s: StateSource) -> &'static str {
    match s {
        StateSource::Pure => "pure",
        StateSource::Measured => "measured",
        StateSource::Rose => "rose",
        StateSource::Pse => "pse",
    }
}

fn write_calibration(
    art: &RunArtifact,
    cfg: &Config,
    cal: &CalibrationConfig,
    out: &Path,
    header: &Header,
) -> Result<()> {
    io::write_trace(&out.join("trace.jsonl"), header, &art.trace)?;
    io::write_json(&out.join("fidelity.json"), header, &art.final_reports)?;
    io::write_json(&out.join("calibration.json"), header, art)?;
    let table = baseline_accounting(&cfg.accounting, cal, &art.counters);
    io::write_csv(&out.join("table1.csv"), header, &table)?;
    let plot = PlotData {
        calibration_trace: Some(plots::trace_rows(&art.trace)),
        ..PlotData::default()
    };
    plot.emit_all(out, header)
}

fn calibrate(
    cfg: &Config,
    out: &Path,
    header: &Header,
    opts: RunOptions,
    resume: &[qcal_core::bayes::TraceRecord],
) -> Result<Metrics> {
    let cal = CalibrationConfig::from_config(cfg);
    let art = run_calibration(&cal, &header.config_hash, opts, resume)?;
    write_calibration(&art, cfg, &cal, out, header)?;
    let get = |s: StateSource, metric: FidelityMetric| {
        art.final_reports
            .iter()
            .find(|r| r.source == s && r.metric == metric)
            .map(|r| r.average)
            .unwrap_or(f64::NAN)
    };
    let mut m = Metrics::new();
    m.insert("fidelity".into(), get(cal.source, cal.metric));
    m.insert("fidelity_pure".into(), get(StateSource::Pure, cal.metric));
    m.insert(
        "fidelity_pure_six_state".into(),
        get(StateSource::Pure, FidelityMetric::SixState),
    );
    m.insert("best_observed".into(), art.best_observed);
    m.insert("evaluations".into(), art.counters.evaluations as f64);
    m.insert(
        "suggestions".into(),
        art.trace.iter().filter(|r| r.phase == Phase::Suggest).count() as f64,
    );
    m.insert("failed_evaluations".into(), art.counters.failed_evaluations as f64);
    m.insert("alpha_s".into(), art.best_theta[0]);
    m.insert("phi_mhz".into(), qcal_core::units::to_mhz(art.best_theta[1]));
    Ok(m)
}

#[derive(Serialize)]
struct EnergyCsvRow {
    detuning_mhz: f64,
    drive: usize,
    w_d_ghz: f64,
    phi_mhz: f64,
    f_pure_six: f64,
    f_pse_six: f64,
    f_pure_ground: f64,
    f_pse_ground: f64,
    error: f64,
}

fn sweep_energy(cfg: &Config, out: &Path, header: &Header) -> Result<Metrics> {
    let base = SweepBase::from_config(cfg);
    let s = sweep_energy_mismatch(&cfg.sweep_energy, &base, &cfg.sweep_energy.detunings())?;
    let mut rows = Vec::new();
    for (i, &d) in s.detunings_mhz.iter().enumerate() {
        for (k, drive) in s.drives.iter().enumerate() {
            let p = s.points[i][k];
            rows.push(EnergyCsvRow {
                detuning_mhz: d,
                drive: k + 1,
                w_d_ghz: drive.w_d_ghz,
                phi_mhz: drive.phi_mhz,
                f_pure_six: p.f_pure_six,
                f_pse_six: p.f_pse_six,
                f_pure_ground: p.f_pure_ground,
                f_pse_ground: p.f_pse_ground,
                error: p.error(s.metric),
            });
        }
    }
    io::write_csv(&out.join("sweep_energy.csv"), header, &rows)?;
    let plot = PlotData {
        energy_sweep: Some(plots::energy_rows(&s)),
        ..PlotData::default()
    };
    plot.emit_all(out, header)?;

    let mut m = Metrics::new();
    m.insert("n_points".into(), s.detunings_mhz.len() as f64);
    for d in 0..s.drives.len() {
        let within = s
            .detunings_mhz
            .iter()
            .zip(&s.points)
            .filter(|(x, _)| x.abs() <= 3.0 + 1e-9)
            .map(|(_, p)| p[d].error(s.metric))
            .fold(f64::NAN, f64::max);
        let near = |target: f64| {
            let v = s.error_near(d, -target).unwrap_or(f64::NAN);
            // The sweep may run toward positive detuning.
            let w = s.error_near(d, target).unwrap_or(f64::NAN);
            let closest = |x: f64| {
                s.detunings_mhz
                    .iter()
                    .map(|y| (y - x).abs())
                    .fold(f64::INFINITY, f64::min)
            };
            if closest(-target) <= closest(target) {
                v
            } else {
                w
            }
        };
        m.insert(format!("max_error_drive{}_within_3mhz", d + 1), within);
        m.insert(format!("error_drive{}_at_3mhz", d + 1), near(3.0));
        m.insert(format!("error_drive{}_at_10mhz", d + 1), near(10.0));
    }
    Ok(m)
}

#[derive(Serialize)]
struct EnvCsvRow {
    factor: f64,
    r: f64,
    f_pure_six: f64,
    f_pse_six: f64,
    f_pure_ground: f64,
    f_pse_ground: f64,
    error: f64,
}

fn sweep_env(cfg: &Config, out: &Path, header: &Header) -> Result<Metrics> {
    let base = SweepBase::from_config(cfg);
    let s = sweep_environment(&cfg.sweep_env, &base)?;
    let rows: Vec<EnvCsvRow> = s
        .points
        .iter()
        .map(|p| EnvCsvRow {
            factor: p.factor,
            r: p.r,
            f_pure_six: p.fidelities.f_pure_six,
            f_pse_six: p.fidelities.f_pse_six,
            f_pure_ground: p.fidelities.f_pure_ground,
            f_pse_ground: p.fidelities.f_pse_ground,
            error: p.fidelities.error(s.metric),
        })
        .collect();
    io::write_csv(&out.join("sweep_env.csv"), header, &rows)?;
    let plot = PlotData {
        env_sweep: Some(plots::env_rows(&s)),
        ..PlotData::default()
    };
    plot.emit_all(out, header)?;

    let mut m = Metrics::new();
    m.insert("n_points".into(), rows.len() as f64);
    m.insert("max_error".into(), rows.iter().map(|r| r.error).fold(0.0, f64::max));
    for r in &rows {
        m.insert(format!("error_at_{}", r.factor), r.error);
    }
    Ok(m)
}

fn accounting(
    cfg: &Config,
    out: &Path,
    header: &Header,
    opts: RunOptions,
    resume: &[qcal_core::bayes::TraceRecord],
) -> Result<Metrics> {
    let cal = CalibrationConfig::from_config(cfg);
    let art = run_calibration(&cal, &header.config_hash, opts, resume)?;
    write_calibration(&art, cfg, &cal, out, header)?;
    let table = baseline_accounting(&cfg.accounting, &cal, &art.counters);
    let mut m = Metrics::new();
    m.insert("evaluations".into(), art.counters.evaluations as f64);
    for row in &table {
        let key = match row.quantity.as_str() {
            "test_time_for_fidelity" => "test_time".to_string(),
            q => q.to_string(),
        };
        let unit = if key == "test_time" { "_us" } else { "" };
        m.insert(format!("{key}_baseline{unit}"), row.baseline);
        m.insert(format!("{key}_proposed{unit}"), row.proposed);
    }
    Ok(m)
}

fn oracle_check(cfg: &Config, out: &Path, header: &Header) -> Result<Metrics> {
    let checks = oracles::run_all(cfg.seed)?;
    for c in &checks {
        println!("{}", c.line());
    }
    io::write_json(&out.join("oracles.json"), header, &checks)?;
    let passed = checks.iter().filter(|c| c.passed).count();
    let mut m = Metrics::new();
    m.insert("checks_passed".into(), passed as f64);
    m.insert("checks_failed".into(), (checks.len() - passed) as f64);
    Ok(m)
}
