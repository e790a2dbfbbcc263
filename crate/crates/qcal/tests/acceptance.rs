//! Acceptance run: one PASS/FAIL line per criterion, thresholds pinned below.
//!
//! Criteria 1 to 6 use `configs/acceptance.conf` (200 trajectories per state).
//! The process exits non-zero when any criterion disagrees with its pinned
//! expectation; a known failure is reported as FAIL and expected as such.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use qcal::calib::{
    baseline_accounting, is_of_order, run_calibration, sweep_energy_mismatch, sweep_environment, CalibrationConfig,
    RunArtifact, RunOptions, SweepBase,
};
use qcal::config::{Config, EnvSweepSection};
use qcal::track::{self, TrackingSetup};
use qcal_core::fidelity::StateSource;
use qcal_core::units::to_mhz;

// Criterion 1.
const TRACK_THRESHOLD: f64 = 0.02;
const TRACK_MIN_FRACTION: f64 = 0.90;
const TRACK_MAX_MEAN: f64 = 0.02;
// Criterion 2.
const PSE_MAX_ABS_DIFF: f64 = 1e-3;
// Criterion 3.
const MIN_FIDELITY: f64 = 0.99;
const MAX_SUGGESTIONS: usize = 15;
// Criterion 4.
const ENERGY_DETUNINGS_MHZ: [f64; 8] = [0.0, -0.5, -1.0, -1.5, -2.0, -2.5, -3.0, -10.0];
const ENERGY_MAX_ERROR: f64 = 0.01;
const ENERGY_NEAR_MHZ: f64 = 3.0;
const ENERGY_FAR_MHZ: f64 = 10.0;
// Error bound met per drive: drive 2 (uncompensated phase) is expected to miss it.
const KNOWN_ENERGY_BOUNDED: [bool; 2] = [true, false];
// Criterion 5.
const ENV_MAX_ERROR_AT_HALF: f64 = 0.005;
// Criterion 6.
const PROPOSED_ORDER: i32 = 2;
const BASELINE_ORDER: i32 = 5;
// Criterion 7: the P2 flow has no positive forcing and leaves the PSD cone
// (see the estimator tests); this single check is expected to fail.
const KNOWN_ORACLE_FAILURES: [&str; 1] = ["riccati_p2_min_eigenvalue"];
const ORACLE_SEED: u64 = 0;
const ORACLE_BUDGET_S: f64 = 120.0;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

struct Outcome {
    id: u8,
    passed: bool,
    expected: bool,
    detail: String,
    notes: Vec<String>,
}

impl Outcome {
    fn new(id: u8, passed: bool, detail: String) -> Self {
        Outcome {
            id,
            passed,
            expected: true,
            detail,
            notes: Vec::new(),
        }
    }
    fn print(&self) {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        let note = if self.passed == self.expected {
            ""
        } else {
            " [UNEXPECTED]"
        };
        println!("criterion {}: {tag}{note} {}", self.id, self.detail);
        for n in &self.notes {
            println!("    {n}");
        }
    }
}

fn tracking(cfg: &Config, cal: &RunArtifact) -> qcal::Result<Outcome> {
    let mut cfg = cfg.clone();
    cfg.pulse.alpha_s = cal.best_theta[0];
    cfg.pulse.phi_mhz = to_mhz(cal.best_theta[1]);
    cfg.pulse.optimal_phase = false;
    let setup = TrackingSetup::new(&cfg)?;
    let recs = setup.simulate()?;
    let hs = setup.estimate(&recs)?;
    let d = track::tracking_errors(&recs, &hs, TRACK_THRESHOLD)?;
    let passed = d.fraction_within >= TRACK_MIN_FRACTION && d.mean < TRACK_MAX_MEAN;
    Ok(Outcome::new(
        1,
        passed,
        format!(
            "tracking over {} trajectories: within {TRACK_THRESHOLD} = {:.3} (>= {TRACK_MIN_FRACTION}), mean = {:.2e} (< {TRACK_MAX_MEAN}), max = {:.2e}",
            recs.len(),
            d.fraction_within,
            d.mean,
            d.max
        ),
    ))
}

fn reconstruction(cal: &RunArtifact) -> Outcome {
    let pse = cal.final_report(StateSource::Pse).unwrap();
    let pure = cal.final_report(StateSource::Pure).unwrap();
    let diff = (pse.average - pure.average).abs();
    Outcome::new(
        2,
        diff < PSE_MAX_ABS_DIFF,
        format!(
            "six-state F_pse = {:.5}, F_pure = {:.5}, |diff| = {diff:.2e} (< {PSE_MAX_ABS_DIFF}) over {} trajectories",
            pse.average, pure.average, pse.n_traj
        ),
    )
}

fn calibrated(cal: &RunArtifact) -> Outcome {
    let suggestions = cal
        .trace
        .iter()
        .filter(|r| r.phase == qcal_core::bayes::Phase::Suggest)
        .count();
    let pse = cal.final_report(StateSource::Pse).unwrap().average;
    let pure = cal.final_report(StateSource::Pure).unwrap().average;
    let passed = suggestions <= MAX_SUGGESTIONS && pse >= MIN_FIDELITY && pure >= MIN_FIDELITY;
    Outcome::new(
        3,
        passed,
        format!(
            "{suggestions} suggestions (<= {MAX_SUGGESTIONS}); verified six-state F_pse = {pse:.5}, F_pure = {pure:.5} (>= {MIN_FIDELITY}); best observed {:.5} at alpha_s = {:+.4}, phi = {:+.3} MHz",
            cal.best_observed,
            cal.best_theta[0],
            to_mhz(cal.best_theta[1])
        ),
    )
}

fn energy(cfg: &Config) -> qcal::Result<Outcome> {
    let s = sweep_energy_mismatch(&cfg.sweep_energy, &SweepBase::from_config(cfg), &ENERGY_DETUNINGS_MHZ)?;
    let mut bounded = Vec::new();
    let mut growing = Vec::new();
    let mut parts = Vec::new();
    for d in 0..s.drives.len() {
        let near = s
            .detunings_mhz
            .iter()
            .zip(&s.points)
            .filter(|(x, _)| x.abs() <= ENERGY_NEAR_MHZ + 1e-9)
            .map(|(_, p)| p[d].error(s.metric))
            .fold(0.0, f64::max);
        let at3 = s.error_near(d, -ENERGY_NEAR_MHZ).unwrap();
        let at10 = s.error_near(d, -ENERGY_FAR_MHZ).unwrap();
        bounded.push(near < ENERGY_MAX_ERROR);
        growing.push(at10 > at3);
        parts.push(format!(
            "drive {} (w_d = {} GHz, phi = {:.2} MHz, F_pure six-state {:.4}): max error within 3 MHz = {:.3}% (< {}%), 3 MHz {:.3}% < 10 MHz {:.3}%",
            d + 1,
            s.drives[d].w_d_ghz,
            s.drives[d].phi_mhz,
            s.points[0][d].f_pure_six,
            100.0 * near,
            100.0 * ENERGY_MAX_ERROR,
            100.0 * at3,
            100.0 * at10
        ));
    }
    let passed = bounded.iter().all(|&b| b) && growing.iter().all(|&g| g);
    let mut o = Outcome::new(4, passed, format!("{:?} metric; {}", s.metric, parts.join("; ")));
    if bounded == KNOWN_ENERGY_BOUNDED && growing.iter().all(|&g| g) {
        o.expected = false;
        o.detail.push_str(
            "; drive 2 has no phase compensation for its 5 MHz drive detuning, so it is not a calibrated \
             pi pulse and its estimator error exceeds the bound; with the resonant phase it coincides with \
             drive 1 in the rotating frame",
        );
    }
    Ok(o)
}

fn environment(cfg: &Config) -> qcal::Result<Outcome> {
    let sec = EnvSweepSection {
        r_factors: vec![1.0, 0.9, 0.5],
        ..cfg.sweep_env.clone()
    };
    let s = sweep_environment(&sec, &SweepBase::from_config(cfg))?;
    let (e1, e09, e05) = (
        s.error_at(1.0).unwrap(),
        s.error_at(0.9).unwrap(),
        s.error_at(0.5).unwrap(),
    );
    Ok(Outcome::new(
        5,
        e05 <= ENV_MAX_ERROR_AT_HALF && e05 >= e09,
        format!(
            "{:?} metric; error at r0/2 = {:.3}% (<= {}%), at 0.9 r0 = {:.3}%, at r0 = {:.3}%",
            s.metric,
            100.0 * e05,
            100.0 * ENV_MAX_ERROR_AT_HALF,
            100.0 * e09,
            100.0 * e1
        ),
    ))
}

fn accounting(cfg: &Config, calc: &CalibrationConfig, cal: &RunArtifact, out: &Path) -> qcal::Result<Outcome> {
    let rows = baseline_accounting(&cfg.accounting, calc, &cal.counters);
    let header = qcal::io::Header::new(cfg.hash(), cfg.seed);
    let path = out.join("table1.csv");
    qcal::io::write_csv(&path, &header, &rows)?;
    let data = &rows[0];
    let passed = data.quantity == "data_number"
        && is_of_order(data.proposed, PROPOSED_ORDER)
        && is_of_order(data.baseline, BASELINE_ORDER)
        && path.exists();
    let summary: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{} {} vs {} (1e{} vs 1e{})",
                r.quantity, r.proposed, r.baseline, r.proposed_order, r.baseline_order
            )
        })
        .collect();
    Ok(Outcome::new(
        6,
        passed,
        format!(
            "proposed vs grid baseline, expected 1e{PROPOSED_ORDER} vs 1e{BASELINE_ORDER}: {}; written to {}",
            summary.join(", "),
            path.display()
        ),
    ))
}

fn oracles() -> qcal::Result<Outcome> {
    let start = Instant::now();
    let checks = qcal::oracles::run_all(ORACLE_SEED)?;
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let mut o = Outcome::new(
        7,
        failed.is_empty() && secs < ORACLE_BUDGET_S,
        format!(
            "{} of {} checks pass in {secs:.1} s (budget {ORACLE_BUDGET_S} s); failing: {}",
            checks.len() - failed.len(),
            checks.len(),
            if failed.is_empty() {
                "none".to_string()
            } else {
                failed.join(", ")
            }
        ),
    );
    o.notes = checks.iter().map(|c| c.line()).collect();
    let known = !failed.is_empty() && failed == KNOWN_ORACLE_FAILURES && secs < ORACLE_BUDGET_S;
    if known {
        o.expected = false;
        o.detail.push_str(
            "; the P2 covariance flow is forced only by dA2/dM P1 + P1 dA2/dM^T, which is negative \
             semidefinite, so P2 turns indefinite within about 1 ns and stays so",
        );
    }
    Ok(o)
}

fn determinism(scratch: &Path) -> Outcome {
    let conf = repo().join("configs/ci.conf");
    let commands = [
        "simulate",
        "estimate",
        "calibrate",
        "sweep-energy",
        "sweep-env",
        "accounting",
        "oracle-check",
    ];
    let mut compared = 0usize;
    let mut mismatches = Vec::new();
    for cmd in commands {
        let dirs: Vec<PathBuf> = (0..2).map(|k| scratch.join(format!("{cmd}_{k}"))).collect();
        for d in &dirs {
            let status = Command::new(env!("CARGO_BIN_EXE_qcal"))
                .args([cmd, "--config", conf.to_str().unwrap(), "--out", d.to_str().unwrap()])
                .env_remove("QCAL_SEED")
                .output()
                .unwrap()
                .status;
            // oracle-check reports the known failing check with exit 3.
            if !matches!(status.code(), Some(0) | Some(3)) {
                mismatches.push(format!("{cmd} exited with {status}"));
            }
        }
        let mut names: Vec<_> = fs::read_dir(&dirs[0])
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for n in names {
            compared += 1;
            let a = fs::read(dirs[0].join(&n)).unwrap();
            let b = fs::read(dirs[1].join(&n)).ok();
            if b.as_deref() != Some(&a[..]) {
                mismatches.push(format!("{cmd}/{}", n.to_string_lossy()));
            }
        }
    }
    Outcome::new(
        8,
        mismatches.is_empty() && compared > 0,
        format!(
            "{} commands run twice, {compared} files compared byte for byte; mismatches: {}",
            commands.len(),
            if mismatches.is_empty() {
                "none".to_string()
            } else {
                mismatches.join(", ")
            }
        ),
    )
}

fn main() -> ExitCode {
    // Honour the test harness filter so `cargo test -- some_other_test` skips this.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let cfg = Config::load(&repo().join("configs/acceptance.conf")).expect("acceptance.conf");
    let scratch = tempfile::tempdir().unwrap();
    let calc = CalibrationConfig::from_config(&cfg);

    let cal = run_calibration(&calc, &cfg.hash(), RunOptions::default(), &[]).expect("calibration");
    let mut outcomes = vec![
        tracking(&cfg, &cal).expect("tracking"),
        reconstruction(&cal),
        calibrated(&cal),
        energy(&cfg).expect("energy sweep"),
        environment(&cfg).expect("environment sweep"),
        accounting(&cfg, &calc, &cal, scratch.path()).expect("accounting"),
        oracles().expect("oracles"),
        determinism(scratch.path()),
    ];
    outcomes.sort_by_key(|o| o.id);

    println!(
        "acceptance ({} trajectories per state, seed {})",
        cfg.simulation.n_traj, cfg.seed
    );
    for o in &outcomes {
        o.print();
    }
    let unexpected = outcomes.iter().filter(|o| o.passed != o.expected).count();
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!(
        "acceptance: {passed} of {} criteria pass, {unexpected} unexpected, {:.0} s",
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
