//! The calibration loop, the two estimator-mismatch sweeps and the resource
//! comparison with an exhaustive search.
//!
//! Trajectories fan out on the ambient rayon pool and are gathered in index
//! order, so results do not depend on the worker count.

use qcal_core::bayes::{suggest_observe_loop, BayesConfig, BayesOptimizer, Domain, TraceRecord};
use qcal_core::dynamics::{BlochState, SimConfig};
use qcal_core::env::EnvParams;
use qcal_core::estimator::EstimatorConfig;
use qcal_core::fidelity::{
    ChannelOutput, Ensemble, FidelityMetric, FidelityReport, FidelityRun, FidelitySetup, GateSpec, PauliState,
    StateSource,
};
use qcal_core::pulse::PulseParams;
use qcal_core::units::{mhz, to_mhz};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AccountingSection, Config, EnergySweepSection, EnvSweepSection};
use crate::{QcalError, Result};

/// Evaluation index of the verification run at the best parameters; kept
/// clear of the indices the optimizer hands out.
pub const FINAL_EVALUATION: u64 = u32::MAX as u64;

/// Runs every channel of `run` concurrently.
pub fn collect_ensemble(run: &FidelityRun) -> Result<Ensemble> {
    let setup = run.setup();
    let states: Vec<PauliState> = setup.metric.states().to_vec();
    let n = setup.n_traj;
    let jobs: Vec<(PauliState, usize)> = states.iter().flat_map(|&s| (0..n).map(move |k| (s, k))).collect();
    let flat: Vec<ChannelOutput> = jobs
        .par_iter()
        .map(|&(s, k)| run.channel(s, k))
        .collect::<qcal_core::Result<Vec<_>>>()?;
    let pure = states
        .iter()
        .map(|&s| run.pure_final(s))
        .collect::<qcal_core::Result<Vec<BlochState>>>()?;
    let outputs = flat.chunks(n).map(|c| c.to_vec()).collect();
    Ok(Ensemble { states, outputs, pure })
}

/// The part of a six-state ensemble that `metric` averages over.
pub fn restrict(ens: &Ensemble, metric: FidelityMetric) -> Ensemble {
    let keep: Vec<usize> = metric
        .states()
        .iter()
        .filter_map(|s| ens.states.iter().position(|x| x == s))
        .collect();
    Ensemble {
        states: keep.iter().map(|&i| ens.states[i]).collect(),
        outputs: keep.iter().map(|&i| ens.outputs[i].clone()).collect(),
        pure: keep.iter().map(|&i| ens.pure[i]).collect(),
    }
}

/// Report of `source` under `metric`, from an ensemble that covers it.
pub fn report(ens: &Ensemble, gate: &GateSpec, metric: FidelityMetric, source: StateSource) -> FidelityReport {
    restrict(ens, metric).report(gate, metric, source)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    /// Successful objective evaluations.
    pub evaluations: usize,
    pub failed_evaluations: usize,
    /// Continuous measurement records consumed (states x trajectories).
    pub measurement_records: usize,
    /// Physical duration of those records (ns).
    pub simulated_time_ns: f64,
}

impl Counters {
    fn observe(&mut self, records: usize, t_g: f64) {
        self.evaluations += 1;
        self.measurement_records += records;
        self.simulated_time_ns += records as f64 * t_g;
    }
}

/// Everything the calibration loop depends on, in core units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub truth: EnvParams,
    pub pulse: PulseParams,
    pub sim: SimConfig,
    pub estimator: EstimatorConfig,
    pub bayes: BayesConfig,
    pub n_traj: usize,
    pub source: StateSource,
    pub metric: FidelityMetric,
    pub gate: GateSpec,
    pub seed: u64,
}

impl CalibrationConfig {
    pub fn from_config(cfg: &Config) -> Self {
        let truth = cfg.environment.params();
        let pulse = cfg.pulse.params(truth.omega0);
        CalibrationConfig {
            truth,
            pulse,
            sim: cfg.simulation.sim(pulse.t_g),
            estimator: cfg.estimator,
            bayes: cfg.bayes.params(cfg.seed),
            n_traj: cfg.simulation.n_traj,
            source: cfg.calibration.source,
            metric: cfg.calibration.metric,
            gate: cfg.calibration.gate,
            seed: cfg.seed,
        }
    }

    pub fn setup(&self, theta: [f64; 2], evaluation: u64) -> FidelitySetup {
        FidelitySetup {
            gate: self.gate,
            estimator: self.estimator,
            n_traj: self.n_traj,
            root_seed: self.seed,
            evaluation,
            metric: self.metric,
            ..FidelitySetup::new(self.truth, self.pulse.with_theta(theta[0], theta[1]), self.sim)
        }
    }

    fn needs_estimators(&self) -> bool {
        matches!(self.source, StateSource::Rose | StateSource::Pse)
    }

    /// Objective at `theta`: the configured source and metric.
    pub fn objective(&self, theta: [f64; 2], evaluation: u64) -> Result<f64> {
        let setup = self.setup(theta, evaluation);
        if self.source == StateSource::Pure {
            return Ok(qcal_core::fidelity::gate_fidelity(&setup, StateSource::Pure)?.average);
        }
        let ens = collect_ensemble(&FidelityRun::new(setup, self.needs_estimators())?)?;
        Ok(ens.report(&self.gate, self.metric, self.source).average)
    }

    /// Records consumed by one evaluation.
    pub fn records_per_evaluation(&self) -> usize {
        self.metric.states().len() * self.n_traj
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Stamp trace records with elapsed seconds (breaks byte-identical reruns).
    pub wall_time: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config_hash: String,
    pub trace: Vec<TraceRecord>,
    pub best_theta: [f64; 2],
    pub best_observed: f64,
    /// Verification at `best_theta` with fresh noise: one report per source,
    /// all under the configured metric, plus the six-state pure fidelity.
    pub final_reports: Vec<FidelityReport>,
    pub counters: Counters,
    /// Total seconds; only with [`RunOptions::wall_time`].
    pub wall_time_s: Option<f64>,
}

impl RunArtifact {
    pub fn final_report(&self, source: StateSource) -> Option<&FidelityReport> {
        self.final_reports.iter().find(|r| r.source == source)
    }
}

/// Suggest, simulate, estimate, observe, until the budget or the target is
/// reached; then re-evaluates the best parameters once with fresh noise.
/// A non-empty `resume` trace is replayed first.
pub fn run_calibration(
    cfg: &CalibrationConfig,
    config_hash: &str,
    opts: RunOptions,
    resume: &[TraceRecord],
) -> Result<RunArtifact> {
    let start = std::time::Instant::now();
    let mut opt = if resume.is_empty() {
        BayesOptimizer::new(cfg.bayes)?
    } else {
        BayesOptimizer::resume(cfg.bayes, resume)?
    };
    let per_eval = cfg.records_per_evaluation();
    let mut counters = Counters::default();
    for r in resume {
        match r.f {
            Some(_) => counters.observe(per_eval, cfg.sim.t_end),
            None => counters.failed_evaluations += 1,
        }
    }
    let clock = || {
        if opts.wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };
    let mut failures = 0usize;
    // Noise streams follow the attempt count, so a retried point draws fresh
    // noise.
    let mut attempt = resume.len() as u64;
    suggest_observe_loop(
        &mut opt,
        |s| {
            let f = cfg.objective(s.theta, attempt);
            attempt += 1;
            match &f {
                Ok(v) => {
                    counters.observe(per_eval, cfg.sim.t_end);
                    log::info!(
                        "eval {:>2} {:?} alpha_s={:+.4} phi={:+.3} MHz F={v:.5}",
                        s.iter,
                        s.phase,
                        s.theta[0],
                        to_mhz(s.theta[1])
                    );
                }
                Err(_) => failures += 1,
            }
            f
        },
        clock,
    )
    .map_err(|e| QcalError::Runtime(format!("calibration aborted: {e}")))?;
    counters.failed_evaluations += failures;

    let (best_theta, best_observed) = opt
        .best()
        .ok_or_else(|| QcalError::Runtime("calibration produced no successful evaluation".into()))?;
    let setup = FidelitySetup {
        metric: FidelityMetric::SixState,
        ..cfg.setup(best_theta, FINAL_EVALUATION)
    };
    let run = FidelityRun::new(setup, true)?;
    let ens = collect_ensemble(&run)?;
    let mut final_reports: Vec<FidelityReport> = StateSource::ALL
        .iter()
        .map(|&src| report(&ens, &cfg.gate, cfg.metric, src))
        .collect();
    if cfg.metric != FidelityMetric::SixState {
        final_reports.push(report(&ens, &cfg.gate, FidelityMetric::SixState, StateSource::Pure));
    }
    Ok(RunArtifact {
        config_hash: config_hash.to_string(),
        trace: opt.trace().to_vec(),
        best_theta,
        best_observed,
        final_reports,
        counters,
        wall_time_s: opts.wall_time.then(|| start.elapsed().as_secs_f64()),
    })
}

/// `|F_est - F_pure| / F_pure`.
pub fn relative_error(estimated: f64, pure: f64) -> f64 {
    (estimated - pure).abs() / pure
}

/// Pure and PSE fidelities of one sweep point under both metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchPoint {
    pub f_pure_six: f64,
    pub f_pse_six: f64,
    pub f_pure_ground: f64,
    pub f_pse_ground: f64,
}

impl MismatchPoint {
    fn from_ensemble(ens: &Ensemble, gate: &GateSpec) -> Self {
        let f = |m, s| report(ens, gate, m, s).average;
        MismatchPoint {
            f_pure_six: f(FidelityMetric::SixState, StateSource::Pure),
            f_pse_six: f(FidelityMetric::SixState, StateSource::Pse),
            f_pure_ground: f(FidelityMetric::Ground, StateSource::Pure),
            f_pse_ground: f(FidelityMetric::Ground, StateSource::Pse),
        }
    }

    pub fn err_six(&self) -> f64 {
        relative_error(self.f_pse_six, self.f_pure_six)
    }

    pub fn err_ground(&self) -> f64 {
        relative_error(self.f_pse_ground, self.f_pure_ground)
    }

    pub fn error(&self, metric: FidelityMetric) -> f64 {
        match metric {
            FidelityMetric::SixState => self.err_six(),
            FidelityMetric::Ground => self.err_ground(),
        }
    }
}

/// Inputs shared by both sweeps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepBase {
    pub pulse: crate::config::PulseSection,
    pub sim: crate::config::SimulationSection,
    pub estimator: EstimatorConfig,
    pub gate: GateSpec,
    pub seed: u64,
}

impl SweepBase {
    pub fn from_config(cfg: &Config) -> Self {
        SweepBase {
            pulse: cfg.pulse,
            sim: cfg.simulation,
            estimator: cfg.estimator,
            gate: cfg.calibration.gate,
            seed: cfg.seed,
        }
    }

    fn point(&self, truth: EnvParams, belief: EnvParams, pulse: PulseParams, evaluation: u64) -> Result<MismatchPoint> {
        let setup = FidelitySetup {
            belief,
            gate: self.gate,
            estimator: self.estimator,
            n_traj: self.sim.n_traj,
            root_seed: self.seed,
            evaluation,
            metric: FidelityMetric::SixState,
            ..FidelitySetup::new(truth, pulse, self.sim.sim(pulse.t_g))
        };
        let ens = collect_ensemble(&FidelityRun::new(setup, true)?)?;
        Ok(MismatchPoint::from_ensemble(&ens, &self.gate))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drive {
    pub w_d_ghz: f64,
    /// Phase-ramp parameter actually used (MHz).
    pub phi_mhz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySweep {
    pub drives: Vec<Drive>,
    pub detunings_mhz: Vec<f64>,
    /// `points[i][d]`: detuning `i`, drive `d`.
    pub points: Vec<Vec<MismatchPoint>>,
    pub metric: FidelityMetric,
}

impl EnergySweep {
    /// Error of drive `d` at the detuning closest to `mhz`.
    pub fn error_near(&self, d: usize, mhz: f64) -> Option<f64> {
        let i = self
            .detunings_mhz
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - mhz).abs().total_cmp(&(b.1 - mhz).abs()))?
            .0;
        Some(self.points[i][d].error(self.metric))
    }
}

/// The simulator keeps the true `omega0`; the estimator runs at
/// `omega0 + detuning`. Every point reuses the same noise streams, so the
/// curves are free of point-to-point sampling scatter.
pub fn sweep_energy_mismatch(sec: &EnergySweepSection, base: &SweepBase, detunings_mhz: &[f64]) -> Result<EnergySweep> {
    let truth = sec.environment.params();
    let drives: Vec<(Drive, PulseParams)> = sec
        .drives
        .iter()
        .map(|d| {
            let p = crate::config::PulseSection {
                w_d_ghz: d.w_d_ghz,
                optimal_phase: d.optimal_phase,
                phi_mhz: d.phi_mhz,
                ..base.pulse
            }
            .params(truth.omega0);
            (
                Drive {
                    w_d_ghz: d.w_d_ghz,
                    phi_mhz: to_mhz(p.phi),
                },
                p,
            )
        })
        .collect();
    for (_, p) in &drives {
        p.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..detunings_mhz.len())
        .flat_map(|i| (0..drives.len()).map(move |d| (i, d)))
        .collect();
    let flat = jobs
        .par_iter()
        .map(|&(i, d)| {
            let belief = EnvParams {
                omega0: truth.omega0 + mhz(detunings_mhz[i]),
                ..truth
            };
            base.point(truth, belief, drives[d].1, d as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnergySweep {
        drives: drives.iter().map(|d| d.0).collect(),
        detunings_mhz: detunings_mhz.to_vec(),
        points: flat.chunks(drives.len()).map(|c| c.to_vec()).collect(),
        metric: sec.metric,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvPoint {
    pub r: f64,
    pub factor: f64,
    pub fidelities: MismatchPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSweep {
    pub r0: f64,
    pub points: Vec<EnvPoint>,
    pub metric: FidelityMetric,
}

impl EnvSweep {
    pub fn error_at(&self, factor: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.factor - factor).abs() < 1e-12)
            .map(|p| p.fidelities.error(self.metric))
    }
}

/// The estimator keeps `r0`; the simulated bath runs at `factor * r0`.
/// Errors are taken against the pure evolution of the simulated bath.
pub fn sweep_environment(sec: &EnvSweepSection, base: &SweepBase) -> Result<EnvSweep> {
    let belief = sec.environment.params();
    let pulse = base.pulse.params(belief.omega0);
    let points = sec
        .r_factors
        .par_iter()
        .map(|&factor| {
            let truth = EnvParams {
                r: belief.r * factor,
                ..belief
            };
            Ok(EnvPoint {
                r: truth.r,
                factor,
                fidelities: base.point(truth, belief, pulse, 0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnvSweep {
        r0: belief.r,
        points,
        metric: sec.metric,
    })
}

/// `round(log10 x)`.
pub fn order_of(x: f64) -> i32 {
    x.log10().round() as i32
}

/// `x` is of order `10^k` when `|log10 x - k| <= 0.5`.
pub fn is_of_order(x: f64, k: i32) -> bool {
    (x.log10() - k as f64).abs() <= 0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub quantity: String,
    pub unit: String,
    pub baseline: f64,
    pub proposed: f64,
    pub baseline_order: i32,
    pub proposed_order: i32,
}

/// Proposed method against repetitive measurement over an exhaustive grid.
///
/// * data number: state preparations whose data enter the search. The
///   proposed method uses one continuous record ensemble per state and
///   evaluation; the baseline needs one fidelity per grid point and state.
/// * test time for one fidelity: physical time of the records behind one
///   fidelity value, versus `baseline_shots` projective shots per state.
/// * trying times: evaluations versus grid points.
pub fn baseline_accounting(acc: &AccountingSection, cal: &CalibrationConfig, counters: &Counters) -> Vec<Table1Row> {
    let domain = Domain::pulse();
    let n_alpha = ((domain.hi[0] - domain.lo[0]) / acc.alpha_step).round() as usize + 1;
    let n_phi = (to_mhz(domain.hi[1] - domain.lo[1]) / acc.phi_step_mhz).round() as usize + 1;
    let grid = (n_alpha * n_phi) as f64;
    let states = cal.metric.states().len() as f64;
    let t_g = cal.sim.t_end;
    let evals = counters.evaluations as f64;
    let row = |quantity: &str, unit: &str, baseline: f64, proposed: f64| Table1Row {
        quantity: quantity.to_string(),
        unit: unit.to_string(),
        baseline,
        proposed,
        baseline_order: order_of(baseline),
        proposed_order: order_of(proposed),
    };
    vec![
        row("data_number", "state preparations", grid * states, evals * states),
        row(
            "test_time_for_fidelity",
            "us",
            states * acc.baseline_shots as f64 * (t_g + acc.shot_overhead_ns) / 1e3,
            states * cal.n_traj as f64 * t_g / 1e3,
        ),
        row("trying_times", "parameter settings", grid, evals),
    ]
}
