//! Run configuration: one TOML file with a section per module, in lab units
//! (GHz, MHz, ns). Every key has a default, so an empty file is a complete
//! configuration; `example.conf` lists them all.

use std::path::Path;

use qcal_core::bayes::{AcquisitionConfig, BayesConfig, Domain, TransformMode};
use qcal_core::dynamics::{Frame, Scheme, SimConfig};
use qcal_core::env::EnvParams;
use qcal_core::estimator::EstimatorConfig;
use qcal_core::fidelity::{FidelityMetric, GateSpec, PauliState, StateSource};
use qcal_core::pulse::{pi_amplitude, PulseParams};
use qcal_core::units::{ghz, mhz};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::QcalError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Root seed of every random stream (trajectories and initial design).
    pub seed: u64,
    pub environment: EnvSection,
    pub pulse: PulseSection,
    pub simulation: SimulationSection,
    pub estimator: EstimatorConfig,
    pub bayes: BayesSection,
    pub calibration: CalibrationSection,
    pub simulate: SimulateSection,
    pub sweep_energy: EnergySweepSection,
    pub sweep_env: EnvSweepSection,
    pub accounting: AccountingSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub omega0_ghz: f64,
    pub alpha_c: f64,
    /// Cutoff ratio `omega_c / omega0`.
    pub r: f64,
    pub kbt_over_omega0: f64,
    pub eta: f64,
    /// Measurement strength `M` in MHz.
    pub m_mhz: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            omega0_ghz: 4.889,
            alpha_c: 0.5,
            r: 0.01,
            kbt_over_omega0: 0.05,
            eta: 1.0,
            m_mhz: 2.0,
        }
    }
}

impl EnvSection {
    pub fn params(&self) -> EnvParams {
        let omega0 = ghz(self.omega0_ghz);
        EnvParams {
            alpha_c: self.alpha_c,
            r: self.r,
            omega0,
            kbt: self.kbt_over_omega0 * omega0,
            eta: self.eta,
            m_strength: mhz(self.m_mhz),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseSection {
    pub t_g: f64,
    pub sigma: f64,
    /// Gaussian amplitude as a multiple of the pi-rotation amplitude.
    pub amp_scale: f64,
    /// Envelope baseline (rad/ns).
    pub offset: f64,
    pub w_d_ghz: f64,
    pub delta_mhz: f64,
    pub alpha_s: f64,
    pub phi_mhz: f64,
    /// Replace `phi` by the resonance value `(omega0 - w_d) / 2`.
    pub optimal_phase: bool,
}

impl Default for PulseSection {
    fn default() -> Self {
        PulseSection {
            t_g: 20.0,
            sigma: 5.0,
            amp_scale: 1.0,
            offset: 0.0,
            w_d_ghz: 4.90,
            delta_mhz: -250.0,
            alpha_s: 0.0,
            phi_mhz: 0.0,
            optimal_phase: true,
        }
    }
}

impl PulseSection {
    /// Pulse for a qubit at `omega0` (rad/ns).
    pub fn params(&self, omega0: f64) -> PulseParams {
        let w_d = ghz(self.w_d_ghz);
        let phi = if self.optimal_phase {
            (omega0 - w_d) / 2.0
        } else {
            mhz(self.phi_mhz)
        };
        PulseParams {
            amp: self.amp_scale * pi_amplitude(self.sigma, self.t_g),
            offset: self.offset,
            sigma: self.sigma,
            t_g: self.t_g,
            w_d,
            delta: mhz(self.delta_mhz),
            alpha_s: self.alpha_s,
            phi,
            ..PulseParams::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub dt: f64,
    pub frame: Frame,
    pub scheme: Scheme,
    /// Trajectories per initial state and evaluation.
    pub n_traj: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            dt: 0.01,
            frame: Frame::Rotating,
            scheme: Scheme::Exponential,
            n_traj: 50,
        }
    }
}

impl SimulationSection {
    /// Grid over one gate of length `t_g`.
    pub fn sim(&self, t_g: f64) -> SimConfig {
        SimConfig {
            dt: self.dt,
            t_end: t_g,
            frame: self.frame,
            scheme: self.scheme,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BayesSection {
    pub n_init: usize,
    pub budget: usize,
    pub beta0: f64,
    pub decay: Option<f64>,
    pub segments: usize,
    pub cell_grid: usize,
    pub refine_grid: usize,
    pub use_std: bool,
    pub transform_mode: TransformMode,
    pub jitter: f64,
    pub refit_every: usize,
    /// Stop once an observation reaches this fidelity.
    pub target: Option<f64>,
}

impl Default for BayesSection {
    fn default() -> Self {
        let a = AcquisitionConfig::default();
        let b = BayesConfig::default();
        BayesSection {
            n_init: a.n_init,
            budget: a.budget,
            beta0: a.beta0,
            decay: a.decay,
            segments: a.segments,
            cell_grid: a.cell_grid,
            refine_grid: a.refine_grid,
            use_std: a.use_std,
            transform_mode: b.transform_mode,
            jitter: b.jitter,
            refit_every: b.refit_every,
            target: b.target,
        }
    }
}

impl BayesSection {
    pub fn params(&self, seed: u64) -> BayesConfig {
        BayesConfig {
            acquisition: AcquisitionConfig {
                beta0: self.beta0,
                decay: self.decay,
                segments: self.segments,
                cell_grid: self.cell_grid,
                refine_grid: self.refine_grid,
                budget: self.budget,
                n_init: self.n_init,
                use_std: self.use_std,
            },
            transform_mode: self.transform_mode,
            jitter: self.jitter,
            domain: Domain::pulse(),
            refit_every: self.refit_every,
            target: self.target,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    /// State source of the optimized objective.
    pub source: StateSource,
    pub metric: FidelityMetric,
    pub gate: GateSpec,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            source: StateSource::Pse,
            metric: FidelityMetric::SixState,
            gate: GateSpec::pi_x(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Initial state of the exported trajectories.
    pub state: PauliState,
    /// Trajectories to run; `None` uses `simulation.n_traj`.
    pub n_traj: Option<usize>,
    /// Records written out individually (CSV and binary).
    pub export_records: usize,
    /// Averaging window of the coarse-grained record (ns).
    pub window_ns: f64,
    /// Tracking threshold on `|z - z_hat|`.
    pub error_threshold: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            state: PauliState::MinusZ,
            n_traj: None,
            export_records: 1,
            window_ns: 1.0,
            error_threshold: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveSection {
    pub w_d_ghz: f64,
    pub optimal_phase: bool,
    pub phi_mhz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySweepSection {
    /// The simulated device; the estimator shares it except for `omega0`.
    pub environment: EnvSection,
    /// Estimator detuning range `omega0_est - omega0` (MHz), inclusive.
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub step_mhz: f64,
    pub drives: Vec<DriveSection>,
    /// Metric of the `error` columns; both are always written.
    pub metric: FidelityMetric,
}

impl Default for DriveSection {
    fn default() -> Self {
        DriveSection {
            w_d_ghz: 4.90,
            optimal_phase: true,
            phi_mhz: 0.0,
        }
    }
}

impl Default for EnergySweepSection {
    fn default() -> Self {
        EnergySweepSection {
            environment: EnvSection {
                omega0_ghz: 4.88,
                alpha_c: 0.25,
                m_mhz: 1.5,
                ..EnvSection::default()
            },
            start_mhz: 0.0,
            stop_mhz: -30.0,
            step_mhz: 0.1,
            drives: vec![
                DriveSection::default(),
                DriveSection {
                    w_d_ghz: 4.885,
                    optimal_phase: false,
                    phi_mhz: 0.0,
                },
            ],
            metric: FidelityMetric::Ground,
        }
    }
}

impl EnergySweepSection {
    /// Detunings from `start_mhz` towards `stop_mhz`, endpoints included.
    pub fn detunings(&self) -> Vec<f64> {
        let n = ((self.stop_mhz - self.start_mhz) / self.step_mhz).abs().round() as usize;
        let step = if self.stop_mhz >= self.start_mhz {
            self.step_mhz.abs()
        } else {
            -self.step_mhz.abs()
        };
        // Rounded to 1e-9 MHz so accumulated float error cannot leak into files.
        (0..=n)
            .map(|k| ((self.start_mhz + k as f64 * step) * 1e9).round() / 1e9)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSweepSection {
    /// The estimator's bath; the simulator uses `r = factor * r`.
    pub environment: EnvSection,
    pub r_factors: Vec<f64>,
    pub metric: FidelityMetric,
}

impl Default for EnvSweepSection {
    fn default() -> Self {
        EnvSweepSection {
            environment: EnvSection {
                omega0_ghz: 4.88,
                ..EnvSection::default()
            },
            r_factors: vec![1.0, 0.9, 0.8, 0.75, 0.7, 0.6, 0.5],
            metric: FidelityMetric::SixState,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccountingSection {
    /// Grid resolution of the exhaustive baseline in `alpha_s`.
    pub alpha_step: f64,
    /// Grid resolution of the exhaustive baseline in `phi` (MHz).
    pub phi_step_mhz: f64,
    /// Projective shots per state for one repetitive-measurement fidelity.
    pub baseline_shots: usize,
    /// Readout and reset time per shot on top of the gate (ns).
    pub shot_overhead_ns: f64,
}

impl Default for AccountingSection {
    fn default() -> Self {
        AccountingSection {
            alpha_step: 0.01,
            phi_step_mhz: 1.0,
            baseline_shots: 1000,
            shot_overhead_ns: 1000.0,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, QcalError> {
        let cfg: Config = toml::from_str(text).map_err(|e| QcalError::Config(format!("malformed config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, QcalError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            QcalError::Config(format!(
                "cannot read config {}: {e}; start from example.conf",
                path.display()
            ))
        })?;
        Self::from_toml(&text)
    }

    /// Checks every derived core parameter set.
    pub fn validate(&self) -> Result<(), QcalError> {
        let env = self.environment.params();
        env.validate()?;
        self.pulse.params(env.omega0).validate()?;
        self.simulation.sim(self.pulse.t_g).validate()?;
        self.estimator.validate()?;
        self.bayes.params(self.seed).validate()?;
        self.calibration.gate.validate()?;
        self.sweep_energy.environment.params().validate()?;
        self.sweep_env.environment.params().validate()?;
        let bad = |what: &str| Err(QcalError::Config(what.to_string()));
        if self.simulation.n_traj == 0 || self.simulate.n_traj == Some(0) {
            return bad("n_traj must be >= 1");
        }
        if !(self.sweep_energy.step_mhz.abs() > 0.0) || self.sweep_energy.drives.is_empty() {
            return bad("sweep_energy needs a non-zero step and at least one drive");
        }
        if self.sweep_env.r_factors.iter().any(|f| !(*f > 0.0)) || self.sweep_env.r_factors.is_empty() {
            return bad("sweep_env.r_factors must be positive and non-empty");
        }
        if !(self.accounting.alpha_step > 0.0 && self.accounting.phi_step_mhz > 0.0) {
            return bad("accounting grid steps must be > 0");
        }
        if let Some(t) = self.bayes.target {
            if !(t > 0.0 && t < 1.0) {
                return bad("bayes.target must lie in (0, 1)");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Trajectories per evaluation for the simulate and estimate commands.
    pub fn simulate_n_traj(&self) -> usize {
        self.simulate.n_traj.unwrap_or(self.simulation.n_traj)
    }
}
