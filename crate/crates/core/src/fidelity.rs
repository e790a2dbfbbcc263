//! State overlaps and the six-eigenstate gate fidelity
//!
//! ```text
//! F = 1/6 sum_j Tr[U rho_j U^dag  E(rho_j)],   j = +-x, +-y, +-z
//! ```
//!
//! where `E` is the simulated (or estimated) channel. For qubits the trace
//! reduces to `(1 + a.b) / 2` on Bloch vectors. Final states are compared in
//! the frame co-rotating with the qubit, since that is the frame the target
//! rotation is defined in. Estimated finals are read in the frame of the
//! qubit frequency the estimator was given.
//!
//! [`gate_fidelity`] is the whole pipeline. The pieces it is built from
//! ([`FidelityRun`], [`FidelityRun::channel`], [`assemble`]) are public so a
//! caller can fan the trajectories out on a thread pool and still reproduce the
//! sequential result exactly.

// Float math for no_std; the lint misfires where core also offers these.
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::dynamics::{BlochState, Integrator, Model, SimConfig};
use crate::env::EnvParams;
use crate::estimator::{run_estimators_on, EstimatorConfig};
use crate::linalg::Vec3;
use crate::pulse::PulseParams;
use crate::rng::StreamSeed;
use crate::{Error, Result};

/// `Tr[rho_a rho_b] = (1 + a.b) / 2`.
pub fn state_overlap(a: &BlochState, b: &BlochState) -> f64 {
    0.5 * (1.0 + a.x * b.x + a.y * b.y + a.z * b.z)
}

/// Ideal gate as a rotation of the Bloch sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpec {
    pub axis: [f64; 3],
    pub angle: f64,
}

impl GateSpec {
    pub fn new(axis: [f64; 3], angle: f64) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !(n > 0.0 && n.is_finite() && angle.is_finite()) {
            return Err(Error::param("axis", "must be a finite non-zero vector"));
        }
        Ok(GateSpec {
            axis: [axis[0] / n, axis[1] / n, axis[2] / n],
            angle,
        })
    }

    /// The pi rotation about x.
    pub fn pi_x() -> Self {
        GateSpec {
            axis: [1.0, 0.0, 0.0],
            angle: core::f64::consts::PI,
        }
    }

    pub fn identity() -> Self {
        GateSpec {
            axis: [0.0, 0.0, 1.0],
            angle: 0.0,
        }
    }

    /// Rodrigues rotation of a Bloch vector.
    pub fn apply(&self, v: &BlochState) -> BlochState {
        let k = Vec3::from(self.axis);
        let v = v.to_vec3();
        let (s, c) = self.angle.sin_cos();
        let r = v * c + k.cross(&v) * s + k * (k.dot(&v) * (1.0 - c));
        BlochState::from_vec3(&r)
    }
}

impl Default for GateSpec {
    fn default() -> Self {
        GateSpec::pi_x()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PauliState {
    PlusX,
    MinusX,
    PlusY,
    MinusY,
    PlusZ,
    MinusZ,
}

impl PauliState {
    pub const ALL: [PauliState; 6] = [
        PauliState::PlusX,
        PauliState::MinusX,
        PauliState::PlusY,
        PauliState::MinusY,
        PauliState::PlusZ,
        PauliState::MinusZ,
    ];

    pub fn bloch(self) -> BlochState {
        match self {
            PauliState::PlusX => BlochState::new(1.0, 0.0, 0.0),
            PauliState::MinusX => BlochState::new(-1.0, 0.0, 0.0),
            PauliState::PlusY => BlochState::new(0.0, 1.0, 0.0),
            PauliState::MinusY => BlochState::new(0.0, -1.0, 0.0),
            PauliState::PlusZ => BlochState::new(0.0, 0.0, 1.0),
            PauliState::MinusZ => BlochState::new(0.0, 0.0, -1.0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            PauliState::PlusX => "+x",
            PauliState::MinusX => "-x",
            PauliState::PlusY => "+y",
            PauliState::MinusY => "-y",
            PauliState::PlusZ => "+z",
            PauliState::MinusZ => "-z",
        }
    }
}

/// Where the final state of each channel comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSource {
    /// Deterministic run of the true model at `M = 0`.
    Pure,
    /// Ensemble mean of the measured (conditioned) true trajectories.
    Measured,
    /// Ensemble mean of the ROSE estimates.
    Rose,
    /// Ensemble mean of the PSE reconstructions `X_hat - M X_p`.
    Pse,
}

impl StateSource {
    pub const ALL: [StateSource; 4] = [
        StateSource::Pure,
        StateSource::Measured,
        StateSource::Rose,
        StateSource::Pse,
    ];
}

/// Which initial states enter the average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityMetric {
    /// All six Pauli eigenstates.
    #[default]
    SixState,
    /// Only the `-z` start: the overlap of the final state with its target,
    /// i.e. the z-fidelity of a single preparation.
    Ground,
}

impl FidelityMetric {
    pub fn states(self) -> &'static [PauliState] {
        match self {
            FidelityMetric::SixState => &PauliState::ALL,
            FidelityMetric::Ground => &PauliState::ALL[5..],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityTerm {
    pub state: PauliState,
    /// Averaged final state in the qubit frame.
    pub final_state: BlochState,
    pub fidelity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub source: StateSource,
    pub metric: FidelityMetric,
    pub per_state: Vec<FidelityTerm>,
    pub average: f64,
    pub n_traj: usize,
}

/// Everything a gate-fidelity evaluation depends on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelitySetup {
    /// Bath and measurement of the simulated device.
    pub truth: EnvParams,
    /// What the estimators believe; usually equal to `truth`.
    pub belief: EnvParams,
    pub pulse: PulseParams,
    pub gate: GateSpec,
    pub sim: SimConfig,
    pub estimator: EstimatorConfig,
    pub n_traj: usize,
    pub root_seed: u64,
    /// Evaluation index, folded into the stream id so repeated evaluations
    /// draw independent noise.
    pub evaluation: u64,
    pub metric: FidelityMetric,
}

impl FidelitySetup {
    pub fn new(env: EnvParams, pulse: PulseParams, sim: SimConfig) -> Self {
        FidelitySetup {
            truth: env,
            belief: env,
            pulse,
            gate: GateSpec::pi_x(),
            sim,
            estimator: EstimatorConfig::default(),
            n_traj: 1,
            root_seed: 0,
            evaluation: 0,
            metric: FidelityMetric::SixState,
        }
    }
}

/// Final states of one trajectory, all in the qubit frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelOutput {
    pub measured: BlochState,
    pub rose: BlochState,
    pub pse: BlochState,
}

/// A setup discretized once and reused across states and trajectories.
#[derive(Clone, Debug)]
pub struct FidelityRun {
    setup: FidelitySetup,
    truth: Integrator,
    pure: Integrator,
    belief: Option<Integrator>,
}

impl FidelityRun {
    /// `needs_estimators = false` skips building the belief grid, which is
    /// only possible when no estimator source will be requested.
    pub fn new(setup: FidelitySetup, needs_estimators: bool) -> Result<Self> {
        if setup.n_traj == 0 {
            return Err(Error::param("n_traj", "must be >= 1"));
        }
        setup.gate.validate()?;
        let frame = setup.sim.frame;
        let truth = Integrator::new(Model::new(setup.truth, setup.pulse, frame), setup.sim)?;
        let pure = Integrator::new(
            Model::new(setup.truth.without_measurement(), setup.pulse, frame),
            setup.sim,
        )?;
        let belief = if needs_estimators {
            if setup.belief.m_strength * setup.belief.eta <= 0.0 || setup.truth.m_strength * setup.truth.eta <= 0.0 {
                return Err(Error::EstimatorUndriven);
            }
            Some(Integrator::new(
                Model::new(setup.belief, setup.pulse, frame),
                setup.sim,
            )?)
        } else {
            None
        };
        Ok(FidelityRun {
            setup,
            truth,
            pure,
            belief,
        })
    }

    pub fn setup(&self) -> &FidelitySetup {
        &self.setup
    }

    pub fn seed(&self, state: PauliState, traj: usize) -> StreamSeed {
        StreamSeed::for_trajectory(
            self.setup.root_seed,
            self.setup.evaluation,
            state.index() as u64,
            traj as u64,
        )
    }

    /// Final state of the measurement-free true evolution.
    pub fn pure_final(&self, state: PauliState) -> Result<BlochState> {
        let rec = self.pure.run(state.bloch(), None)?;
        Ok(qubit_frame(self.pure.model(), &rec.final_state(), rec.final_time()))
    }

    /// Simulates one measured trajectory and, if estimators are enabled, runs
    /// them on its record.
    pub fn channel(&self, state: PauliState, traj: usize) -> Result<ChannelOutput> {
        let x0 = state.bloch();
        let rec = self.truth.run(x0, Some(self.seed(state, traj)))?;
        let t = rec.final_time();
        let measured = qubit_frame(self.truth.model(), &rec.final_state(), t);
        let (rose, pse) = match &self.belief {
            Some(grid) => {
                let h = run_estimators_on(grid, &rec, x0, &self.setup.estimator)?;
                let t = *h.times.last().expect("history holds the initial time");
                (
                    qubit_frame(grid.model(), &h.final_x_hat(), t),
                    qubit_frame(grid.model(), &h.final_x0(), t),
                )
            }
            None => (BlochState::default(), BlochState::default()),
        };
        Ok(ChannelOutput { measured, rose, pse })
    }

    pub fn has_estimators(&self) -> bool {
        self.belief.is_some()
    }
}

impl GateSpec {
    pub fn validate(&self) -> Result<()> {
        let n = (self.axis[0].powi(2) + self.axis[1].powi(2) + self.axis[2].powi(2)).sqrt();
        if (n - 1.0).abs() > 1e-12 || !self.angle.is_finite() {
            return Err(Error::param("gate", "axis must be unit length and angle finite"));
        }
        Ok(())
    }
}

fn qubit_frame(model: &Model, s: &BlochState, t: f64) -> BlochState {
    BlochState::from_vec3(&model.to_qubit_frame(&s.to_vec3(), t))
}

/// Component-wise mean, summed in index order.
pub fn mean_state(states: &[BlochState]) -> BlochState {
    let n = states.len().max(1) as f64;
    let mut acc = Vec3::zeros();
    for s in states {
        acc += s.to_vec3();
    }
    BlochState::from_vec3(&(acc / n))
}

/// Builds the report from one averaged final state per metric state.
pub fn assemble(
    gate: &GateSpec,
    source: StateSource,
    metric: FidelityMetric,
    finals: &[(PauliState, BlochState)],
    n_traj: usize,
) -> FidelityReport {
    let per_state: Vec<FidelityTerm> = finals
        .iter()
        .map(|&(state, final_state)| {
            let target = gate.apply(&state.bloch());
            FidelityTerm {
                state,
                final_state,
                fidelity: state_overlap(&target, &final_state).clamp(0.0, 1.0),
            }
        })
        .collect();
    let average = per_state.iter().map(|t| t.fidelity).sum::<f64>() / per_state.len().max(1) as f64;
    FidelityReport {
        source,
        metric,
        per_state,
        average,
        n_traj,
    }
}

/// Per-state, per-trajectory channel outputs in index order, as produced by
/// [`FidelityRun::channel`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub states: Vec<PauliState>,
    pub outputs: Vec<Vec<ChannelOutput>>,
    pub pure: Vec<BlochState>,
}

impl Ensemble {
    /// Runs every channel sequentially.
    pub fn collect(run: &FidelityRun) -> Result<Self> {
        let states: Vec<PauliState> = run.setup().metric.states().to_vec();
        let mut outputs = Vec::with_capacity(states.len());
        let mut pure = Vec::with_capacity(states.len());
        for &s in &states {
            pure.push(run.pure_final(s)?);
            let mut per = Vec::with_capacity(run.setup().n_traj);
            for k in 0..run.setup().n_traj {
                per.push(run.channel(s, k)?);
            }
            outputs.push(per);
        }
        Ok(Ensemble { states, outputs, pure })
    }

    pub fn report(&self, gate: &GateSpec, metric: FidelityMetric, source: StateSource) -> FidelityReport {
        let n_traj = self.outputs.first().map_or(0, |o| o.len());
        let finals: Vec<(PauliState, BlochState)> = self
            .states
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let pick: Vec<BlochState> = match source {
                    StateSource::Pure => return (s, self.pure[i]),
                    StateSource::Measured => self.outputs[i].iter().map(|o| o.measured).collect(),
                    StateSource::Rose => self.outputs[i].iter().map(|o| o.rose).collect(),
                    StateSource::Pse => self.outputs[i].iter().map(|o| o.pse).collect(),
                };
                (s, mean_state(&pick))
            })
            .collect();
        let n = if source == StateSource::Pure { 1 } else { n_traj };
        assemble(gate, source, metric, &finals, n)
    }
}

/// Gate fidelity of the setup's pulse from the chosen source.
pub fn gate_fidelity(setup: &FidelitySetup, source: StateSource) -> Result<FidelityReport> {
    let needs_est = matches!(source, StateSource::Rose | StateSource::Pse);
    let run = FidelityRun::new(*setup, needs_est)?;
    if source == StateSource::Pure {
        let finals = setup
            .metric
            .states()
            .iter()
            .map(|&s| Ok((s, run.pure_final(s)?)))
            .collect::<Result<Vec<_>>>()?;
        return Ok(assemble(&setup.gate, source, setup.metric, &finals, 1));
    }
    let ens = Ensemble::collect(&run)?;
    Ok(ens.report(&setup.gate, setup.metric, source))
}

/// Histogram bin width for [`ErrorDistribution`].
pub const ERROR_BIN_WIDTH: f64 = 0.0025;
/// Number of regular bins; one overflow bin follows them.
pub const ERROR_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    /// `|z - z_hat|` per trajectory.
    pub errors: Vec<f64>,
    /// Lower bin edges; the last bin collects everything above the range.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub max: f64,
    pub fraction_within: f64,
    pub threshold: f64,
}

/// Per-trajectory `|z(t_g) - z_hat(t_g)|` statistics.
pub fn error_distribution(real: &[BlochState], estimated: &[BlochState], threshold: f64) -> Result<ErrorDistribution> {
    if real.len() != estimated.len() {
        return Err(Error::LengthMismatch {
            left: real.len(),
            right: estimated.len(),
        });
    }
    let errors: Vec<f64> = real.iter().zip(estimated).map(|(a, b)| (a.z - b.z).abs()).collect();
    let mut counts = alloc::vec![0usize; ERROR_BINS + 1];
    for &e in &errors {
        let bin = ((e / ERROR_BIN_WIDTH) as usize).min(ERROR_BINS);
        counts[bin] += 1;
    }
    let edges = (0..=ERROR_BINS).map(|i| i as f64 * ERROR_BIN_WIDTH).collect();
    let n = errors.len();
    let (mean, max, within) = if n == 0 {
        (0.0, 0.0, 0.0)
    } else {
        (
            errors.iter().sum::<f64>() / n as f64,
            errors.iter().cloned().fold(0.0, f64::max),
            errors.iter().filter(|&&e| e <= threshold).count() as f64 / n as f64,
        )
    };
    Ok(ErrorDistribution {
        errors,
        edges,
        counts,
        mean,
        max,
        fraction_within: within,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn overlap_landmarks() {
        let a = BlochState::new(0.6, 0.0, 0.8);
        let minus = BlochState::new(-0.6, 0.0, -0.8);
        assert_relative_eq!(state_overlap(&a, &a), 1.0, epsilon = 1e-15);
        assert_relative_eq!(state_overlap(&a, &minus), 0.0, epsilon = 1e-15);
        assert_eq!(state_overlap(&a, &BlochState::default()), 0.5);
    }

    #[test]
    fn pi_x_maps_the_eigenstates() {
        let g = GateSpec::pi_x();
        let cases = [
            (PauliState::PlusX, PauliState::PlusX),
            (PauliState::MinusX, PauliState::MinusX),
            (PauliState::PlusY, PauliState::MinusY),
            (PauliState::MinusY, PauliState::PlusY),
            (PauliState::PlusZ, PauliState::MinusZ),
            (PauliState::MinusZ, PauliState::PlusZ),
        ];
        for (from, to) in cases {
            let r = g.apply(&from.bloch());
            assert_relative_eq!(r.to_vec3(), to.bloch().to_vec3(), epsilon = 1e-15);
        }
    }

    #[test]
    fn gate_axis_is_normalized() {
        let g = GateSpec::new([0.0, 3.0, 4.0], 1.0).unwrap();
        assert_relative_eq!(g.axis[1], 0.6);
        assert!(g.validate().is_ok());
        assert!(GateSpec::new([0.0; 3], 1.0).is_err());
    }

    #[test]
    fn mixing_channel_gives_one_half() {
        let finals: Vec<_> = PauliState::ALL.iter().map(|&s| (s, BlochState::default())).collect();
        let r = assemble(
            &GateSpec::pi_x(),
            StateSource::Pure,
            FidelityMetric::SixState,
            &finals,
            1,
        );
        assert_eq!(r.average, 0.5);
    }

    #[test]
    fn distribution_landmarks() {
        let real: Vec<_> = (0..10)
            .map(|i| BlochState::new(0.0, 0.0, 0.1 * i as f64 - 0.5))
            .collect();
        let same = error_distribution(&real, &real, 0.02).unwrap();
        assert_eq!(same.counts[0], 10);
        assert_eq!(same.mean, 0.0);
        let shifted: Vec<_> = real.iter().map(|s| BlochState::new(s.x, s.y, s.z + 0.01)).collect();
        let d = error_distribution(&real, &shifted, 0.02).unwrap();
        assert_relative_eq!(d.mean, 0.01, epsilon = 1e-12);
        assert_eq!(d.fraction_within, 1.0);
        assert!(matches!(
            error_distribution(&real, &real[..3], 0.02),
            Err(Error::LengthMismatch { left: 10, right: 3 })
        ));
    }
}
