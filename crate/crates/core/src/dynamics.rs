//! Bloch-form stochastic master equation under continuous weak measurement of
//! `sigma_z`:
//!
//! ```text
//! dX = A0(t) dt + A2(t) X dt + G(X) dW
//! dY = z dt + dW / sqrt(M eta)
//! ```
//!
//! with `A0 = [0, 0, -2 gamma]`, `G(X) = -sqrt(M eta) [xz, yz, z^2 - 1]` and
//! `A2` holding the precession about `(u_x, u_y, omega)` plus the damping
//! diagonal `[-delta - M/2, -delta - M/2, -2 delta]`.
//!
//! Two integrators are provided.
//!
//! * [`Scheme::EulerMaruyama`] is the textbook update.
//! * [`Scheme::Exponential`] (the default) integrates the linear drift exactly
//!   over the step (with `A2` frozen at the step midpoint) and adds the same
//!   Ito noise term, so fast precession does not inflate the Bloch vector.
//!
//! Both scale the state back onto the ball whenever its norm exceeds one.
//! The drift itself is not ball preserving: at the south pole
//! `dz/dt = 2 (delta - gamma)`, which is negative whenever `gamma > delta`
//! (the low-temperature regime). Near-pure conditioned trajectories are
//! therefore projected from time to time, and their ensemble mean sits
//! slightly below the unconditioned solution.

use alloc::vec::Vec;

use nalgebra::RowVector3;
// Float math for no_std; the lint misfires where core also offers these.
#[allow(unused_imports)]
use num_traits::Float;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::EnvParams;
use crate::linalg::{exp_phi1, rotate_z, Mat3, Vec3};
use crate::pulse::PulseParams;
use crate::rng::StreamSeed;
use crate::{Error, Result};

/// Qubit state as a Bloch vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochState {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        BlochState { x, y, z }
    }

    pub const fn north() -> Self {
        BlochState::new(0.0, 0.0, 1.0)
    }

    pub const fn south() -> Self {
        BlochState::new(0.0, 0.0, -1.0)
    }

    pub fn to_vec3(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn from_vec3(v: &Vec3) -> Self {
        BlochState::new(v.x, v.y, v.z)
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Scales the state back onto the unit sphere if it left the ball.
    pub fn clamp_to_ball(&mut self) -> bool {
        let n = self.norm();
        if n > 1.0 {
            self.x /= n;
            self.y /= n;
            self.z /= n;
            true
        } else {
            false
        }
    }
}

/// Reference frame the equations are integrated in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Lab frame, exactly as the Bloch equations are written.
    #[default]
    Lab,
    /// Frame rotating at the drive frequency, counter-rotating terms dropped.
    Rotating,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    #[default]
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Step (ns).
    pub dt: f64,
    /// Duration (ns).
    pub t_end: f64,
    #[serde(default)]
    pub frame: Frame,
    #[serde(default)]
    pub scheme: Scheme,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_end: 20.0,
            frame: Frame::Lab,
            scheme: Scheme::Exponential,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", "must be > 0"));
        }
        if !(self.t_end >= self.dt) {
            return Err(Error::param("t_end", "must be >= dt"));
        }
        Ok(())
    }

    /// Number of steps on the grid.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Drift and output matrices at one instant. `G` depends on the state and is
/// evaluated with [`SystemMatrices::g`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemMatrices {
    pub a0: Vec3,
    pub a2: Mat3,
    pub c: RowVector3<f64>,
    /// Bare measurement strength `M` (it sets the dephasing in `A2`).
    pub m: f64,
    /// `sqrt(M eta)`, the noise scale; zero for unmeasured evolution.
    pub sqrt_m_eta: f64,
}

impl SystemMatrices {
    /// `G(X) = -sqrt(M eta) [xz, yz, z^2 - 1]`.
    #[inline]
    pub fn g(&self, x: &Vec3) -> Vec3 {
        g_shape(x) * self.sqrt_m_eta
    }

    /// Drift `A0 + A2 X`.
    #[inline]
    pub fn drift(&self, x: &Vec3) -> Vec3 {
        self.a0 + self.a2 * x
    }
}

/// `-[xz, yz, z^2 - 1]`, the state dependence of the diffusion vector.
#[inline]
pub fn g_shape(x: &Vec3) -> Vec3 {
    Vec3::new(-x.x * x.z, -x.y * x.z, 1.0 - x.z * x.z)
}

/// Output row `C = [0, 0, 1]`.
pub fn output_row() -> RowVector3<f64> {
    RowVector3::new(0.0, 0.0, 1.0)
}

/// Matrices with an explicit precession rate about z (the qubit frequency in
/// the lab frame, the qubit-drive detuning in the rotating frame).
pub fn system_matrices_with(env: &EnvParams, controls: (f64, f64), t: f64, precession: f64) -> SystemMatrices {
    let (gamma, delta) = env.kernels(t);
    let (ux, uy) = controls;
    let m = env.m_strength;
    let d = -delta - 0.5 * m;
    let w = precession;
    SystemMatrices {
        a0: Vec3::new(0.0, 0.0, -2.0 * gamma),
        #[rustfmt::skip]
        a2: Mat3::new(
            d,   -w,   uy,
            w,    d,  -ux,
            -uy, ux, -2.0 * delta,
        ),
        c: output_row(),
        m,
        sqrt_m_eta: (m * env.eta).sqrt(),
    }
}

/// Lab-frame matrices at time `t` for controls `(u_x, u_y)`.
pub fn system_matrices(env: &EnvParams, controls: (f64, f64), t: f64) -> SystemMatrices {
    system_matrices_with(env, controls, t, env.omega0)
}

/// `dA2/dM`: only the two transverse damping entries depend on `M`.
pub fn d_a2_dm() -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(-0.5, -0.5, 0.0))
}

/// Bath, drive and frame bundled into something that yields matrices in time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Model {
    pub env: EnvParams,
    pub pulse: PulseParams,
    pub frame: Frame,
}

impl Model {
    pub fn new(env: EnvParams, pulse: PulseParams, frame: Frame) -> Self {
        Model { env, pulse, frame }
    }

    /// Precession rate about z in the integration frame.
    pub fn precession(&self) -> f64 {
        match self.frame {
            Frame::Lab => self.env.omega0,
            Frame::Rotating => self.env.omega0 - self.pulse.w_d,
        }
    }

    #[inline]
    pub fn controls(&self, t: f64) -> (f64, f64) {
        match self.frame {
            Frame::Lab => self.pulse.lab_controls(t),
            Frame::Rotating => self.pulse.rotating_controls(t),
        }
    }

    #[inline]
    pub fn matrices(&self, t: f64) -> SystemMatrices {
        system_matrices_with(&self.env, self.controls(t), t, self.precession())
    }

    /// Expresses an integration-frame Bloch vector at time `t` in the frame
    /// co-rotating with the qubit at `omega0` (the frame gates are judged in).
    pub fn to_qubit_frame(&self, v: &Vec3, t: f64) -> Vec3 {
        rotate_z(v, -self.precession() * t)
    }
}

/// Time at which the matrices of step `[t, t + dt]` are sampled.
#[inline]
pub fn sample_time(scheme: Scheme, t: f64, dt: f64) -> f64 {
    match scheme {
        Scheme::EulerMaruyama => t,
        Scheme::Exponential => t + 0.5 * dt,
    }
}

/// Output increment `z dt + dw / sqrt(M eta)`, or `None` without measurement.
#[inline]
pub fn measurement_increment(z: f64, mats: &SystemMatrices, dt: f64, dw: f64) -> Option<f64> {
    if mats.sqrt_m_eta > 0.0 {
        Some(z * dt + dw / mats.sqrt_m_eta)
    } else {
        None
    }
}

/// One Euler-Maruyama step. Returns the new (clamped) state and the
/// measurement increment, which is `None` when `M = 0`.
pub fn em_step(state: BlochState, mats: &SystemMatrices, dt: f64, dw: f64) -> (BlochState, Option<f64>) {
    let x = state.to_vec3();
    let next = x + mats.drift(&x) * dt + mats.g(&x) * dw;
    let mut out = BlochState::from_vec3(&next);
    out.clamp_to_ball();
    (out, measurement_increment(state.z, mats, dt, dw))
}

/// One step with the linear drift integrated exactly; `phi1` is
/// `phi1(A2 dt)` from [`exp_phi1`].
pub fn exponential_step(
    state: BlochState,
    mats: &SystemMatrices,
    phi1: &Mat3,
    dt: f64,
    dw: f64,
) -> (BlochState, Option<f64>) {
    let x = state.to_vec3();
    let next = x + phi1 * mats.drift(&x) * dt + mats.g(&x) * dw;
    let mut out = BlochState::from_vec3(&next);
    out.clamp_to_ball();
    (out, measurement_increment(state.z, mats, dt, dw))
}

/// A simulated trajectory and its measurement record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<BlochState>,
    /// Measurement increments per step; `None` for unmeasured runs.
    pub dy: Option<Vec<f64>>,
    /// Wiener increments per step (all zero for deterministic runs).
    pub dw: Vec<f64>,
    pub seed: StreamSeed,
    pub dt: f64,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> BlochState {
        *self.states.last().expect("record holds at least the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("record holds at least the initial time")
    }
}

/// Matrices and drift propagators of one grid step, shared by every
/// trajectory (and every estimator) that runs on the same model and grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOp {
    pub mats: SystemMatrices,
    /// `exp(A2 dt)` (or `I + A2 dt` for Euler-Maruyama).
    pub expm: Mat3,
    /// `phi1(A2 dt)` (identity for Euler-Maruyama).
    pub phi1: Mat3,
}

impl StepOp {
    pub fn new(mats: SystemMatrices, dt: f64, scheme: Scheme) -> Self {
        match scheme {
            Scheme::EulerMaruyama => StepOp {
                mats,
                expm: Mat3::identity() + mats.a2 * dt,
                phi1: Mat3::identity(),
            },
            Scheme::Exponential => {
                let (expm, phi1) = exp_phi1(&(mats.a2 * dt));
                StepOp { mats, expm, phi1 }
            }
        }
    }
}

/// A model discretized on a fixed grid. Building it is the expensive part;
/// running trajectories on it is cheap.
#[derive(Clone, Debug)]
pub struct Integrator {
    model: Model,
    cfg: SimConfig,
    ops: Vec<StepOp>,
}

impl Integrator {
    pub fn new(model: Model, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        model.env.validate()?;
        model.pulse.validate()?;
        let n = cfg.steps();
        let dt = cfg.dt;
        let mut ops = Vec::with_capacity(n);
        let mut warned = false;
        for step in 0..n {
            let t = step as f64 * dt;
            let mats = model.matrices(sample_time(cfg.scheme, t, dt));
            if !warned && cfg.scheme == Scheme::EulerMaruyama && dt * spectral_bound(&mats.a2) > 0.1 {
                log::warn!("dt * |A2| exceeds 0.1 at t = {t}; Euler-Maruyama may be inaccurate");
                warned = true;
            }
            ops.push(StepOp::new(mats, dt, cfg.scheme));
        }
        Ok(Integrator { model, cfg, ops })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn ops(&self) -> &[StepOp] {
        &self.ops
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.cfg.dt
    }

    /// Runs one trajectory. With `seed = None` the stochastic term is dropped
    /// (the unconditioned evolution) and no record is produced.
    pub fn run(&self, x0: BlochState, seed: Option<StreamSeed>) -> Result<TrajectoryRecord> {
        let n = self.ops.len();
        let dt = self.cfg.dt;
        let measured = seed.is_some() && self.model.env.m_strength > 0.0;
        let mut rng = seed.map(|s| s.rng());
        let sqrt_dt = dt.sqrt();

        let mut times = Vec::with_capacity(n + 1);
        let mut states = Vec::with_capacity(n + 1);
        let mut dw_all = Vec::with_capacity(n);
        let mut dy_all = if measured { Some(Vec::with_capacity(n)) } else { None };
        let mut state = x0;
        times.push(0.0);
        states.push(state);

        for (step, op) in self.ops.iter().enumerate() {
            let mut mats = op.mats;
            let dw = match rng.as_mut() {
                Some(r) => {
                    let xi: f64 = StandardNormal.sample(r);
                    xi * sqrt_dt
                }
                None => {
                    mats.sqrt_m_eta = 0.0;
                    0.0
                }
            };
            let (next, dy) = match self.cfg.scheme {
                Scheme::EulerMaruyama => em_step(state, &mats, dt, dw),
                Scheme::Exponential => exponential_step(state, &mats, &op.phi1, dt, dw),
            };
            if !next.is_finite() {
                return Err(Error::IntegrationDiverged { step });
            }
            if let (Some(buf), Some(dy)) = (dy_all.as_mut(), dy) {
                buf.push(dy);
            }
            dw_all.push(dw);
            state = next;
            times.push((step + 1) as f64 * dt);
            states.push(state);
        }

        Ok(TrajectoryRecord {
            times,
            states,
            dy: dy_all,
            dw: dw_all,
            seed: seed.unwrap_or_default(),
            dt,
        })
    }
}

fn spectral_bound(a: &Mat3) -> f64 {
    // Infinity norm bounds the spectral radius.
    (0..3)
        .map(|i| (0..3).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Stochastic trajectory with measurement record; deterministic given `seed`.
pub fn simulate_trajectory(
    env: &EnvParams,
    pulse: &PulseParams,
    x0: BlochState,
    cfg: &SimConfig,
    seed: StreamSeed,
) -> Result<TrajectoryRecord> {
    Integrator::new(Model::new(*env, *pulse, cfg.frame), *cfg)?.run(x0, Some(seed))
}

/// Deterministic run at `M = 0`: the measurement-free reference evolution.
pub fn simulate_pure(
    env: &EnvParams,
    pulse: &PulseParams,
    x0: BlochState,
    cfg: &SimConfig,
) -> Result<TrajectoryRecord> {
    Integrator::new(Model::new(env.without_measurement(), *pulse, cfg.frame), *cfg)?.run(x0, None)
}

/// Unconditioned evolution at the given `M`: measurement dephasing retained,
/// stochastic term dropped. Equals the ensemble mean of measured trajectories.
pub fn simulate_unconditioned(
    env: &EnvParams,
    pulse: &PulseParams,
    x0: BlochState,
    cfg: &SimConfig,
) -> Result<TrajectoryRecord> {
    Integrator::new(Model::new(*env, *pulse, cfg.frame), *cfg)?.run(x0, None)
}

/// Non-overlapping window averages `Delta Y / Delta t` of the record.
/// A trailing partial window is dropped.
pub fn coarse_grained_record(rec: &TrajectoryRecord, window: f64) -> Result<Vec<f64>> {
    let dy = rec
        .dy
        .as_ref()
        .ok_or_else(|| Error::domain("record carries no measurement (M = 0)"))?;
    if !(window >= rec.dt * (1.0 - 1e-9)) {
        return Err(Error::domain("window is smaller than the integration step"));
    }
    let ratio = window / rec.dt;
    let k = ratio.round();
    if (ratio - k).abs() > 1e-6 * ratio.max(1.0) {
        return Err(Error::domain("window must be an integer multiple of dt"));
    }
    let k = k as usize;
    Ok(dy.chunks_exact(k).map(|c| c.iter().sum::<f64>() / window).collect())
}
