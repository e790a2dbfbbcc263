//! Real-time state estimation from the measurement record.
//!
//! The ROSE filter tracks the conditional Bloch vector `X_hat` with gain
//! `K1 = M P1 C^T + sqrt(M) G(X_hat)` and covariance
//!
//! ```text
//! dP1/dt = (A2 - sqrt(M) G C) P1 + P1 (A2 - sqrt(M) G C)^T - M P1 C^T C P1
//! ```
//!
//! The PSE filter runs alongside it and tracks `X_p = dX/dM`, from which the
//! measurement-free state is reconstructed to first order as
//! `X0 = X_hat - M X_p`. Its covariance `P2` is driven by `P1`, so the two
//! filters must advance in lockstep: [`pse_step`] consumes the start-of-step
//! values that [`rose_step`] leaves behind and refuses to run out of order.
//!
//! With detector efficiency `eta != 1` the gains and Riccati terms use the
//! effective strength `M eta` that the record carries, while `X_p` stays the
//! derivative with respect to the bare `M` that sets the dephasing.

// Float math for no_std; the lint misfires where core also offers these.
use alloc::boxed::Box;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    d_a2_dm, g_shape, output_row, BlochState, Integrator, Model, Scheme, SimConfig, StepOp, SystemMatrices,
    TrajectoryRecord,
};
use crate::env::EnvParams;
use crate::linalg::{repair_psd, symmetrize, Mat3, Vec3};
use crate::{Error, Result};

/// Leading factor of the `P2 C^T` term in the PSE gain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainForm {
    /// `K2 = sqrt(M) P2 C^T + sqrt(M) dG/dM`.
    #[default]
    SqrtM,
    /// `K2 = M P2 C^T + sqrt(M) dG/dM`, mirroring the ROSE gain.
    M,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// `P1(0) = p1_0 I`.
    pub p1_0: f64,
    /// `P2(0) = p2_0 I`.
    pub p2_0: f64,
    pub pse_gain_form: GainForm,
    /// Eigenvalues below `-psd_tol` trigger a logged covariance repair.
    pub psd_tol: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            p1_0: 0.01,
            p2_0: 0.01,
            pse_gain_form: GainForm::SqrtM,
            psd_tol: 1e-9,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p1_0 >= 0.0 && self.p1_0.is_finite()) {
            return Err(Error::param("p1_0", "must be finite and >= 0"));
        }
        if !(self.p2_0 >= 0.0 && self.p2_0.is_finite()) {
            return Err(Error::param("p2_0", "must be finite and >= 0"));
        }
        if !(self.psd_tol >= 0.0) {
            return Err(Error::param("psd_tol", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoseState {
    pub x_hat: BlochState,
    pub p1: Mat3,
    /// Gain used by the last step.
    pub k1: Vec3,
    /// Number of steps taken.
    pub step: u64,
    /// `X_hat` and `P1` at the start of the last step, read by [`pse_step`].
    pub prev_x_hat: BlochState,
    pub prev_p1: Mat3,
    /// Covariance repairs so far.
    pub repairs: u32,
}

impl RoseState {
    pub fn new(x_hat: BlochState, p1: Mat3) -> Self {
        RoseState {
            x_hat,
            p1,
            k1: Vec3::zeros(),
            step: 0,
            prev_x_hat: x_hat,
            prev_p1: p1,
            repairs: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseState {
    /// Estimate of `dX/dM`.
    pub x_p: Vec3,
    pub p2: Mat3,
    /// Reconstructed measurement-free state `X_hat - M X_p`.
    pub x0: BlochState,
    pub step: u64,
    pub repairs: u32,
}

impl PseState {
    pub fn new(x_hat: BlochState, p2: Mat3) -> Self {
        PseState {
            x_p: Vec3::zeros(),
            p2,
            x0: x_hat,
            step: 0,
            repairs: 0,
        }
    }
}

fn effective_strength(env: &EnvParams) -> Result<f64> {
    let m = env.m_strength * env.eta;
    if m > 0.0 {
        Ok(m)
    } else {
        Err(Error::EstimatorUndriven)
    }
}

/// `K1 = M P1 C^T + sqrt(M) G(X_hat)`, the minimizer of `tr dP1/dt`.
pub fn rose_gain(x_hat: &BlochState, p1: &Mat3, env: &EnvParams) -> Result<Vec3> {
    let m = effective_strength(env)?;
    Ok(gain(m, &x_hat.to_vec3(), p1))
}

#[inline]
fn gain(m: f64, x_hat: &Vec3, p1: &Mat3) -> Vec3 {
    // sqrt(M) G(X) = M g_shape(X).
    (p1.column(2) + g_shape(x_hat)) * m
}

/// `dP1/dt` for an arbitrary gain, before optimization over `K1`.
pub fn covariance_rate_for_gain(a2: &Mat3, x_hat: &BlochState, p1: &Mat3, k1: &Vec3, m: f64) -> Mat3 {
    let c = output_row();
    let a = a2 - k1 * c;
    let g = g_shape(&x_hat.to_vec3()) * m.sqrt();
    let r = g - k1 / m.sqrt();
    a * p1 + p1 * a.transpose() + r * r.transpose()
}

/// `dP1/dt` with the optimal gain substituted.
pub fn rose_covariance_rate(a2: &Mat3, x_hat: &BlochState, p1: &Mat3, m: f64) -> Mat3 {
    let a = tilde(a2, &g_shape(&x_hat.to_vec3()), m);
    a * p1 + p1 * a.transpose() - p1.column(2) * p1.row(2) * m
}

/// `A2 - M g C`: the closed-loop matrix with `sqrt(M) G = M g`.
#[inline]
fn tilde(a2: &Mat3, g_unit: &Vec3, m: f64) -> Mat3 {
    let mut a = *a2;
    for i in 0..3 {
        a[(i, 2)] -= m * g_unit[i];
    }
    a
}

/// Reports repair events instead of silently clipping.
fn finish_covariance(p: &mut Mat3, tol: f64, which: &str, step: u64, repairs: &mut u32) {
    *p = symmetrize(p);
    if repair_psd(p, tol) {
        *repairs += 1;
        // Counted in the state; callers summarize, so per-event logs stay at debug.
        log::debug!("{which} lost positive semidefiniteness at step {step}; eigenvalues clipped");
    }
}

fn check_finite(v: &Vec3, p: &Mat3, step: u64) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) && p.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::IntegrationDiverged { step: step as usize })
    }
}

/// One explicit Euler ROSE step.
pub fn rose_step(rs: &RoseState, mats: &SystemMatrices, dy: f64, dt: f64) -> Result<RoseState> {
    let op = StepOp::new(*mats, dt, Scheme::EulerMaruyama);
    rose_step_with(rs, &op, Scheme::EulerMaruyama, dy, dt, 1e-9)
}

/// One ROSE step on a precomputed grid step. For the exponential scheme the
/// linear flow of both `X_hat` and `P1` is propagated with `exp(A2 dt)`; the
/// measurement terms are added to first order.
pub fn rose_step_with(
    rs: &RoseState,
    op: &StepOp,
    scheme: Scheme,
    dy: f64,
    dt: f64,
    psd_tol: f64,
) -> Result<RoseState> {
    let mats = &op.mats;
    let m = mats.sqrt_m_eta * mats.sqrt_m_eta;
    if m <= 0.0 {
        return Err(Error::EstimatorUndriven);
    }
    let x = rs.x_hat.to_vec3();
    let p = rs.p1;
    let g_unit = g_shape(&x);
    let k1 = (p.column(2) + g_unit) * m;
    let innovation = dy - x.z * dt;

    let (x_next, mut p_next) = match scheme {
        Scheme::EulerMaruyama => {
            let x_next = x + mats.drift(&x) * dt + k1 * innovation;
            let rate = {
                let a = tilde(&mats.a2, &g_unit, m);
                a * p + p * a.transpose() - p.column(2) * p.row(2) * m
            };
            (x_next, p + rate * dt)
        }
        Scheme::Exponential => {
            let x_next = x + op.phi1 * mats.drift(&x) * dt + k1 * innovation;
            let gp = g_unit * p.row(2) * m;
            let meas = -(gp + gp.transpose()) - p.column(2) * p.row(2) * m;
            (x_next, op.expm * p * op.expm.transpose() + meas * dt)
        }
    };
    let step = rs.step + 1;
    let mut repairs = rs.repairs;
    finish_covariance(&mut p_next, psd_tol, "P1", step, &mut repairs);
    check_finite(&x_next, &p_next, step)?;
    Ok(RoseState {
        x_hat: BlochState::from_vec3(&x_next),
        p1: p_next,
        k1,
        step,
        prev_x_hat: rs.x_hat,
        prev_p1: rs.p1,
        repairs,
    })
}

/// One explicit Euler PSE step. `rs` must be the ROSE state right after the
/// same step.
pub fn pse_step(
    ps: &PseState,
    rs: &RoseState,
    mats: &SystemMatrices,
    dy: f64,
    dt: f64,
    env: &EnvParams,
) -> Result<PseState> {
    effective_strength(env)?;
    let op = StepOp::new(*mats, dt, Scheme::EulerMaruyama);
    pse_step_with(ps, rs, &op, Scheme::EulerMaruyama, GainForm::SqrtM, dy, dt, 1e-9)
}

#[allow(clippy::too_many_arguments)]
pub fn pse_step_with(
    ps: &PseState,
    rs: &RoseState,
    op: &StepOp,
    scheme: Scheme,
    form: GainForm,
    dy: f64,
    dt: f64,
    psd_tol: f64,
) -> Result<PseState> {
    if rs.step != ps.step + 1 {
        return Err(Error::Sequencing {
            pse_step: ps.step,
            rose_step: rs.step,
        });
    }
    let mats = &op.mats;
    let m = mats.sqrt_m_eta * mats.sqrt_m_eta;
    if m <= 0.0 {
        return Err(Error::EstimatorUndriven);
    }
    let sqrt_m = m.sqrt();
    let eta = if mats.m > 0.0 { m / mats.m } else { 1.0 };
    let x_hat = rs.prev_x_hat.to_vec3();
    let p1 = rs.prev_p1;
    let p2 = ps.p2;
    let xp = ps.x_p;
    let da = d_a2_dm();
    // sqrt(M eta) dG/dM = eta g_shape / 2, with G = sqrt(M eta) g_shape.
    let sqrt_m_dg = g_shape(&x_hat) * (0.5 * eta);
    let lead = match form {
        GainForm::SqrtM => sqrt_m,
        GainForm::M => m,
    };
    let k2 = p2.column(2) * lead + sqrt_m_dg;
    let innovation = dy - x_hat.z * dt;
    let source = da * x_hat + mats.a2 * xp;
    let cross = da * p1 + p1.transpose() * da.transpose();

    let (xp_next, mut p2_next) = match scheme {
        Scheme::EulerMaruyama => {
            let a = tilde(&mats.a2, &sqrt_m_dg, 1.0);
            let rate = a * p2 + p2 * a.transpose() - p2.column(2) * p2.row(2) * m + cross;
            (xp + source * dt + k2 * innovation, p2 + rate * dt)
        }
        Scheme::Exponential => {
            let gp = sqrt_m_dg * p2.row(2);
            let rest = -(gp + gp.transpose()) - p2.column(2) * p2.row(2) * m + cross;
            (
                xp + op.phi1 * source * dt + k2 * innovation,
                op.expm * p2 * op.expm.transpose() + rest * dt,
            )
        }
    };
    let mut repairs = ps.repairs;
    finish_covariance(&mut p2_next, psd_tol, "P2", rs.step, &mut repairs);
    check_finite(&xp_next, &p2_next, rs.step)?;
    let x0 = rs.x_hat.to_vec3() - xp_next * mats.m;
    Ok(PseState {
        x_p: xp_next,
        p2: p2_next,
        x0: BlochState::from_vec3(&x0),
        step: rs.step,
        repairs,
    })
}

/// Time series produced by a coupled estimator pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorHistory {
    pub times: Vec<f64>,
    pub x_hat: Vec<BlochState>,
    /// Components of the `dX/dM` estimate.
    pub x_p: Vec<BlochState>,
    pub x0: Vec<BlochState>,
    pub tr_p1: Vec<f64>,
    pub tr_p2: Vec<f64>,
    /// Steps whose covariance update left the PSD cone and was clipped.
    pub p1_repairs: u32,
    pub p2_repairs: u32,
}

impl EstimatorHistory {
    pub fn final_x_hat(&self) -> BlochState {
        *self.x_hat.last().expect("history holds the initial state")
    }

    pub fn final_x0(&self) -> BlochState {
        *self.x0.last().expect("history holds the initial state")
    }
}

/// Runs ROSE and PSE together over a record on the integrator's grid. The
/// record's step must equal the grid step or divide it; in the latter case
/// increments are summed over each estimator step.
pub fn run_estimators_on(
    grid: &Integrator,
    rec: &TrajectoryRecord,
    x_hat0: BlochState,
    cfg: &EstimatorConfig,
) -> Result<EstimatorHistory> {
    cfg.validate()?;
    effective_strength(&grid.model().env)?;
    let dy = rec.dy.as_ref().ok_or(Error::EstimatorUndriven)?;
    let dt = grid.config().dt;
    let ratio = dt / rec.dt;
    let stride = ratio.round();
    if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio {
        return Err(Error::domain(
            "estimator step must be an integer multiple of the record step",
        ));
    }
    let stride = stride as usize;
    let n = (dy.len() / stride).min(grid.ops().len());
    let scheme = grid.config().scheme;

    let mut rs = RoseState::new(x_hat0, Mat3::identity() * cfg.p1_0);
    let mut ps = PseState::new(x_hat0, Mat3::identity() * cfg.p2_0);
    let mut hist = EstimatorHistory {
        times: Vec::with_capacity(n + 1),
        x_hat: Vec::with_capacity(n + 1),
        x_p: Vec::with_capacity(n + 1),
        x0: Vec::with_capacity(n + 1),
        tr_p1: Vec::with_capacity(n + 1),
        tr_p2: Vec::with_capacity(n + 1),
        p1_repairs: 0,
        p2_repairs: 0,
    };
    let push = |h: &mut EstimatorHistory, t: f64, rs: &RoseState, ps: &PseState| {
        h.times.push(t);
        h.x_hat.push(rs.x_hat);
        h.x_p.push(BlochState::from_vec3(&ps.x_p));
        h.x0.push(ps.x0);
        h.tr_p1.push(rs.p1.trace());
        h.tr_p2.push(ps.p2.trace());
    };
    push(&mut hist, 0.0, &rs, &ps);

    for (k, op) in grid.ops()[..n].iter().enumerate() {
        let dy_k: f64 = dy[k * stride..(k + 1) * stride].iter().sum();
        let wrap = |e: Error| Error::EstimatorStep {
            step: k,
            source: Box::new(e),
        };
        rs = rose_step_with(&rs, op, scheme, dy_k, dt, cfg.psd_tol).map_err(wrap)?;
        ps = pse_step_with(&ps, &rs, op, scheme, cfg.pse_gain_form, dy_k, dt, cfg.psd_tol).map_err(wrap)?;
        push(&mut hist, grid.time(k + 1), &rs, &ps);
    }
    hist.p1_repairs = rs.repairs;
    hist.p2_repairs = ps.repairs;
    Ok(hist)
}

/// Convenience wrapper that discretizes `model` on `cfg` first.
pub fn run_estimators(
    rec: &TrajectoryRecord,
    model: &Model,
    cfg: &SimConfig,
    x_hat0: BlochState,
    est: &EstimatorConfig,
) -> Result<EstimatorHistory> {
    effective_strength(&model.env)?;
    let grid = Integrator::new(*model, *cfg)?;
    run_estimators_on(&grid, rec, x_hat0, est)
}
