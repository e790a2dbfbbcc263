//! Fast numerical self-checks against closed forms, finite differences and
//! brute force. Each check reports its worst observed value next to the
//! pinned tolerance.

use std::convert::Infallible;

use qcal_core::bayes::{
    acquisition, matern52, suggest_observe_loop, BayesConfig, BayesOptimizer, Domain, GpModel, Hyper, TransformMode,
};
use qcal_core::dynamics::{
    d_a2_dm, simulate_pure, system_matrices, BlochState, Frame, Integrator, Model, Scheme, SimConfig,
};
use qcal_core::env::EnvParams;
use qcal_core::estimator::{
    covariance_rate_for_gain, pse_step_with, rose_gain, rose_step_with, EstimatorConfig, PseState, RoseState,
};
use qcal_core::fidelity::PauliState;
use qcal_core::linalg::{max_asymmetry, min_eigenvalue, Mat3, Vec3};
use qcal_core::pulse::PulseParams;
use qcal_core::rng::StreamSeed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::Result;

/// One check: `value` must satisfy `value <= tolerance`, or
/// `value >= tolerance` for the lower-bound checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub lower_bound: bool,
    pub passed: bool,
}

impl OracleCheck {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        OracleCheck {
            name: name.to_string(),
            value,
            tolerance,
            lower_bound: false,
            passed: value <= tolerance,
        }
    }

    fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        OracleCheck {
            name: name.to_string(),
            value,
            tolerance,
            lower_bound: true,
            passed: value >= tolerance,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {:.3e} {} {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            if self.lower_bound { ">=" } else { "<=" },
            self.tolerance
        )
    }
}

fn rwa(dt: f64, t_end: f64, scheme: Scheme) -> SimConfig {
    SimConfig {
        dt,
        t_end,
        frame: Frame::Rotating,
        scheme,
    }
}

fn calibrated_pulse(env: &EnvParams) -> PulseParams {
    let p = PulseParams::default();
    p.with_theta(0.0, (env.omega0 - p.w_d) / 2.0)
}

/// Worst asymmetry and smallest eigenvalue of `P1` and `P2` over full
/// estimator passes on `n_traj` measured trajectories of each scheme, with
/// covariance repair disabled so that every violation shows.
pub fn riccati_symmetry_and_psd(seed: u64, n_traj: usize) -> Result<Vec<OracleCheck>> {
    let env = EnvParams::default();
    let est = EstimatorConfig::default();
    let x0 = PauliState::MinusZ.bloch();
    // [asym P1, asym P2], [min eig P1, min eig P2]
    let mut asym = [0.0f64; 2];
    let mut eig = [f64::INFINITY; 2];
    for scheme in [Scheme::Exponential, Scheme::EulerMaruyama] {
        let cfg = rwa(0.01, 20.0, scheme);
        let grid = Integrator::new(Model::new(env, calibrated_pulse(&env), Frame::Rotating), cfg)?;
        let worst = (0..n_traj)
            .into_par_iter()
            .map(|k| -> Result<([f64; 2], [f64; 2])> {
                let rec = grid.run(x0, Some(StreamSeed::for_trajectory(seed, 0, scheme as u64, k as u64)))?;
                let dy = rec.dy.as_ref().expect("measured record");
                let mut rs = RoseState::new(x0, Mat3::identity() * est.p1_0);
                let mut ps = PseState::new(x0, Mat3::identity() * est.p2_0);
                let (mut a, mut e) = ([0.0f64; 2], [f64::INFINITY; 2]);
                for (op, &d) in grid.ops().iter().zip(dy) {
                    rs = rose_step_with(&rs, op, scheme, d, cfg.dt, f64::INFINITY)?;
                    ps = pse_step_with(&ps, &rs, op, scheme, est.pse_gain_form, d, cfg.dt, f64::INFINITY)?;
                    for (i, p) in [&rs.p1, &ps.p2].into_iter().enumerate() {
                        a[i] = a[i].max(max_asymmetry(p));
                        e[i] = e[i].min(min_eigenvalue(p));
                    }
                }
                Ok((a, e))
            })
            .collect::<Result<Vec<_>>>()?;
        for (a, e) in worst {
            for i in 0..2 {
                asym[i] = asym[i].max(a[i]);
                eig[i] = eig[i].min(e[i]);
            }
        }
    }
    Ok(vec![
        OracleCheck::at_most("riccati_p1_max_asymmetry", asym[0], 1e-10),
        OracleCheck::at_least("riccati_p1_min_eigenvalue", eig[0], -1e-9),
        OracleCheck::at_most("riccati_p2_max_asymmetry", asym[1], 1e-10),
        OracleCheck::at_least("riccati_p2_min_eigenvalue", eig[1], -1e-9),
    ])
}

/// The ROSE gain is a stationary point (a minimum) of `tr dP1/dt` over all
/// gains: perturbing any component at 100 random points never lowers it by
/// more than 1e-6.
pub fn gain_stationarity(seed: u64) -> OracleCheck {
    let env = EnvParams::default();
    let m = env.m_strength * env.eta;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let x = loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() <= 1.0 {
                break v;
            }
        };
        let x = BlochState::from_vec3(&x);
        let b = Mat3::from_fn(|_, _| rng.random_range(-0.2..0.2));
        let p1 = b * b.transpose();
        let controls = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let a2 = system_matrices(&env, controls, rng.random_range(0.0..30.0)).a2;
        let k = match rose_gain(&x, &p1, &env) {
            Ok(k) => k,
            Err(_) => return OracleCheck::at_least("gain_stationarity_min_trace_change", f64::NEG_INFINITY, -1e-6),
        };
        let base = covariance_rate_for_gain(&a2, &x, &p1, &k, m).trace();
        for eps in [1e-4, 1e-3] {
            for i in 0..3 {
                for sign in [-1.0, 1.0] {
                    let mut kp = k;
                    kp[i] += sign * eps;
                    worst = worst.min(covariance_rate_for_gain(&a2, &x, &p1, &kp, m).trace() - base);
                }
            }
        }
    }
    OracleCheck::at_least("gain_stationarity_min_trace_change", worst, -1e-6)
}

/// Central differences of `A2` and `G` in the measurement strength against
/// the analytic derivatives, as relative errors.
pub fn measurement_derivatives() -> Vec<OracleCheck> {
    let env = EnvParams::default();
    let at = |m: f64| system_matrices(&EnvParams { m_strength: m, ..env }, (0.3, -0.2), 4.0);
    let h = 1e-4;
    let fd = (at(env.m_strength + h).a2 - at(env.m_strength - h).a2) / (2.0 * h);
    let exact = d_a2_dm();
    let rel_a2 = (fd - exact).abs().max() / exact.abs().max();

    // G goes as sqrt(M), so the step must be small against M.
    let hg = 1e-7;
    let x = Vec3::new(0.3, -0.4, 0.5);
    let fd_g = (at(env.m_strength + hg).g(&x) - at(env.m_strength - hg).g(&x)) / (2.0 * hg);
    let analytic = at(env.m_strength).g(&x) / (2.0 * env.m_strength);
    let rel_g = (fd_g - analytic).norm() / analytic.norm();
    vec![
        OracleCheck::at_most("d_a2_dm_relative_error", rel_a2, 1e-6),
        OracleCheck::at_most("d_g_dm_relative_error", rel_g, 1e-6),
    ]
}

/// Sample mean and variance of 1e5 Wiener increments: the mean in units of
/// its standard error, and `|var/dt - 1|`.
pub fn wiener_statistics(seed: u64) -> Result<Vec<OracleCheck>> {
    let env = EnvParams::default();
    let pulse = PulseParams {
        amp: 0.0,
        ..PulseParams::default()
    };
    let dt = 1e-3;
    let grid = Integrator::new(
        Model::new(env, pulse, Frame::Rotating),
        rwa(dt, 100.0, Scheme::Exponential),
    )?;
    let rec = grid.run(BlochState::north(), Some(StreamSeed::new(seed, 0)))?;
    let n = rec.dw.len() as f64;
    let mean = rec.dw.iter().sum::<f64>() / n;
    let var = rec.dw.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(vec![
        OracleCheck::at_most("wiener_mean_in_standard_errors", mean.abs() / (dt / n).sqrt(), 4.0),
        OracleCheck::at_most("wiener_variance_relative_error", (var / dt - 1.0).abs(), 0.05),
    ])
}

/// With negligible jitter the acquisition at an observed point equals the
/// observation for any exploration weight.
pub fn gp_interpolation(seed: u64) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gp = GpModel::new(Domain::unit(), TransformMode::Direct, 1e-12)?;
    gp.set_hyper(Hyper { v: 1.0, i: 0.3 })?;
    for k in 0..8 {
        gp.add_observation([k as f64 / 7.0, 0.4], rng.random_range(-1.0..1.0))?;
    }
    let pts = gp.thetas().to_vec();
    let obs = gp.observations().to_vec();
    let mut worst = 0.0f64;
    for (t, d) in pts.iter().zip(obs) {
        worst = worst.max((acquisition(&mut gp, t, 0.7, false)? - d).abs());
    }
    Ok(OracleCheck::at_most("gp_interpolation_error", worst, 1e-6))
}

/// Matérn-5/2 at one length scale against the direct formula.
pub fn matern_at_length_scale() -> OracleCheck {
    let h = Hyper { v: 1.3, i: 0.3 };
    let s5 = 5f64.sqrt();
    let direct = h.v * (1.0 + s5 + 5.0 / 3.0) * (-s5).exp();
    OracleCheck::at_most(
        "matern_at_length_scale_error",
        (matern52(h.i, &h) - direct).abs(),
        1e-12,
    )
}

/// Undriven relaxation through the SDE integrator (measurement off, hot
/// bath so the fixed point lies inside the ball) against RK4 on
/// `z' = -2 gamma(t) - 2 delta(t) z`, as relative error.
pub fn relaxation() -> Result<OracleCheck> {
    let p = EnvParams::default();
    let env = EnvParams {
        kbt: p.omega0,
        m_strength: 0.0,
        ..p
    };
    let pulse = PulseParams {
        amp: 0.0,
        ..PulseParams::default()
    };
    let t_end: f64 = 400.0;
    let f = |t: f64, z: f64| {
        let (g, d) = env.kernels(t);
        -2.0 * g - 2.0 * d * z
    };
    let h = 1e-3;
    let mut z = -1.0;
    for k in 0..(t_end / h).round() as usize {
        let t = k as f64 * h;
        let k1 = f(t, z);
        let k2 = f(t + h / 2.0, z + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, z + h / 2.0 * k2);
        let k4 = f(t + h, z + h * k3);
        z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let mut worst = 0.0f64;
    for scheme in [Scheme::EulerMaruyama, Scheme::Exponential] {
        let got = simulate_pure(&env, &pulse, BlochState::south(), &rwa(0.01, t_end, scheme))?
            .final_state()
            .z;
        worst = worst.max(((got - z) / z).abs());
    }
    Ok(OracleCheck::at_most("relaxation_relative_error", worst, 1e-3))
}

fn quadratic(t: &[f64; 2]) -> f64 {
    0.95 - 1.5 * (t[0] - 0.31).powi(2) - 0.8 * (t[1] - 0.68).powi(2) - 0.4 * (t[0] - 0.31) * (t[1] - 0.68)
}

/// Default optimizer budget on a smooth quadratic against a 200 x 200 grid.
pub fn bo_quadratic() -> Result<OracleCheck> {
    let n = 200;
    let grid_best = (0..n)
        .flat_map(|a| (0..n).map(move |b| [a as f64 / (n - 1) as f64, b as f64 / (n - 1) as f64]))
        .map(|t| quadratic(&t))
        .fold(f64::NEG_INFINITY, f64::max);
    let cfg = BayesConfig {
        domain: Domain::unit(),
        transform_mode: TransformMode::Direct,
        ..BayesConfig::default()
    };
    let mut opt = BayesOptimizer::new(cfg)?;
    suggest_observe_loop(&mut opt, |s| Ok::<_, Infallible>(quadratic(&s.theta)), || 0.0)?;
    let best = opt.best().map(|b| b.1).unwrap_or(f64::NEG_INFINITY);
    Ok(OracleCheck::at_most("bo_quadratic_gap", grid_best - best, 1e-3))
}

/// Every check in order.
pub fn run_all(seed: u64) -> Result<Vec<OracleCheck>> {
    let mut out = riccati_symmetry_and_psd(seed, 20)?;
    out.push(gain_stationarity(seed));
    out.extend(measurement_derivatives());
    out.extend(wiener_statistics(seed)?);
    out.push(gp_interpolation(seed)?);
    out.push(matern_at_length_scale());
    out.push(relaxation()?);
    out.push(bo_quadratic()?);
    Ok(out)
}
