//! Integrator checks against closed forms, a two-level propagator and
//! sampling statistics.

use nalgebra::{Complex, Matrix2};
use qcal_core::dynamics::{
    coarse_grained_record, em_step, exponential_step, output_row, simulate_pure, BlochState, Frame, Integrator, Model,
    Scheme, SimConfig, SystemMatrices,
};
use qcal_core::env::EnvParams;
use qcal_core::fidelity::{gate_fidelity, FidelitySetup, StateSource};
use qcal_core::linalg::{exp_phi1, Mat3, Vec3};
use qcal_core::pulse::PulseParams;
use qcal_core::rng::StreamSeed;
use qcal_core::Error;

type C = Complex<f64>;

fn rwa(dt: f64, t_end: f64) -> SimConfig {
    SimConfig {
        dt,
        t_end,
        frame: Frame::Rotating,
        scheme: Scheme::Exponential,
    }
}

/// Default bath at a temperature where `delta > gamma`, so the relaxation
/// fixed point `-gamma/delta` lies inside the ball.
fn hot_env() -> EnvParams {
    let p = EnvParams::default();
    EnvParams {
        kbt: p.omega0,
        m_strength: 0.0,
        ..p
    }
}

fn calibrated_pulse(env: &EnvParams) -> PulseParams {
    let p = PulseParams::default();
    p.with_theta(0.0, (env.omega0 - p.w_d) / 2.0)
}

fn relaxation_matrices(gamma: f64, delta: f64) -> SystemMatrices {
    SystemMatrices {
        a0: Vec3::new(0.0, 0.0, -2.0 * gamma),
        a2: Mat3::from_diagonal(&Vec3::new(-delta, -delta, -2.0 * delta)),
        c: output_row(),
        m: 0.0,
        sqrt_m_eta: 0.0,
    }
}

#[test]
fn constant_rate_relaxation_matches_closed_form() {
    let env = hot_env();
    let (gamma, delta) = (env.gamma_plateau(), env.delta_plateau());
    let mats = relaxation_matrices(gamma, delta);
    let (dt, n) = (0.5, 1000);
    let (_, phi1) = exp_phi1(&(mats.a2 * dt));
    let mut em = BlochState::south();
    let mut ex = BlochState::south();
    for _ in 0..n {
        em = em_step(em, &mats, dt, 0.0).0;
        ex = exponential_step(ex, &mats, &phi1, dt, 0.0).0;
    }
    let t = n as f64 * dt;
    let z_inf = -gamma / delta;
    let exact = z_inf + (-1.0 - z_inf) * (-2.0 * delta * t).exp();
    assert!(((em.z - exact) / exact).abs() < 1e-3, "EM {} vs {exact}", em.z);
    assert!(((ex.z - exact) / exact).abs() < 1e-9, "exponential {} vs {exact}", ex.z);
}

/// RK4 on `z' = -2 gamma(t) - 2 delta(t) z`.
fn relaxation_rk4(env: &EnvParams, z0: f64, t_end: f64, h: f64) -> f64 {
    let f = |t: f64, z: f64| {
        let (g, d) = env.kernels(t);
        -2.0 * g - 2.0 * d * z
    };
    let n = (t_end / h).round() as usize;
    let mut z = z0;
    for k in 0..n {
        let t = k as f64 * h;
        let k1 = f(t, z);
        let k2 = f(t + h / 2.0, z + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, z + h / 2.0 * k2);
        let k4 = f(t + h, z + h * k3);
        z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    z
}

#[test]
fn undriven_relaxation_follows_the_kernel_ode() {
    let env = hot_env();
    let pulse = PulseParams {
        amp: 0.0,
        ..PulseParams::default()
    };
    let t_end = 400.0;
    let oracle = relaxation_rk4(&env, -1.0, t_end, 1e-3);
    for scheme in [Scheme::EulerMaruyama, Scheme::Exponential] {
        let cfg = SimConfig {
            scheme,
            ..rwa(0.01, t_end)
        };
        let z = simulate_pure(&env, &pulse, BlochState::south(), &cfg)
            .unwrap()
            .final_state()
            .z;
        assert!(((z - oracle) / oracle).abs() < 1e-3, "{scheme:?}: {z} vs {oracle}");
    }
}

/// Bloch vector after the piecewise-constant two-level propagator
/// `prod exp(-i dt/2 Omega(t_mid) . sigma)`, with `Omega = (u_x, u_y, w)`.
fn two_level_oracle(model: &Model, x0: &Vec3, dt: f64, t_end: f64) -> Vec3 {
    let i = C::new(0.0, 1.0);
    let one = C::new(1.0, 0.0);
    let sx = Matrix2::new(C::default(), one, one, C::default());
    let sy = Matrix2::new(C::default(), -i, i, C::default());
    let sz = Matrix2::new(one, C::default(), C::default(), -one);
    let id = Matrix2::<C>::identity();
    let n = (t_end / dt).round() as usize;
    let w = model.precession();
    let mut u = id;
    for k in 0..n {
        let t = (k as f64 + 0.5) * dt;
        let (ux, uy) = model.controls(t);
        let norm = (ux * ux + uy * uy + w * w).sqrt();
        let step = if norm == 0.0 {
            id
        } else {
            let th = 0.5 * norm * dt;
            let gen = (sx * C::from(ux) + sy * C::from(uy) + sz * C::from(w)) / C::from(norm);
            id * C::from(th.cos()) - gen * (i * th.sin())
        };
        u = step * u;
    }
    let rho0 = (id + sx * C::from(x0.x) + sy * C::from(x0.y) + sz * C::from(x0.z)) * C::from(0.5);
    let rho = u * rho0 * u.adjoint();
    Vec3::new((rho * sx).trace().re, (rho * sy).trace().re, (rho * sz).trace().re)
}

fn closed_system() -> EnvParams {
    EnvParams {
        alpha_c: 1e-9,
        kbt: 0.0,
        m_strength: 0.0,
        ..EnvParams::default()
    }
}

#[test]
fn resonant_pi_pulse_matches_two_level_propagator() {
    let env = closed_system();
    let base = PulseParams::default();
    let pulse = PulseParams {
        w_d: env.omega0,
        ..base.with_theta(-0.4, 0.0)
    };
    // The lab-frame tolerance covers the midpoint step error at 1e-3 ns.
    for (frame, dt, tol) in [(Frame::Rotating, 0.01, 1e-6), (Frame::Lab, 1e-3, 5e-4)] {
        let cfg = SimConfig {
            frame,
            ..rwa(dt, pulse.t_g)
        };
        let model = Model::new(env, pulse, frame);
        let x0 = BlochState::north();
        let sim = simulate_pure(&env, &pulse, x0, &cfg).unwrap().final_state().to_vec3();
        let oracle = two_level_oracle(&model, &x0.to_vec3(), dt / 10.0, pulse.t_g);
        assert!((sim - oracle).norm() < tol, "{frame:?}: {sim:?} vs {oracle:?}");
    }
    // The truncated Gaussian area is compensated, so the rotating-frame
    // rotation is exactly pi up to the step error.
    let cfg = rwa(0.01, pulse.t_g);
    let z = simulate_pure(&env, &pulse, BlochState::north(), &cfg)
        .unwrap()
        .final_state()
        .z;
    assert!((z + 1.0).abs() < 1e-6, "final z = {z}");
}

#[test]
fn lab_and_rotating_frames_agree_on_fidelity() {
    let env = EnvParams::default();
    let pulse = calibrated_pulse(&env);
    let mut lab = FidelitySetup::new(
        env,
        pulse,
        SimConfig {
            dt: 1e-3,
            ..rwa(0.0, 20.0)
        },
    );
    lab.sim.frame = Frame::Lab;
    let rot = FidelitySetup::new(env, pulse, rwa(0.01, 20.0));
    let f_lab = gate_fidelity(&lab, StateSource::Pure).unwrap().average;
    let f_rot = gate_fidelity(&rot, StateSource::Pure).unwrap().average;
    assert!((f_lab - f_rot).abs() < 5e-3, "lab {f_lab} vs rotating {f_rot}");
}

#[test]
fn wiener_increments_have_the_right_moments() {
    let env = EnvParams::default();
    let pulse = PulseParams {
        amp: 0.0,
        ..PulseParams::default()
    };
    let dt = 1e-3;
    let cfg = rwa(dt, 100.0);
    let grid = Integrator::new(Model::new(env, pulse, Frame::Rotating), cfg).unwrap();
    let rec = grid.run(BlochState::north(), Some(StreamSeed::new(5, 0))).unwrap();
    let n = rec.dw.len() as f64;
    assert!(n >= 1e5);
    let mean = rec.dw.iter().sum::<f64>() / n;
    let var = rec.dw.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 4.0 * dt.sqrt() / n.sqrt(), "mean {mean}");
    assert!((var / dt - 1.0).abs() < 0.05, "var/dt {}", var / dt);
    assert_eq!(rec.dy.as_ref().unwrap().len(), rec.times.len() - 1);
    assert_eq!(rec.states.len(), rec.times.len());
}

#[test]
fn window_averages_carry_white_noise_of_the_expected_size() {
    let env = EnvParams::default();
    let pulse = PulseParams {
        amp: 0.0,
        ..PulseParams::default()
    };
    let window = 1.0;
    let cfg = rwa(0.01, 1000.0);
    let grid = Integrator::new(Model::new(env, pulse, Frame::Rotating), cfg).unwrap();
    let rec = grid.run(BlochState::north(), Some(StreamSeed::new(9, 0))).unwrap();
    let series = coarse_grained_record(&rec, window).unwrap();
    assert_eq!(series.len(), 1000);
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expected = 1.0 / (env.m_strength * env.eta * window);
    assert!((var / expected - 1.0).abs() < 0.2, "var {var} vs {expected}");

    let full = coarse_grained_record(&rec, rec.final_time()).unwrap();
    let total: f64 = rec.dy.as_ref().unwrap().iter().sum();
    assert_eq!(full.len(), 1);
    assert!((full[0] - total / rec.final_time()).abs() < 1e-9);
    assert!(coarse_grained_record(&rec, 0.001).is_err());
}

#[test]
fn ensemble_mean_matches_unconditioned_evolution() {
    let env = EnvParams::default();
    let pulse = calibrated_pulse(&env);
    let cfg = rwa(0.01, 20.0);
    let grid = Integrator::new(Model::new(env, pulse, Frame::Rotating), cfg).unwrap();
    let x0 = BlochState::south();
    let unc = grid.run(x0, None).unwrap().final_state().z;
    let n = 500;
    let zs: Vec<f64> = (0..n)
        .map(|k| grid.run(x0, Some(StreamSeed::new(21, k))).unwrap().final_state().z)
        .collect();
    let mean = zs.iter().sum::<f64>() / n as f64;
    let sd = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let se = sd / (n as f64).sqrt();
    assert!(
        (mean - unc).abs() < 3.0 * se,
        "mean {mean} vs unconditioned {unc} (se {se})"
    );
}

#[test]
fn trajectories_stay_in_the_ball() {
    let env = EnvParams::default();
    let pulse = calibrated_pulse(&env);
    for scheme in [Scheme::EulerMaruyama, Scheme::Exponential] {
        let cfg = SimConfig {
            scheme,
            ..rwa(0.01, 20.0)
        };
        let grid = Integrator::new(Model::new(env, pulse, Frame::Rotating), cfg).unwrap();
        for k in 0..200 {
            let rec = grid.run(BlochState::south(), Some(StreamSeed::new(2, k))).unwrap();
            let worst = rec.states.iter().map(|s| s.norm()).fold(0.0, f64::max);
            assert!(worst <= 1.0 + 1e-9, "{scheme:?} trajectory {k}: norm {worst}");
        }
    }
}

#[test]
fn overflow_reports_the_diverging_step() {
    let env = EnvParams::default();
    let pulse = PulseParams {
        amp: 1e300,
        ..PulseParams::default()
    };
    // Projection keeps Euler-Maruyama finite; the propagator overflows.
    let cfg = rwa(0.01, 20.0);
    let err = simulate_pure(&env, &pulse, BlochState::south(), &cfg).unwrap_err();
    assert!(matches!(err, Error::IntegrationDiverged { .. }), "{err}");
}
