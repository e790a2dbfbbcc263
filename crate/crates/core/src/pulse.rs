//! Gaussian drive with a DRAG quadrature and a phase-ramp knob.
//!
//! The lab-frame controls are
//! `u_x = cos((w_d + 2 phi) t) eps_x(t)` and `u_y = sin((w_d + 2 phi) t) eps_y(t)`,
//! where `eps_y` is the time derivative of `eps_x` scaled by `alpha_s / delta`.
//! Outside `[0, t_g]` the pulse is off.

// Float math for no_std; the lint misfires where core also offers these.
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::units;
use crate::{Error, Result};

/// Search domain of the DRAG scale `alpha_s`.
pub const ALPHA_S_DOMAIN: (f64, f64) = (-1.0, 0.0);

/// Search domain of the phase-ramp parameter `phi` in rad/ns (-100 MHz to 0).
pub fn phi_domain() -> (f64, f64) {
    (-units::mhz(100.0), 0.0)
}

/// Where the `exp(2i phi t)` ramp is applied. Only the carrier is supported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    #[default]
    Carrier,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseParams {
    /// Gaussian amplitude `A` (rad/ns).
    pub amp: f64,
    /// Baseline `B` (rad/ns).
    pub offset: f64,
    /// Gaussian width (ns).
    pub sigma: f64,
    /// Gate duration (ns).
    pub t_g: f64,
    /// Drive angular frequency (rad/ns).
    pub w_d: f64,
    /// Anharmonicity (rad/ns), negative for transmons.
    pub delta: f64,
    /// DRAG scale, in [`ALPHA_S_DOMAIN`].
    pub alpha_s: f64,
    /// Phase-ramp parameter (rad/ns), in [`phi_domain`].
    pub phi: f64,
    #[serde(default)]
    pub phase_mode: PhaseMode,
}

impl Default for PulseParams {
    fn default() -> Self {
        let t_g = 20.0;
        let sigma = t_g / 4.0;
        PulseParams {
            amp: pi_amplitude(sigma, t_g),
            offset: 0.0,
            sigma,
            t_g,
            w_d: units::ghz(4.90),
            delta: -units::mhz(250.0),
            alpha_s: 0.0,
            phi: 0.0,
            phase_mode: PhaseMode::Carrier,
        }
    }
}

/// Gaussian amplitude whose rotating-frame rotation angle over `[0, t_g]` is `pi`.
///
/// A linearly polarized drive `cos(w t) eps_x` has a co-rotating component of
/// amplitude `eps_x / 2`, so the rotation angle is `(1/2) * integral(eps_x)`.
pub fn pi_amplitude(sigma: f64, t_g: f64) -> f64 {
    let area = sigma * PI.sqrt() * libm::erf(t_g / (2.0 * sigma));
    2.0 * PI / area
}

impl PulseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_g > 0.0) {
            return Err(Error::param("t_g", "must be > 0"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::param("sigma", "must be > 0"));
        }
        if self.delta == 0.0 || !self.delta.is_finite() {
            return Err(Error::param("delta", "anharmonicity must be finite and non-zero"));
        }
        let (lo, hi) = ALPHA_S_DOMAIN;
        if !(self.alpha_s >= lo && self.alpha_s <= hi) {
            return Err(Error::param("alpha_s", "must lie in [-1, 0]"));
        }
        let (lo, hi) = phi_domain();
        if !(self.phi >= lo - 1e-12 && self.phi <= hi) {
            return Err(Error::param("phi", "must lie in [-2pi*0.1, 0] rad/ns"));
        }
        if !(self.amp.is_finite() && self.offset.is_finite() && self.w_d.is_finite()) {
            return Err(Error::param("pulse", "amp, offset and w_d must be finite"));
        }
        Ok(())
    }

    /// Copy with the two optimized parameters replaced.
    pub fn with_theta(&self, alpha_s: f64, phi: f64) -> Self {
        PulseParams { alpha_s, phi, ..*self }
    }

    #[inline]
    fn on(&self, t: f64) -> bool {
        (0.0..=self.t_g).contains(&t)
    }

    #[inline]
    fn gauss(&self, t: f64) -> (f64, f64) {
        let s = t - self.t_g / 2.0;
        let g = (-(s * s) / (self.sigma * self.sigma)).exp();
        (s, g)
    }

    #[inline]
    pub(crate) fn eps_x(&self, t: f64) -> f64 {
        if !self.on(t) {
            return 0.0;
        }
        self.amp * self.gauss(t).1 + self.offset
    }

    #[inline]
    pub(crate) fn eps_y(&self, t: f64) -> f64 {
        if !self.on(t) {
            return 0.0;
        }
        let (s, g) = self.gauss(t);
        (self.alpha_s / self.delta) * self.amp * (-2.0 * s / (self.sigma * self.sigma)) * g
    }

    /// Lab-frame `(u_x, u_y)`; assumes a validated pulse.
    #[inline]
    pub fn lab_controls(&self, t: f64) -> (f64, f64) {
        if !self.on(t) {
            return (0.0, 0.0);
        }
        let (s, c) = ((self.w_d + 2.0 * self.phi) * t).sin_cos();
        (c * self.eps_x(t), s * self.eps_y(t))
    }

    /// Controls in the frame rotating at `w_d`, counter-rotating terms dropped.
    ///
    /// Rotating `(eps_x cos(w' t), eps_y sin(w' t))` back by `w_d t` leaves a
    /// slow field of amplitude `(eps_x + eps_y) / 2` at angle `2 phi t`.
    #[inline]
    pub fn rotating_controls(&self, t: f64) -> (f64, f64) {
        if !self.on(t) {
            return (0.0, 0.0);
        }
        let a = 0.5 * (self.eps_x(t) + self.eps_y(t));
        let (s, c) = (2.0 * self.phi * t).sin_cos();
        (a * c, a * s)
    }
}

/// In-phase envelope `A exp(-(t - t_g/2)^2 / sigma^2) + B`; zero outside `[0, t_g]`.
pub fn envelope_x(p: &PulseParams, t: f64) -> f64 {
    p.eps_x(t)
}

/// DRAG quadrature `(alpha_s / delta) * d(eps_x)/dt`, evaluated analytically.
pub fn envelope_y(p: &PulseParams, t: f64) -> Result<f64> {
    if p.delta == 0.0 {
        return Err(Error::domain("anharmonicity delta is zero"));
    }
    Ok(p.eps_y(t))
}

/// Lab-frame `(u_x, u_y)` at time `t >= 0`.
pub fn control_at(p: &PulseParams, t: f64) -> Result<(f64, f64)> {
    if !(t >= 0.0) {
        return Err(Error::domain("time must be >= 0"));
    }
    envelope_y(p, t)?;
    Ok(p.lab_controls(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulse() -> PulseParams {
        PulseParams {
            alpha_s: -0.6,
            ..PulseParams::default()
        }
    }

    #[test]
    fn gaussian_landmarks() {
        let p = PulseParams {
            offset: 0.01,
            ..pulse()
        };
        let mid = p.t_g / 2.0;
        assert!((envelope_x(&p, mid) - (p.amp + p.offset)).abs() < 1e-15);
        let e = core::f64::consts::E;
        for t in [mid - p.sigma, mid + p.sigma] {
            assert!((envelope_x(&p, t) - (p.amp / e + p.offset)).abs() < 1e-14);
        }
        let flat = PulseParams { amp: 0.0, ..p };
        for t in [0.0, 3.0, 10.0, 19.9] {
            assert_eq!(envelope_x(&flat, t), p.offset);
        }
    }

    #[test]
    fn pulse_is_off_outside_gate() {
        let p = pulse();
        assert_eq!(envelope_x(&p, p.t_g + 1e-9), 0.0);
        assert_eq!(envelope_y(&p, p.t_g + 1.0).unwrap(), 0.0);
        assert_eq!(control_at(&p, 30.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn drag_quadrature_vanishes_at_peak_and_without_scale() {
        let p = pulse();
        assert_eq!(envelope_y(&p, p.t_g / 2.0).unwrap(), 0.0);
        let q = PulseParams { alpha_s: 0.0, ..p };
        for t in [0.0, 2.0, 7.5, 13.0] {
            assert_eq!(envelope_y(&q, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_anharmonicity_is_a_domain_error() {
        let p = PulseParams { delta: 0.0, ..pulse() };
        assert!(matches!(envelope_y(&p, 1.0), Err(Error::Domain(_))));
        assert!(control_at(&p, 1.0).is_err());
        assert!(p.validate().is_err());
    }

    #[test]
    fn controls_at_time_zero() {
        let p = pulse();
        let (ux, uy) = control_at(&p, 0.0).unwrap();
        assert_eq!(ux, envelope_x(&p, 0.0));
        assert_eq!(uy, 0.0);
    }

    #[test]
    fn domains_are_enforced() {
        assert!(pulse().validate().is_ok());
        assert!(pulse().with_theta(0.1, 0.0).validate().is_err());
        assert!(pulse().with_theta(-0.5, 0.01).validate().is_err());
        assert!(pulse().with_theta(-0.5, -1.0).validate().is_err());
    }

    #[test]
    fn default_amplitude_gives_pi_rotation() {
        let p = PulseParams::default();
        let n = 200_000;
        let h = p.t_g / n as f64;
        let area: f64 = (0..n).map(|i| envelope_x(&p, (i as f64 + 0.5) * h) * h).sum();
        assert!((0.5 * area - PI).abs() < 1e-8);
    }
}
