//! Non-Markovian bath: ohmic spectral density with a Lorentz-Drude cutoff and
//! the closed-form dissipation `gamma(t)` and diffusion `delta(t)` kernels it
//! induces on a qubit of frequency `omega0`.
//!
//! Both kernels vanish at `t = 0` and relax to their Markovian plateaus on the
//! bath correlation time `1 / (r * omega0)`.

// Float math for no_std; the lint misfires where core also offers these.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::units;
use crate::{Error, Result};

/// Bath and measurement description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvParams {
    /// Dimensionless system-bath coupling.
    pub alpha_c: f64,
    /// Cutoff ratio `omega_c / omega0`.
    pub r: f64,
    /// Qubit angular frequency (rad/ns).
    pub omega0: f64,
    /// Bath temperature `k_B T` in the units of `omega0`.
    pub kbt: f64,
    /// Detection efficiency in `(0, 1]`.
    pub eta: f64,
    /// Measurement strength `M` (rad/ns).
    pub m_strength: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        let omega0 = units::ghz(4.889);
        EnvParams {
            alpha_c: 0.5,
            r: 0.01,
            omega0,
            kbt: 0.05 * omega0,
            eta: 1.0,
            m_strength: units::mhz(2.0),
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha_c, self.r, self.omega0, self.kbt, self.eta, self.m_strength]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("environment", "all fields must be finite"));
        }
        if self.alpha_c <= 0.0 {
            return Err(Error::param("alpha_c", "must be > 0"));
        }
        if self.r <= 0.0 {
            return Err(Error::param("r", "must be > 0"));
        }
        if self.omega0 <= 0.0 {
            return Err(Error::param("omega0", "must be > 0"));
        }
        if self.kbt < 0.0 {
            return Err(Error::param("kbt", "must be >= 0"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::param("eta", "must lie in (0, 1]"));
        }
        if self.m_strength < 0.0 {
            return Err(Error::param("m_strength", "must be >= 0"));
        }
        Ok(())
    }

    /// Bath cutoff `omega_c = r * omega0`.
    pub fn omega_c(&self) -> f64 {
        self.r * self.omega0
    }

    /// Same parameters with the measurement switched off.
    pub fn without_measurement(&self) -> Self {
        EnvParams {
            m_strength: 0.0,
            ..*self
        }
    }

    fn lorentz_factor(&self) -> f64 {
        let r2 = self.r * self.r;
        self.alpha_c * self.alpha_c * r2 / (1.0 + r2)
    }

    /// `gamma(t -> inf)`.
    pub fn gamma_plateau(&self) -> f64 {
        self.lorentz_factor() * self.omega0
    }

    /// `delta(t -> inf)`.
    pub fn delta_plateau(&self) -> f64 {
        2.0 * self.lorentz_factor() * self.kbt
    }

    /// `(gamma(t), delta(t))` without the domain check. Shares one exponential.
    #[inline]
    pub fn kernels(&self, t: f64) -> (f64, f64) {
        let decay = (-self.r * self.omega0 * t).exp();
        let (s, c) = (self.omega0 * t).sin_cos();
        let gamma = self.gamma_plateau() * (1.0 - decay * c - self.r * decay * s);
        let delta = self.delta_plateau() * (1.0 - decay * (c - s / self.r));
        (gamma, delta)
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain("time must be >= 0"))
    }
}

/// Dissipation coefficient `gamma(t)` (rad/ns).
pub fn gamma_t(p: &EnvParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(p.kernels(t).0)
}

/// Diffusion coefficient `delta(t)` (rad/ns).
pub fn delta_t(p: &EnvParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(p.kernels(t).1)
}

/// Unnormalized spectral density `J(w) = w * wc^2 / (wc^2 + w^2)`.
pub fn spectral_density(p: &EnvParams, w: f64) -> Result<f64> {
    if !(w >= 0.0) {
        return Err(Error::domain("bath frequency must be >= 0"));
    }
    let wc2 = p.omega_c() * p.omega_c();
    Ok(w * wc2 / (wc2 + w * w))
}
