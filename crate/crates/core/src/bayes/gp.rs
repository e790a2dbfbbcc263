//! Zero-mean Gaussian process on the unit square with a Matern-5/2 kernel.

// Float math for no_std; the lint misfires where core also offers these.
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::probit::{norm_cdf, probit};
use crate::pulse::{phi_domain, ALPHA_S_DOMAIN};
use crate::{Error, Result};

/// Kernel hyperparameters: signal variance `v` and length scale `i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub v: f64,
    pub i: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { v: 1.0, i: 0.3 }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.v > 0.0 && self.v.is_finite()) {
            return Err(Error::param("V", "must be > 0"));
        }
        if !(self.i > 0.0 && self.i.is_finite()) {
            return Err(Error::param("I", "must be > 0"));
        }
        Ok(())
    }
}

/// How observations enter the GP.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    /// Fit `Phi^{-1}(f)`; report means through `Phi`.
    #[default]
    Probit,
    /// Fit `f` as is.
    Direct,
}

/// Search box, mapped onto `[0, scale]^2` before distances are taken.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Domain {
    /// `alpha_s` in `[-1, 0]`, `phi` in `[-2 pi 0.1, 0]` rad/ns.
    pub fn pulse() -> Self {
        let (plo, phi) = phi_domain();
        Domain {
            lo: [ALPHA_S_DOMAIN.0, plo],
            hi: [ALPHA_S_DOMAIN.1, phi],
        }
    }

    pub fn unit() -> Self {
        Domain {
            lo: [0.0; 2],
            hi: [1.0; 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..2 {
            if !(self.hi[k] > self.lo[k]) || !self.lo[k].is_finite() || !self.hi[k].is_finite() {
                return Err(Error::param("domain", "each upper bound must exceed its lower bound"));
            }
        }
        Ok(())
    }

    pub fn normalize(&self, theta: &[f64; 2]) -> [f64; 2] {
        [
            (theta[0] - self.lo[0]) / (self.hi[0] - self.lo[0]),
            (theta[1] - self.lo[1]) / (self.hi[1] - self.lo[1]),
        ]
    }

    pub fn denormalize(&self, u: &[f64; 2]) -> [f64; 2] {
        [
            self.lo[0] + u[0] * (self.hi[0] - self.lo[0]),
            self.lo[1] + u[1] * (self.hi[1] - self.lo[1]),
        ]
    }

    pub fn contains(&self, theta: &[f64; 2]) -> bool {
        (0..2).all(|k| theta[k] >= self.lo[k] && theta[k] <= self.hi[k])
    }
}

impl Default for Domain {
    fn default() -> Self {
        Domain::pulse()
    }
}

/// Matern-5/2 as a function of distance.
pub fn matern52(d: f64, hyper: &Hyper) -> f64 {
    let s = 5.0.sqrt() * d / hyper.i;
    hyper.v * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Kernel between two points already in normalized coordinates.
pub fn kernel(ua: &[f64; 2], ub: &[f64; 2], hyper: &Hyper) -> f64 {
    let dx = ua[0] - ub[0];
    let dy = ua[1] - ub[1];
    matern52((dx * dx + dy * dy).sqrt(), hyper)
}

#[derive(Clone, Debug)]
struct Factor {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct GpModel {
    domain: Domain,
    /// Multiplies the normalized coordinates; 1 unless probing scale effects.
    norm_scale: f64,
    mode: TransformMode,
    jitter: f64,
    hyper: Hyper,
    thetas: Vec<[f64; 2]>,
    units: Vec<[f64; 2]>,
    raw: Vec<f64>,
    data: Vec<f64>,
    factor: Option<Factor>,
}

impl GpModel {
    pub fn new(domain: Domain, mode: TransformMode, jitter: f64) -> Result<Self> {
        domain.validate()?;
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(Error::param("jitter", "must be finite and >= 0"));
        }
        Ok(GpModel {
            domain,
            norm_scale: 1.0,
            mode,
            jitter,
            hyper: Hyper::default(),
            thetas: Vec::new(),
            units: Vec::new(),
            raw: Vec::new(),
            data: Vec::new(),
            factor: None,
        })
    }

    pub fn with_norm_scale(mut self, scale: f64) -> Self {
        self.norm_scale = scale;
        self.refresh_units();
        self
    }

    fn refresh_units(&mut self) {
        let s = self.norm_scale;
        self.units = self
            .thetas
            .iter()
            .map(|t| {
                let u = self.domain.normalize(t);
                [u[0] * s, u[1] * s]
            })
            .collect();
        self.factor = None;
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn mode(&self) -> TransformMode {
        self.mode
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn thetas(&self) -> &[[f64; 2]] {
        &self.thetas
    }

    /// Observations as given (before the transform).
    pub fn observations(&self) -> &[f64] {
        &self.raw
    }

    /// Observations in the space the GP models.
    pub fn transformed(&self) -> &[f64] {
        &self.data
    }

    pub fn transform(&self, f: f64) -> f64 {
        match self.mode {
            TransformMode::Probit => probit(f),
            TransformMode::Direct => f,
        }
    }

    pub fn untransform(&self, g: f64) -> f64 {
        match self.mode {
            TransformMode::Probit => norm_cdf(g),
            TransformMode::Direct => g,
        }
    }

    pub fn add_observation(&mut self, theta: [f64; 2], f: f64) -> Result<()> {
        if !f.is_finite() || !theta.iter().all(|c| c.is_finite()) {
            return Err(Error::domain("observation must be finite"));
        }
        let u = self.domain.normalize(&theta);
        self.units.push([u[0] * self.norm_scale, u[1] * self.norm_scale]);
        self.thetas.push(theta);
        self.raw.push(f);
        self.data.push(self.transform(f));
        self.factor = None;
        Ok(())
    }

    pub fn unit(&self, theta: &[f64; 2]) -> [f64; 2] {
        let u = self.domain.normalize(theta);
        [u[0] * self.norm_scale, u[1] * self.norm_scale]
    }

    /// `k(theta_a, theta_b)` under the current hyperparameters.
    pub fn kernel(&self, a: &[f64; 2], b: &[f64; 2]) -> f64 {
        kernel(&self.unit(a), &self.unit(b), &self.hyper)
    }

    fn gram(&self, hyper: &Hyper) -> DMatrix<f64> {
        let n = self.units.len();
        DMatrix::from_fn(n, n, |i, j| {
            let k = kernel(&self.units[i], &self.units[j], hyper);
            if i == j {
                k + self.jitter
            } else {
                k
            }
        })
    }

    fn factorize(&self, hyper: &Hyper) -> Result<Factor> {
        let k = self.gram(hyper);
        let chol = k.cholesky().ok_or(Error::IllConditioned { jitter: self.jitter })?;
        // Cholesky on a numerically singular matrix can "succeed" with a
        // vanishing pivot; treat that as failure too.
        let l = chol.l_dirty();
        let n = self.units.len();
        for i in 0..n {
            let d = l[(i, i)];
            if !(d.is_finite() && d * d > 1e-14 * hyper.v.max(self.jitter)) {
                return Err(Error::IllConditioned { jitter: self.jitter });
            }
        }
        let alpha = chol.solve(&DVector::from_column_slice(&self.data));
        Ok(Factor { chol, alpha })
    }

    /// Log marginal likelihood at arbitrary hyperparameters.
    pub fn log_marginal_likelihood_at(&self, hyper: &Hyper) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::domain("log marginal likelihood needs at least one observation"));
        }
        let f = self.factorize(hyper)?;
        Ok(lml_from(&f, &self.data))
    }

    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        self.log_marginal_likelihood_at(&self.hyper)
    }

    /// Sets the hyperparameters and refactors.
    pub fn set_hyper(&mut self, hyper: Hyper) -> Result<()> {
        hyper.validate()?;
        self.hyper = hyper;
        self.factor = None;
        self.ensure_factor()
    }

    fn ensure_factor(&mut self) -> Result<()> {
        if self.factor.is_none() && !self.is_empty() {
            self.factor = Some(self.factorize(&self.hyper)?);
        }
        Ok(())
    }

    /// Maximizes the log marginal likelihood over a log grid
    /// (`V` in `[1e-6, 1e3]`, `I` in `[1e-2, 10]`) and two local refinements.
    /// Deterministic; ties keep the first candidate in scan order.
    pub fn fit_hyperparameters(&mut self) -> Result<Hyper> {
        if self.is_empty() {
            return Err(Error::FitFailed);
        }
        let mut best: Option<(f64, Hyper)> = None;
        let consider = |lv: f64, li: f64, best: &mut Option<(f64, Hyper)>| {
            let h = Hyper {
                v: 10.0.powf(lv),
                i: 10.0.powf(li),
            };
            if let Ok(l) = self.log_marginal_likelihood_at(&h) {
                if l.is_finite() && best.is_none_or(|(b, _)| l > b) {
                    *best = Some((l, h));
                }
            }
        };
        let (v_lo, v_hi, i_lo, i_hi) = (-6.0, 3.0, -2.0, 1.0);
        let (nv, ni) = (37usize, 25usize);
        let sv = (v_hi - v_lo) / (nv - 1) as f64;
        let si = (i_hi - i_lo) / (ni - 1) as f64;
        for a in 0..nv {
            for b in 0..ni {
                consider(v_lo + a as f64 * sv, i_lo + b as f64 * si, &mut best);
            }
        }
        let (mut hv, mut hi) = (sv, si);
        for _ in 0..2 {
            let (_, h) = best.ok_or(Error::FitFailed)?;
            let (cv, ci) = (h.v.log10(), h.i.log10());
            for a in -4i32..=4 {
                for b in -4i32..=4 {
                    let lv = (cv + a as f64 * hv / 4.0).clamp(v_lo, v_hi);
                    let li = (ci + b as f64 * hi / 4.0).clamp(i_lo, i_hi);
                    consider(lv, li, &mut best);
                }
            }
            hv /= 4.0;
            hi /= 4.0;
        }
        let (_, h) = best.ok_or(Error::FitFailed)?;
        self.set_hyper(h)?;
        Ok(h)
    }

    /// Posterior mean and variance in the modelled (transformed) space.
    pub fn posterior(&mut self, theta: &[f64; 2]) -> Result<(f64, f64)> {
        self.ensure_factor()?;
        Ok(self.posterior_unit(&self.unit(theta)))
    }

    /// Posterior at a point already in scaled unit coordinates. Requires a
    /// current factorization (any `posterior` call or `set_hyper` makes one).
    pub(crate) fn posterior_unit(&self, u: &[f64; 2]) -> (f64, f64) {
        let Some(f) = &self.factor else {
            return (0.0, self.hyper.v);
        };
        let ks = DVector::from_iterator(self.units.len(), self.units.iter().map(|x| kernel(x, u, &self.hyper)));
        let mean = ks.dot(&f.alpha);
        let mut w = ks;
        f.chol.l_dirty().solve_lower_triangular_mut(&mut w);
        let var = (self.hyper.v - w.norm_squared()).max(0.0);
        (mean, var)
    }

    /// Posterior mean mapped back to fidelity space.
    pub fn predict(&mut self, theta: &[f64; 2]) -> Result<f64> {
        let (m, _) = self.posterior(theta)?;
        Ok(self.untransform(m))
    }

    pub(crate) fn prepare(&mut self) -> Result<()> {
        self.ensure_factor()
    }

    pub fn norm_scale(&self) -> f64 {
        self.norm_scale
    }
}

fn lml_from(f: &Factor, data: &[f64]) -> f64 {
    let n = data.len();
    let d = DVector::from_column_slice(data);
    let l = f.chol.l_dirty();
    let logdet_half: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    -0.5 * d.dot(&f.alpha) - logdet_half - 0.5 * n as f64 * (2.0 * core::f64::consts::PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matern_landmarks() {
        let h = Hyper { v: 1.0, i: 1.0 };
        assert_eq!(matern52(0.0, &h), 1.0);
        let s5 = 5.0.sqrt();
        let want = (1.0 + s5 + 5.0 / 3.0) * (-s5).exp();
        assert!((matern52(1.0, &h) - want).abs() < 1e-12);
        assert!((matern52(1.0, &h) - 0.5240).abs() < 5e-5);
        assert!(matern52(1e3, &h) < 1e-300);
    }

    #[test]
    fn single_point_likelihood() {
        let mut gp = GpModel::new(Domain::unit(), TransformMode::Direct, 0.0).unwrap();
        gp.add_observation([0.5, 0.5], 0.0).unwrap();
        let l = gp.log_marginal_likelihood_at(&Hyper { v: 1.0, i: 0.3 }).unwrap();
        assert!((l + 0.5 * (2.0 * core::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn duplicate_points_are_singular_without_jitter() {
        let mut gp = GpModel::new(Domain::unit(), TransformMode::Direct, 0.0).unwrap();
        gp.add_observation([0.2, 0.7], 0.1).unwrap();
        gp.add_observation([0.2, 0.7], 0.3).unwrap();
        assert!(matches!(
            gp.log_marginal_likelihood(),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn far_from_data_reverts_to_prior() {
        let mut gp = GpModel::new(Domain::unit(), TransformMode::Direct, 1e-10).unwrap();
        gp.add_observation([0.0, 0.0], 0.8).unwrap();
        gp.set_hyper(Hyper { v: 2.0, i: 0.01 }).unwrap();
        let (m, v) = gp.posterior(&[1.0, 1.0]).unwrap();
        assert!(m.abs() < 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
    }
}
