//! Upper-confidence acquisition and its segmented grid maximizer.

// Float math for no_std; the lint misfires where core also offers these.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::gp::GpModel;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub beta0: f64,
    /// Per-iteration factor on beta. `None` picks the factor that brings beta
    /// down to 5% of `beta0` at the end of the budget.
    pub decay: Option<f64>,
    /// Cells per dimension of the argmax search.
    pub segments: usize,
    /// Coarse grid points per cell and dimension.
    pub cell_grid: usize,
    /// Grid points per dimension of each refinement level.
    pub refine_grid: usize,
    /// Suggestions after the initial random tries.
    pub budget: usize,
    pub n_init: usize,
    /// Weight the posterior standard deviation instead of the variance.
    pub use_std: bool,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            beta0: 2.0,
            decay: None,
            segments: 8,
            cell_grid: 5,
            refine_grid: 11,
            budget: 15,
            n_init: 10,
            use_std: false,
        }
    }
}

/// Final exploration weight as a fraction of `beta0`.
pub const BETA_FLOOR: f64 = 0.05;

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::param("beta0", "must be > 0"));
        }
        if let Some(d) = self.decay {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::param("decay", "must lie in (0, 1]"));
            }
        }
        if self.segments < 2 {
            return Err(Error::param("segments", "must be >= 2"));
        }
        if self.cell_grid < 1 || self.refine_grid < 3 {
            return Err(Error::param(
                "cell_grid",
                "grids too small (cell_grid >= 1, refine_grid >= 3)",
            ));
        }
        Ok(())
    }

    pub fn effective_decay(&self) -> f64 {
        match self.decay {
            Some(d) => d,
            None if self.budget == 0 => 1.0,
            // Nudged down one part in 1e12 so rounding cannot leave the last
            // beta above the floor.
            None => BETA_FLOOR.powf(1.0 / self.budget as f64) * (1.0 - 1e-12),
        }
    }

    /// `beta_k = beta0 decay^k`.
    pub fn beta(&self, k: usize) -> f64 {
        self.beta0 * self.effective_decay().powi(k as i32)
    }
}

/// `beta cov + mean` in the modelled space, cov being the variance (or the
/// standard deviation with `use_std`).
pub fn acquisition(model: &mut GpModel, theta: &[f64; 2], beta: f64, use_std: bool) -> Result<f64> {
    let (m, v) = model.posterior(theta)?;
    Ok(score(m, v, beta, use_std))
}

#[inline]
fn score(mean: f64, var: f64, beta: f64, use_std: bool) -> f64 {
    let spread = if use_std { var.sqrt() } else { var };
    beta * spread + mean
}

/// Strictly better: higher score, or equal score at a lexicographically
/// smaller point.
fn better(a: (f64, [f64; 2]), b: (f64, [f64; 2])) -> bool {
    a.0 > b.0 || (a.0 == b.0 && (a.1[0], a.1[1]) < (b.1[0], b.1[1]))
}

/// Segmented grid search for the acquisition maximum. Every cell of a
/// `segments x segments` partition of the domain gets a `cell_grid^2` grid of
/// cell-centred points; the best point overall is then refined twice on
/// `refine_grid^2` grids spanning one previous spacing on either side.
/// Returns the point in parameter units.
pub fn argmax_acquisition(model: &mut GpModel, cfg: &AcquisitionConfig, beta: f64) -> Result<[f64; 2]> {
    cfg.validate()?;
    model.prepare()?;
    let s = model.norm_scale();
    let domain = *model.domain();
    let eval = |model: &GpModel, u: [f64; 2]| {
        let (m, v) = model.posterior_unit(&[u[0] * s, u[1] * s]);
        (score(m, v, beta, cfg.use_std), u)
    };

    let per = cfg.segments * cfg.cell_grid;
    let h = 1.0 / per as f64;
    let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
    for cx in 0..cfg.segments {
        for cy in 0..cfg.segments {
            for a in 0..cfg.cell_grid {
                for b in 0..cfg.cell_grid {
                    let i = cx * cfg.cell_grid + a;
                    let j = cy * cfg.cell_grid + b;
                    let u = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                    let cand = eval(model, u);
                    if better(cand, best) {
                        best = cand;
                    }
                }
            }
        }
    }

    let mut span = h;
    let r = cfg.refine_grid;
    for _ in 0..2 {
        let c = best.1;
        let step = 2.0 * span / (r - 1) as f64;
        for a in 0..r {
            for b in 0..r {
                let u = [
                    (c[0] - span + a as f64 * step).clamp(0.0, 1.0),
                    (c[1] - span + b as f64 * step).clamp(0.0, 1.0),
                ];
                let cand = eval(model, u);
                if better(cand, best) {
                    best = cand;
                }
            }
        }
        span = step;
    }
    Ok(domain.denormalize(&best.1))
}
