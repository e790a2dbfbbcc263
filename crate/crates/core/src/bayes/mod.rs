//! Gaussian-process Bayesian optimization over the two pulse parameters
//! `theta = (alpha_s, phi)`.
//!
//! The loop is the usual ask/tell pair: [`BayesOptimizer::ask`] hands out the
//! next point (first `n_init` uniform random tries, then acquisition maxima
//! with a decaying exploration weight) and [`BayesOptimizer::tell`] records
//! the measured fidelity. [`suggest_observe_loop`] drives both against a
//! closure. Every step is appended to a trace from which the optimizer can be
//! rebuilt exactly.

mod acquisition;
mod gp;
mod probit;

pub use acquisition::{acquisition, argmax_acquisition, AcquisitionConfig, BETA_FLOOR};
pub use gp::{kernel, matern52, Domain, GpModel, Hyper, TransformMode};
pub use probit::{norm_cdf, norm_inv_cdf, probit, PROBIT_CLAMP};

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt::Display;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::StreamSeed;
use crate::{Error, Result};

/// Stream id of the initial-design generator, kept apart from trajectory
/// streams.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BayesConfig {
    pub acquisition: AcquisitionConfig,
    pub transform_mode: TransformMode,
    pub jitter: f64,
    pub domain: Domain,
    /// Refit `(V, I)` every this many suggestions.
    pub refit_every: usize,
    /// Stop early once an observation reaches this value.
    pub target: Option<f64>,
    pub seed: u64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        BayesConfig {
            acquisition: AcquisitionConfig::default(),
            transform_mode: TransformMode::Probit,
            jitter: 1e-6,
            domain: Domain::pulse(),
            refit_every: 1,
            target: None,
            seed: 0,
        }
    }
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        self.acquisition.validate()?;
        self.domain.validate()?;
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::param("jitter", "must be finite and >= 0"));
        }
        if self.refit_every == 0 {
            return Err(Error::param("refit_every", "must be >= 1"));
        }
        if self.acquisition.n_init == 0 {
            return Err(Error::param("n_init", "must be >= 1"));
        }
        if let Some(t) = self.target {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::param("target", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Suggest,
}

/// One evaluation attempt.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub phase: Phase,
    pub theta: [f64; 2],
    /// `None` when the evaluator failed.
    pub f: Option<f64>,
    /// Exploration weight; `None` for initial tries.
    pub beta: Option<f64>,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "I")]
    pub i: f64,
    pub wall_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Suggestion {
    pub iter: usize,
    pub phase: Phase,
    pub theta: [f64; 2],
    pub beta: Option<f64>,
    pub hyper: Hyper,
}

#[derive(Clone, Debug)]
pub struct BayesOptimizer {
    cfg: BayesConfig,
    model: GpModel,
    init_points: Vec<[f64; 2]>,
    trace: Vec<TraceRecord>,
    done_init: usize,
    done_suggest: usize,
    pending: Option<Suggestion>,
}

impl BayesOptimizer {
    pub fn new(cfg: BayesConfig) -> Result<Self> {
        cfg.validate()?;
        let model = GpModel::new(cfg.domain, cfg.transform_mode, cfg.jitter)?;
        let mut rng = StreamSeed::new(cfg.seed, INIT_STREAM).rng();
        let init_points = (0..cfg.acquisition.n_init)
            .map(|_| {
                let u = [rng.random::<f64>(), rng.random::<f64>()];
                cfg.domain.denormalize(&u)
            })
            .collect();
        Ok(BayesOptimizer {
            cfg,
            model,
            init_points,
            trace: Vec::new(),
            done_init: 0,
            done_suggest: 0,
            pending: None,
        })
    }

    /// Rebuilds an optimizer from a trace written by an identical config.
    pub fn resume(cfg: BayesConfig, trace: &[TraceRecord]) -> Result<Self> {
        let mut opt = BayesOptimizer::new(cfg)?;
        for rec in trace {
            if rec.phase == Phase::Init {
                let want = opt.init_points.get(opt.done_init).copied();
                if want != Some(rec.theta) {
                    return Err(Error::domain("trace does not match the configured initial design"));
                }
            }
            let hyper = Hyper { v: rec.v, i: rec.i };
            let s = Suggestion {
                iter: rec.iter,
                phase: rec.phase,
                theta: rec.theta,
                beta: rec.beta,
                hyper,
            };
            if rec.phase == Phase::Suggest {
                opt.model.set_hyper(hyper)?;
            }
            opt.pending = Some(s);
            opt.tell(rec.f, rec.wall_time)?;
        }
        Ok(opt)
    }

    pub fn config(&self) -> &BayesConfig {
        &self.cfg
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn evaluations(&self) -> usize {
        self.done_init + self.done_suggest
    }

    pub fn suggestions(&self) -> usize {
        self.done_suggest
    }

    /// Best observation so far; the earliest wins ties.
    pub fn best(&self) -> Option<([f64; 2], f64)> {
        let mut best: Option<([f64; 2], f64)> = None;
        for (t, &f) in self.model.thetas().iter().zip(self.model.observations()) {
            if best.is_none_or(|(_, b)| f > b) {
                best = Some((*t, f));
            }
        }
        best
    }

    fn target_reached(&self) -> bool {
        match (self.cfg.target, self.best()) {
            (Some(t), Some((_, f))) => f >= t,
            _ => false,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.pending.is_none()
            && self.done_init >= self.init_points.len()
            && (self.done_suggest >= self.cfg.acquisition.budget || self.target_reached())
    }

    /// Next point to evaluate, or `None` when the run is over. Asking again
    /// before telling returns the same suggestion.
    pub fn ask(&mut self) -> Result<Option<Suggestion>> {
        if let Some(s) = self.pending {
            return Ok(Some(s));
        }
        if self.is_finished() {
            return Ok(None);
        }
        let iter = self.evaluations();
        let s = if self.done_init < self.init_points.len() {
            Suggestion {
                iter,
                phase: Phase::Init,
                theta: self.init_points[self.done_init],
                beta: None,
                hyper: self.model.hyper(),
            }
        } else {
            if self.done_suggest.is_multiple_of(self.cfg.refit_every) {
                self.model.fit_hyperparameters()?;
            }
            let beta = self.cfg.acquisition.beta(self.done_suggest);
            let theta = argmax_acquisition(&mut self.model, &self.cfg.acquisition, beta)?;
            Suggestion {
                iter,
                phase: Phase::Suggest,
                theta,
                beta: Some(beta),
                hyper: self.model.hyper(),
            }
        };
        self.pending = Some(s);
        Ok(Some(s))
    }

    /// Records the outcome of the pending suggestion. `None` marks a failed
    /// evaluation; the suggestion then stays pending.
    pub fn tell(&mut self, f: Option<f64>, wall_time: f64) -> Result<()> {
        let s = self
            .pending
            .ok_or_else(|| Error::domain("tell without a pending suggestion"))?;
        self.trace.push(TraceRecord {
            iter: s.iter,
            phase: s.phase,
            theta: s.theta,
            f,
            beta: s.beta,
            v: s.hyper.v,
            i: s.hyper.i,
            wall_time,
        });
        if let Some(f) = f {
            self.model.add_observation(s.theta, f)?;
            match s.phase {
                Phase::Init => self.done_init += 1,
                Phase::Suggest => self.done_suggest += 1,
            }
            self.pending = None;
        }
        Ok(())
    }
}

/// Runs the optimizer to completion against `evaluator`. A failed evaluation
/// is recorded and retried once; a second failure aborts the run. `clock`
/// stamps each trace record (return 0 for reproducible traces).
pub fn suggest_observe_loop<E, F, C>(optimizer: &mut BayesOptimizer, mut evaluator: F, mut clock: C) -> Result<()>
where
    E: Display,
    F: FnMut(&Suggestion) -> core::result::Result<f64, E>,
    C: FnMut() -> f64,
{
    let mut failures = 0usize;
    while let Some(s) = optimizer.ask()? {
        match evaluator(&s) {
            Ok(f) if f.is_finite() => {
                optimizer.tell(Some(f), clock())?;
                failures = 0;
            }
            outcome => {
                let reason = match outcome {
                    Err(e) => e.to_string(),
                    Ok(f) => format!("evaluator returned {f}"),
                };
                log::warn!("evaluation {} failed: {reason}", s.iter);
                optimizer.tell(None, clock())?;
                failures += 1;
                if failures > 1 {
                    return Err(Error::EvaluatorAborted { iter: s.iter, reason });
                }
            }
        }
    }
    Ok(())
}
