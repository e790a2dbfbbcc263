//! Single-state tracking runs: measured trajectories from one initial state,
//! the two estimators on each record, and the statistics behind the
//! tracking and reconstruction figures.

use qcal_core::dynamics::{coarse_grained_record, BlochState, Integrator, Model, TrajectoryRecord};
use qcal_core::estimator::{run_estimators_on, EstimatorHistory};
use qcal_core::fidelity::{error_distribution, ErrorDistribution, PauliState};
use qcal_core::rng::StreamSeed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::Result;

/// Discretized truth, belief and measurement-free models of one config.
pub struct TrackingSetup {
    pub state: PauliState,
    pub n_traj: usize,
    pub seed: u64,
    pub truth: Integrator,
    pub pure: Integrator,
    pub cfg: Config,
}

impl TrackingSetup {
    pub fn new(cfg: &Config) -> Result<Self> {
        let env = cfg.environment.params();
        let pulse = cfg.pulse.params(env.omega0);
        let sim = cfg.simulation.sim(pulse.t_g);
        Ok(TrackingSetup {
            state: cfg.simulate.state,
            n_traj: cfg.simulate_n_traj(),
            seed: cfg.seed,
            truth: Integrator::new(Model::new(env, pulse, sim.frame), sim)?,
            pure: Integrator::new(Model::new(env.without_measurement(), pulse, sim.frame), sim)?,
            cfg: cfg.clone(),
        })
    }

    /// Same stream layout as the gate-fidelity ensembles at evaluation 0,
    /// so these trajectories coincide with that ensemble's.
    pub fn seed_of(&self, k: usize) -> StreamSeed {
        StreamSeed::for_trajectory(self.seed, 0, self.state.index() as u64, k as u64)
    }

    pub fn simulate(&self) -> Result<Vec<TrajectoryRecord>> {
        let x0 = self.state.bloch();
        let recs = (0..self.n_traj)
            .into_par_iter()
            .map(|k| self.truth.run(x0, Some(self.seed_of(k))))
            .collect::<qcal_core::Result<Vec<_>>>()?;
        Ok(recs)
    }

    pub fn estimate(&self, records: &[TrajectoryRecord]) -> Result<Vec<EstimatorHistory>> {
        let x0 = self.state.bloch();
        let est = self.cfg.estimator;
        let hs = records
            .par_iter()
            .map(|rec| run_estimators_on(&self.truth, rec, x0, &est))
            .collect::<qcal_core::Result<Vec<_>>>()?;
        Ok(hs)
    }

    pub fn pure_record(&self) -> Result<TrajectoryRecord> {
        Ok(self.pure.run(self.state.bloch(), None)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3aRow {
    pub t: f64,
    pub dy_over_dt: f64,
}

/// Window-averaged record `dY/dt`, stamped at window centres.
pub fn fig3a(rec: &TrajectoryRecord, window: f64) -> Result<Vec<Fig3aRow>> {
    let avg = coarse_grained_record(rec, window)?;
    let w = (window / rec.dt).round() * rec.dt;
    Ok(avg
        .iter()
        .enumerate()
        .map(|(k, &v)| Fig3aRow {
            t: (k as f64 + 0.5) * w,
            dy_over_dt: v,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3bRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub x_hat: f64,
    pub y_hat: f64,
    pub z_hat: f64,
}

/// True and ROSE-estimated state of one trajectory (simulation frame).
pub fn fig3b(rec: &TrajectoryRecord, h: &EstimatorHistory) -> Vec<Fig3bRow> {
    rec.times
        .iter()
        .zip(&rec.states)
        .zip(&h.x_hat)
        .map(|((&t, s), e)| Fig3bRow {
            t,
            x: s.x,
            y: s.y,
            z: s.z,
            x_hat: e.x,
            y_hat: e.y,
            z_hat: e.z,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3cRow {
    pub t: f64,
    pub x_pure: f64,
    pub y_pure: f64,
    pub z_pure: f64,
    pub x0_mean: f64,
    pub y0_mean: f64,
    pub z0_mean: f64,
}

/// Measurement-free evolution against the trajectory-averaged PSE
/// reconstruction (simulation frame).
pub fn fig3c(pure: &TrajectoryRecord, hs: &[EstimatorHistory]) -> Vec<Fig3cRow> {
    let n = hs.len().max(1) as f64;
    pure.times
        .iter()
        .zip(&pure.states)
        .enumerate()
        .map(|(k, (&t, p))| {
            let mut m = [0.0; 3];
            for h in hs {
                let s = h.x0[k];
                m[0] += s.x;
                m[1] += s.y;
                m[2] += s.z;
            }
            Fig3cRow {
                t,
                x_pure: p.x,
                y_pure: p.y,
                z_pure: p.z,
                x0_mean: m[0] / n,
                y0_mean: m[1] / n,
                z0_mean: m[2] / n,
            }
        })
        .collect()
}

/// Final `|z - z_hat|` of every trajectory.
pub fn tracking_errors(
    records: &[TrajectoryRecord],
    hs: &[EstimatorHistory],
    threshold: f64,
) -> Result<ErrorDistribution> {
    let real: Vec<BlochState> = records.iter().map(|r| r.final_state()).collect();
    let est: Vec<BlochState> = hs.iter().map(|h| h.final_x_hat()).collect();
    Ok(error_distribution(&real, &est, threshold)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

/// Histogram rows; the overflow bin extends to the largest error.
pub fn histogram(d: &ErrorDistribution) -> Vec<HistogramRow> {
    let w = qcal_core::fidelity::ERROR_BIN_WIDTH;
    d.counts
        .iter()
        .enumerate()
        .map(|(k, &count)| {
            let left = d.edges.get(k).copied().unwrap_or(k as f64 * w);
            let right = if k + 1 < d.counts.len() {
                left + w
            } else {
                d.max.max(left + w)
            };
            HistogramRow {
                bin_left: left,
                bin_right: right,
                count,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub t: f64,
    pub x_hat: f64,
    pub y_hat: f64,
    pub z_hat: f64,
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
    pub tr_p1: f64,
    pub tr_p2: f64,
}

pub fn history_rows(h: &EstimatorHistory) -> Vec<HistoryRow> {
    (0..h.times.len())
        .map(|k| HistoryRow {
            t: h.times[k],
            x_hat: h.x_hat[k].x,
            y_hat: h.x_hat[k].y,
            z_hat: h.x_hat[k].z,
            x0: h.x0[k].x,
            y0: h.x0[k].y,
            z0: h.x0[k].z,
            tr_p1: h.tr_p1[k],
            tr_p2: h.tr_p2[k],
        })
        .collect()
}
