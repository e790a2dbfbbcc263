//! Plot-ready CSVs, one per figure, plus a matplotlib script that renders
//! every CSV present in a run directory.

use std::path::Path;

use qcal_core::bayes::TraceRecord;
use qcal_core::units::to_mhz;
use serde::{Deserialize, Serialize};

use crate::calib::{EnergySweep, EnvSweep};
use crate::io::{write_csv, Header};
use crate::track::{Fig3aRow, Fig3bRow, Fig3cRow, HistogramRow};
use crate::{QcalError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    /// Window-averaged measurement record of one trajectory.
    RecordAverage,
    /// True state against the ROSE estimate.
    Tracking,
    /// Pure evolution against the mean PSE reconstruction.
    Reconstruction,
    /// Final tracking-error histogram.
    ErrorHistogram,
    /// Fidelity per calibration evaluation.
    CalibrationTrace,
    /// Relative fidelity error against frequency mismatch.
    EnergySweep,
    /// Relative fidelity error against bath coupling.
    EnvSweep,
}

impl Figure {
    pub const ALL: [Figure; 7] = [
        Figure::RecordAverage,
        Figure::Tracking,
        Figure::Reconstruction,
        Figure::ErrorHistogram,
        Figure::CalibrationTrace,
        Figure::EnergySweep,
        Figure::EnvSweep,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Figure::RecordAverage => "fig3a.csv",
            Figure::Tracking => "fig3b.csv",
            Figure::Reconstruction => "fig3c.csv",
            Figure::ErrorHistogram => "fig4_hist.csv",
            Figure::CalibrationTrace => "fig5_trace.csv",
            Figure::EnergySweep => "fig6.csv",
            Figure::EnvSweep => "fig7.csv",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Figure::RecordAverage => &["t", "dy_over_dt"],
            Figure::Tracking => &["t", "x", "y", "z", "x_hat", "y_hat", "z_hat"],
            Figure::Reconstruction => &["t", "x_pure", "y_pure", "z_pure", "x0_mean", "y0_mean", "z0_mean"],
            Figure::ErrorHistogram => &["bin_left", "bin_right", "count"],
            Figure::CalibrationTrace => &["iter", "alpha_s", "phi", "fidelity"],
            Figure::EnergySweep => &["detuning_mhz", "error_drive1", "error_drive2"],
            Figure::EnvSweep => &["r", "error"],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub alpha_s: f64,
    /// Phase-ramp parameter in MHz.
    pub phi: f64,
    /// Empty for failed evaluations.
    pub fidelity: Option<f64>,
}

pub fn trace_rows(trace: &[TraceRecord]) -> Vec<TraceRow> {
    trace
        .iter()
        .map(|r| TraceRow {
            iter: r.iter,
            alpha_s: r.theta[0],
            phi: to_mhz(r.theta[1]),
            fidelity: r.f,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub detuning_mhz: f64,
    pub error_drive1: f64,
    pub error_drive2: Option<f64>,
}

/// First two drives only; a single-drive sweep leaves the second column empty.
pub fn energy_rows(s: &EnergySweep) -> Vec<EnergyRow> {
    s.detunings_mhz
        .iter()
        .zip(&s.points)
        .map(|(&d, p)| EnergyRow {
            detuning_mhz: d,
            error_drive1: p[0].error(s.metric),
            error_drive2: p.get(1).map(|q| q.error(s.metric)),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvRow {
    pub r: f64,
    pub error: f64,
}

pub fn env_rows(s: &EnvSweep) -> Vec<EnvRow> {
    s.points
        .iter()
        .map(|p| EnvRow {
            r: p.r,
            error: p.fidelities.error(s.metric),
        })
        .collect()
}

/// Series a run produced; each command fills the ones it computes.
#[derive(Clone, Debug, Default)]
pub struct PlotData {
    pub record_average: Option<Vec<Fig3aRow>>,
    pub tracking: Option<Vec<Fig3bRow>>,
    pub reconstruction: Option<Vec<Fig3cRow>>,
    pub error_histogram: Option<Vec<HistogramRow>>,
    pub calibration_trace: Option<Vec<TraceRow>>,
    pub energy_sweep: Option<Vec<EnergyRow>>,
    pub env_sweep: Option<Vec<EnvRow>>,
}

impl PlotData {
    pub fn has(&self, which: Figure) -> bool {
        match which {
            Figure::RecordAverage => self.record_average.is_some(),
            Figure::Tracking => self.tracking.is_some(),
            Figure::Reconstruction => self.reconstruction.is_some(),
            Figure::ErrorHistogram => self.error_histogram.is_some(),
            Figure::CalibrationTrace => self.calibration_trace.is_some(),
            Figure::EnergySweep => self.energy_sweep.is_some(),
            Figure::EnvSweep => self.env_sweep.is_some(),
        }
    }

    pub fn available(&self) -> Vec<Figure> {
        Figure::ALL.into_iter().filter(|&f| self.has(f)).collect()
    }

    /// Writes one figure CSV into `dir`; a missing series is an error naming
    /// the series that are present.
    pub fn emit(&self, dir: &Path, header: &Header, which: Figure) -> Result<()> {
        let path = dir.join(which.file_name());
        let missing = || {
            let have: Vec<&str> = self.available().iter().map(|f| f.file_name()).collect();
            QcalError::Runtime(format!(
                "no data for {}; this run contains: {}",
                which.file_name(),
                if have.is_empty() {
                    "nothing".to_string()
                } else {
                    have.join(", ")
                }
            ))
        };
        match which {
            Figure::RecordAverage => write_csv(&path, header, self.record_average.as_ref().ok_or_else(missing)?),
            Figure::Tracking => write_csv(&path, header, self.tracking.as_ref().ok_or_else(missing)?),
            Figure::Reconstruction => write_csv(&path, header, self.reconstruction.as_ref().ok_or_else(missing)?),
            Figure::ErrorHistogram => write_csv(&path, header, self.error_histogram.as_ref().ok_or_else(missing)?),
            Figure::CalibrationTrace => write_csv(&path, header, self.calibration_trace.as_ref().ok_or_else(missing)?),
            Figure::EnergySweep => write_csv(&path, header, self.energy_sweep.as_ref().ok_or_else(missing)?),
            Figure::EnvSweep => write_csv(&path, header, self.env_sweep.as_ref().ok_or_else(missing)?),
        }
    }

    /// Every present series plus the plotting script.
    pub fn emit_all(&self, dir: &Path, header: &Header) -> Result<()> {
        for f in self.available() {
            self.emit(dir, header, f)?;
        }
        write_plot_script(dir)
    }
}

const SCRIPT: &str = r##"#!/usr/bin/env python3
"""Render the qcal figure CSVs found in a run directory (default: here)."""
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

d = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))


def load(name):
    p = os.path.join(d, name)
    return pd.read_csv(p, comment="#") if os.path.exists(p) else None


def save(fig, name):
    fig.tight_layout()
    fig.savefig(os.path.join(d, name), dpi=150)
    plt.close(fig)


t = load("fig3a.csv")
if t is not None:
    fig, ax = plt.subplots()
    ax.plot(t.t, t.dy_over_dt, lw=0.8)
    ax.set(xlabel="t (ns)", ylabel="dY/dt")
    save(fig, "fig3a.png")

t = load("fig3b.csv")
if t is not None:
    fig, ax = plt.subplots()
    for c, col in zip("xyz", ("C0", "C1", "C2")):
        ax.plot(t.t, t[c], color=col, label=c)
        ax.plot(t.t, t[c + "_hat"], color=col, ls="--", label=c + " est")
    ax.set(xlabel="t (ns)", ylabel="Bloch component")
    ax.legend()
    save(fig, "fig3b.png")

t = load("fig3c.csv")
if t is not None:
    fig, ax = plt.subplots()
    for c, col in zip("xyz", ("C0", "C1", "C2")):
        ax.plot(t.t, t[c + "_pure"], color=col, label=c + " pure")
        ax.plot(t.t, t[c + "0_mean"], color=col, ls="--", label=c + " PSE")
    ax.set(xlabel="t (ns)", ylabel="Bloch component")
    ax.legend()
    save(fig, "fig3c.png")

t = load("fig4_hist.csv")
if t is not None:
    fig, ax = plt.subplots()
    ax.bar(t.bin_left, t["count"], width=t.bin_right - t.bin_left, align="edge")
    ax.set(xlabel="|z - z_hat|", ylabel="trajectories")
    save(fig, "fig4.png")

t = load("fig5_trace.csv")
if t is not None:
    fig, ax = plt.subplots()
    ax.plot(t.iter, t.fidelity, "o-")
    ax.set(xlabel="evaluation", ylabel="fidelity")
    save(fig, "fig5.png")

t = load("fig6.csv")
if t is not None:
    fig, ax = plt.subplots()
    ax.plot(t.detuning_mhz, 100 * t.error_drive1, label="drive 1")
    if t.error_drive2.notna().any():
        ax.plot(t.detuning_mhz, 100 * t.error_drive2, label="drive 2")
    ax.set(xlabel="detuning (MHz)", ylabel="relative error (%)")
    ax.legend()
    save(fig, "fig6.png")

t = load("fig7.csv")
if t is not None:
    fig, ax = plt.subplots()
    ax.plot(t.r, 100 * t.error, "o-")
    ax.set(xlabel="r", ylabel="relative error (%)")
    save(fig, "fig7.png")
"##;

/// Writes `plot_figures.py` next to the CSVs.
pub fn write_plot_script(dir: &Path) -> Result<()> {
    std::fs::write(dir.join("plot_figures.py"), SCRIPT)?;
    Ok(())
}
