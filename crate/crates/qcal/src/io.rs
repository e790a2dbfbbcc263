//! File formats. Every file starts with provenance (tool version, config
//! hash, root seed); nothing time-dependent is written, so re-running a
//! command with the same inputs reproduces every file byte for byte.
//!
//! * CSV: a `# qcal ...` comment line, then a header row and data.
//! * JSON: `{"qcal": {...}, "data": ...}`.
//! * JSON lines: the provenance object on the first line, one record per line
//!   after it.
//! * Binary trajectory dump: the comment line, then little-endian fields
//!   (see [`write_record_binary`]).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use qcal_core::bayes::TraceRecord;
use qcal_core::dynamics::{BlochState, TrajectoryRecord};
use qcal_core::rng::StreamSeed;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{QcalError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Header {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Header {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seed,
        }
    }

    pub fn comment(&self) -> String {
        format!(
            "# qcal {} config_hash={} seed={}",
            self.version, self.config_hash, self.seed
        )
    }
}

/// Writes serializable rows under the comment line; columns are the field
/// names of `T`.
pub fn write_csv<T: Serialize>(path: &Path, header: &Header, rows: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header.comment())?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows back, skipping the comment line.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

#[derive(Serialize)]
struct Wrapped<'a, T> {
    qcal: &'a Header,
    data: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, header: &Header, data: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &Wrapped { qcal: header, data })?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct Unwrapped<T> {
    #[allow(dead_code)]
    qcal: Header,
    data: T,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let w: Unwrapped<T> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    Ok(w.data)
}

/// Optimization trace as JSON lines.
pub fn write_trace(path: &Path, header: &Header, trace: &[TraceRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &serde_json::json!({ "qcal": header }))?;
    writeln!(out)?;
    for r in trace {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace`]; the provenance line is skipped.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (k == 0 && line.starts_with("{\"qcal\"")) {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| QcalError::Config(format!("trace line {}: {e}", k + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

const MAGIC: &[u8; 8] = b"QCALTRJ1";

/// Binary trajectory dump: the comment line and `\n`, then `QCALTRJ1`,
/// `u64` step count `n`, `f64` dt, `u64` seed root and stream, `n + 1` rows
/// of `f64` `(t, x, y, z)`, a `u8` flag for the presence of `dy`, and `n`
/// `f64` increments if present. All little endian.
pub fn write_record_binary(path: &Path, header: &Header, rec: &TrajectoryRecord) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header.comment())?;
    out.write_all(MAGIC)?;
    let n = rec.states.len().saturating_sub(1) as u64;
    out.write_all(&n.to_le_bytes())?;
    out.write_all(&rec.dt.to_le_bytes())?;
    out.write_all(&rec.seed.root.to_le_bytes())?;
    out.write_all(&rec.seed.stream.to_le_bytes())?;
    for (t, s) in rec.times.iter().zip(&rec.states) {
        for v in [*t, s.x, s.y, s.z] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    match &rec.dy {
        Some(dy) => {
            out.write_all(&[1])?;
            for v in dy {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        None => out.write_all(&[0])?,
    }
    out.flush()?;
    Ok(())
}

/// Binary dump contents; Wiener increments are not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryRecord {
    pub header_line: String,
    pub dt: f64,
    pub seed: StreamSeed,
    pub times: Vec<f64>,
    pub states: Vec<BlochState>,
    pub dy: Option<Vec<f64>>,
}

pub fn read_record_binary(path: &Path) -> Result<BinaryRecord> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = || QcalError::Runtime(format!("{} is not a qcal trajectory dump", path.display()));
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(bad)?;
    let header_line = String::from_utf8(bytes[..nl].to_vec()).map_err(|_| bad())?;
    let mut rest = &bytes[nl + 1..];
    let mut take = |k: usize| -> Result<&[u8]> {
        if rest.len() < k {
            return Err(bad());
        }
        let (a, b) = rest.split_at(k);
        rest = b;
        Ok(a)
    };
    if take(8)? != MAGIC {
        return Err(bad());
    }
    let u = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
    let f = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
    let n = u(take(8)?) as usize;
    let dt = f(take(8)?);
    let seed = StreamSeed::new(u(take(8)?), u(take(8)?));
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        let row = take(32)?;
        times.push(f(&row[..8]));
        states.push(BlochState::new(f(&row[8..16]), f(&row[16..24]), f(&row[24..32])));
    }
    let dy = match take(1)?[0] {
        0 => None,
        _ => Some((0..n).map(|_| take(8).map(f)).collect::<Result<Vec<f64>>>()?),
    };
    Ok(BinaryRecord {
        header_line,
        dt,
        seed,
        times,
        states,
        dy,
    })
}

#[derive(Serialize, Deserialize)]
pub struct RecordRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Increment over `[t, t + dt]`; empty on the last row.
    pub dy: Option<f64>,
}

/// Trajectory CSV with columns `t, x, y, z, dy`.
pub fn write_record_csv(path: &Path, header: &Header, rec: &TrajectoryRecord) -> Result<()> {
    let rows: Vec<RecordRow> = rec
        .times
        .iter()
        .zip(&rec.states)
        .enumerate()
        .map(|(k, (&t, s))| RecordRow {
            t,
            x: s.x,
            y: s.y,
            z: s.z,
            dy: rec.dy.as_ref().and_then(|d| d.get(k).copied()),
        })
        .collect();
    write_csv(path, header, &rows)
}
