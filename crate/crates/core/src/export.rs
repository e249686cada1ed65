//! CSV tables and line-delimited JSON records.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which
//! round-trips every binary64 value, so outputs are bit-stable for a seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::montecarlo::{ExperimentConfig, ProbabilityEstimate, SweepAxis, SweepRow};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Header `t,x_1,...,x_n`, then one row per time step.
pub fn write_trajectory_csv<W: Write>(traj: &TrajectoryRecord, mut out: W) -> std::io::Result<()> {
    let n = traj.params.n;
    let Some(states) = traj.states() else {
        return Err(std::io::Error::other("trajectory CSV needs a full record"));
    };
    write!(out, "t")?;
    for i in 1..=n {
        write!(out, ",x_{i}")?;
    }
    writeln!(out)?;
    for (k, row) in states.chunks(n).enumerate() {
        write!(out, "{}", traj.initial.time + k as u64)?;
        for &v in row {
            write!(out, ",{}", fmt_f64(v))?;
        }
        writeln!(out)?;
    }
    out.flush()
}

pub fn save_trajectory_csv(traj: &TrajectoryRecord, path: &Path) -> Result<()> {
    if !traj.is_full() {
        return Err(Error::UnsupportedRecordingMode);
    }
    write_trajectory_csv(traj, create(path)?).map_err(io_at(path))
}

/// Header `<axis>,trials,fluct_rate,ci_lo,ci_hi,undetermined`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], axis: SweepAxis, mut out: W) -> std::io::Result<()> {
    let name = match axis {
        SweepAxis::Eta => "eta",
        SweepAxis::Delta => "delta",
    };
    writeln!(out, "{name},trials,fluct_rate,ci_lo,ci_hi,undetermined")?;
    for r in rows {
        let e = &r.fluctuation;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(r.value),
            e.trials,
            fmt_f64(e.point),
            fmt_f64(e.lower),
            fmt_f64(e.upper),
            e.undetermined
        )?;
    }
    out.flush()
}

pub fn save_sweep_csv(rows: &[SweepRow], axis: SweepAxis, path: &Path) -> Result<()> {
    write_sweep_csv(rows, axis, create(path)?).map_err(io_at(path))
}

/// One JSON document per line.
pub fn write_estimates_csv<W: Write>(rows: &[ProbabilityEstimate], mut out: W) -> std::io::Result<()> {
    writeln!(out, "event,trials,successes,failures,undetermined,point,ci_lo,ci_hi")?;
    for e in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.event,
            e.trials,
            e.successes,
            e.failures,
            e.undetermined,
            fmt_f64(e.point),
            fmt_f64(e.lower),
            fmt_f64(e.upper)
        )?;
    }
    out.flush()
}

pub fn save_estimates_csv(rows: &[ProbabilityEstimate], path: &Path) -> Result<()> {
    write_estimates_csv(rows, create(path)?).map_err(io_at(path))
}

pub fn save_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| Error::io(path, e.into()))?;
        writeln!(out).map_err(io_at(path))?;
    }
    out.flush().map_err(io_at(path))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Provenance record written next to every output set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub master_seed: u64,
    pub config: Option<ExperimentConfig>,
    /// Wall-clock start and end, seconds since the Unix epoch.
    pub started: f64,
    pub finished: Option<f64>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(command: &str, master_seed: u64, config: Option<ExperimentConfig>) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            config,
            started: unix_now(),
            finished: None,
            outputs: Vec::new(),
        }
    }

    pub fn record_output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Stamps the end time and appends the manifest as one JSON line.
    pub fn finish(mut self, path: &Path) -> Result<Self> {
        self.finished = Some(unix_now());
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_at(path))?;
        let line = serde_json::to_string(&self).map_err(|e| Error::io(path, e.into()))?;
        writeln!(file, "{line}").map_err(io_at(path))?;
        Ok(self)
    }
}
