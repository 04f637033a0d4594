//! Trajectory sources: the seeded noisy-sine generator and CSV persistence.
//!
//! CSV layout (UTF-8, `.` decimal separator, LF line endings):
//!
//! ```text
//! step,t,truth,measurement[,extra columns...]
//! ```
//!
//! `truth` cells may be empty (recorded data). Only `measurement` is
//! mandatory on load; `step` and `t` are optional and unknown columns are
//! ignored, so run reports (which append `pred_<name>` and `err_<name>`
//! columns) load back as trajectories. Numbers are written with 17
//! significant digits, which round-trips every `f64` exactly.
//!
//! The generator draws from `ChaCha8Rng::seed_from_u64(seed)` (rand_chacha
//! 0.9) through `rand_distr::StandardNormal` (ziggurat, rand_distr 0.5),
//! scaled by the noise standard deviation. Both are fully specified,
//! platform-independent algorithms.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bench::RunReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub source: String,
    pub seed: Option<u64>,
    /// Generator parameters as `(name, value)` pairs.
    pub params: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Seconds per sample, when known.
    pub sample_period: Option<f64>,
    pub truth: Option<Vec<f64>>,
    pub measurement: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(
        sample_period: Option<f64>,
        truth: Option<Vec<f64>>,
        measurement: Vec<f64>,
        meta: TrajectoryMeta,
    ) -> Result<Self> {
        if measurement.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        if let Some(truth) = &truth {
            if truth.len() != measurement.len() {
                return Err(Error::dim("truth series", measurement.len(), truth.len()));
            }
        }
        Ok(Trajectory {
            sample_period,
            truth,
            measurement,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.measurement.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurement.is_empty()
    }

    /// Error reference: truth when present, the measurements otherwise.
    pub fn reference(&self) -> &[f64] {
        self.truth.as_deref().unwrap_or(&self.measurement)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineParams {
    pub amplitude: f64,
    pub period_s: f64,
    pub rate_hz: f64,
    pub steps: usize,
    pub noise_var: f64,
    pub seed: u64,
}

impl Default for SineParams {
    /// 1 s sine of amplitude 10 sampled at 200 Hz with unit measurement
    /// noise, 10 000 samples.
    fn default() -> Self {
        SineParams {
            amplitude: 10.0,
            period_s: 1.0,
            rate_hz: 200.0,
            steps: 10_000,
            noise_var: 1.0,
            seed: 1,
        }
    }
}

impl SineParams {
    /// Angular frequency of the generated sine, rad/s.
    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.period_s
    }
}

/// `truth_i = A sin(2π i / (rate · period))`, `measurement_i = truth_i + ε_i`
/// with `ε_i ~ N(0, noise_var)`.
pub fn gen_sine(params: &SineParams) -> Result<Trajectory> {
    let SineParams {
        amplitude,
        period_s,
        rate_hz,
        steps,
        noise_var,
        seed,
    } = *params;
    for (name, v) in [("amplitude", amplitude), ("period_s", period_s), ("rate_hz", rate_hz)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise_var must be non-negative, got {noise_var}"
        )));
    }
    if steps == 0 {
        return Err(Error::EmptyTrajectory);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = noise_var.sqrt();
    let samples_per_period = rate_hz * period_s;
    let truth: Vec<f64> = (0..steps)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * i as f64 / samples_per_period).sin())
        .collect();
    let measurement = truth
        .iter()
        .map(|t| {
            let eps: f64 = rng.sample(StandardNormal);
            t + sigma * eps
        })
        .collect();
    let meta = TrajectoryMeta {
        source: "sine".into(),
        seed: Some(seed),
        params: vec![
            ("amplitude".into(), amplitude.to_string()),
            ("period_s".into(), period_s.to_string()),
            ("rate_hz".into(), rate_hz.to_string()),
            ("steps".into(), steps.to_string()),
            ("noise_var".into(), noise_var.to_string()),
        ],
    };
    Trajectory::new(Some(1.0 / rate_hz), Some(truth), measurement, meta)
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Extra numeric column appended after the trajectory columns.
pub struct Column {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

/// Writes the trajectory (and any extra columns) in the CSV layout above.
pub fn write_csv<W: Write>(out: W, traj: &Trajectory, extra: &[Column]) -> Result<()> {
    let mut w = BufWriter::new(out);
    let mut header = String::from("step,t,truth,measurement");
    for col in extra {
        if col.values.len() != traj.len() {
            return Err(Error::dim("report column", traj.len(), col.values.len()));
        }
        header.push(',');
        header.push_str(&col.name);
    }
    writeln!(w, "{header}")?;
    let period = traj.sample_period;
    let mut line = String::new();
    for i in 0..traj.len() {
        line.clear();
        line.push_str(&i.to_string());
        line.push(',');
        line.push_str(&fmt_opt(period.map(|p| i as f64 * p)));
        line.push(',');
        line.push_str(&fmt_opt(traj.truth.as_ref().map(|t| t[i])));
        line.push(',');
        line.push_str(&fmt_f64(traj.measurement[i]));
        for col in extra {
            line.push(',');
            line.push_str(&fmt_opt(col.values[i]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_csv(File::create(path)?, traj, &[])
}

/// Writes a report's trajectory together with one `pred_<name>` and one
/// `err_<name>` column per estimator. Timings are not part of the CSV.
pub fn save_run(path: &Path, report: &RunReport) -> Result<()> {
    write_csv(File::create(path)?, &report.trajectory()?, &report.csv_columns())
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let mut traj = parse_trajectory(&text)?;
    traj.meta.source = path.display().to_string();
    Ok(traj)
}

fn csv_line(err: &csv::Error) -> usize {
    err.position().map(|p| p.line() as usize).unwrap_or(0)
}

/// Parses CSV text in the layout above.
pub fn parse_trajectory(text: &str) -> Result<Trajectory> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: csv_line(&e),
            msg: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let meas_col = find("measurement").ok_or_else(|| Error::Parse {
        line: 1,
        msg: "missing column `measurement`".into(),
    })?;
    let truth_col = find("truth");
    let t_col = find("t");

    let mut measurement = Vec::new();
    let mut truth: Vec<Option<f64>> = Vec::new();
    let mut times = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: csv_line(&e),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = |col: usize| -> Result<Option<f64>> {
            let raw = record.get(col).unwrap_or("").trim();
            if raw.is_empty() {
                return Ok(None);
            }
            raw.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric cell {raw:?} in column `{}`", &headers[col]),
            })
        };
        let m = cell(meas_col)?.ok_or_else(|| Error::Parse {
            line,
            msg: "empty measurement cell".into(),
        })?;
        measurement.push(m);
        if let Some(c) = truth_col {
            truth.push(cell(c)?);
        }
        if let Some(c) = t_col {
            times.push(cell(c)?);
        }
    }
    if measurement.is_empty() {
        return Err(Error::EmptyTrajectory);
    }

    let truth = if truth.iter().all(Option::is_none) {
        None
    } else if truth.iter().all(Option::is_some) {
        Some(truth.into_iter().flatten().collect())
    } else {
        let first_gap = truth.iter().position(Option::is_none).unwrap_or(0);
        return Err(Error::Parse {
            line: first_gap + 2,
            msg: "truth column is only partially filled".into(),
        });
    };

    let sample_period = match (times.first().copied().flatten(), times.last().copied().flatten()) {
        (Some(t0), Some(t1)) if times.len() >= 2 && t1 > t0 => {
            Some((t1 - t0) / (times.len() - 1) as f64)
        }
        _ => None,
    };

    Trajectory::new(
        sample_period,
        truth,
        measurement,
        TrajectoryMeta {
            source: "csv".into(),
            seed: None,
            params: Vec::new(),
        },
    )
}
