//! Runs an estimator roster over one trajectory.

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EstimatorSpec, ExperimentConfig, Metric, TrajectorySource};
use super::predictor::{build_predictor, BuildContext};
use crate::error::{Error, Result};
use crate::linalg::{eigen_floor_holds, max_asymmetry};
use crate::signals::{gen_sine, load_trajectory, Trajectory, TrajectoryMeta};

/// A healthy covariance has no eigenvalue below `-EIGEN_FLOOR`.
pub const EIGEN_FLOOR: f64 = 1e-9;

/// Per-step covariance health, accumulated over a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovarianceHealth {
    pub steps_checked: usize,
    pub max_asymmetry: f64,
    /// Steps whose covariance had an eigenvalue below `-EIGEN_FLOOR`.
    pub floor_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub name: String,
    /// `predictions[i]` is the forecast issued after measurement `i`
    /// (for target step `i + horizon`).
    pub predictions: Vec<Option<f64>>,
    /// Signed error `p̂_{j|j-a} - ref_j`, indexed by target step `j`. Empty
    /// during warmup and before the first forecast lands.
    pub errors: Vec<Option<f64>>,
    /// Accumulated error per configured window.
    pub accumulated: Vec<Option<f64>>,
    /// Wall-clock seconds spent inside the per-step updates.
    pub seconds: f64,
    pub failure: Option<String>,
    pub covariance: Option<CovarianceHealth>,
}

impl EstimatorReport {
    /// Forecasts shifted onto their target steps.
    pub fn aligned_predictions(&self, horizon: usize) -> Vec<Option<f64>> {
        let n = self.predictions.len();
        (0..n)
            .map(|j| j.checked_sub(horizon).and_then(|i| self.predictions[i]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub horizon: usize,
    pub warmup: usize,
    pub metric: Metric,
    pub windows: Vec<(usize, usize)>,
    pub sample_period: Option<f64>,
    pub trajectory_meta: TrajectoryMeta,
    pub truth: Option<Vec<f64>>,
    pub measurement: Vec<f64>,
    pub estimators: Vec<EstimatorReport>,
}

impl RunReport {
    pub fn trajectory(&self) -> Result<Trajectory> {
        Trajectory::new(
            self.sample_period,
            self.truth.clone(),
            self.measurement.clone(),
            self.trajectory_meta.clone(),
        )
    }

    pub fn estimator(&self, name: &str) -> Option<&EstimatorReport> {
        self.estimators.iter().find(|e| e.name == name)
    }

    pub fn any_failure(&self) -> bool {
        self.estimators.iter().any(|e| e.failure.is_some())
    }

    /// Accumulated error of `name` over window `index`.
    pub fn accumulated(&self, name: &str, index: usize) -> Option<f64> {
        self.estimator(name)
            .and_then(|e| e.accumulated.get(index).copied().flatten())
    }
}

/// `Σ |pred_j - ref_j|` (or squared) over the 1-based inclusive window,
/// skipping steps without a prediction.
pub fn accumulated_error(
    pred: &[Option<f64>],
    reference: &[f64],
    window: (usize, usize),
    metric: Metric,
) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::dim("prediction series", reference.len(), pred.len()));
    }
    let (start, end) = window;
    if start == 0 || start > end || end > reference.len() {
        return Err(Error::InvalidParameter(format!(
            "window [{start}, {end}] is not inside 1..={}",
            reference.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for j in start - 1..end {
        if let Some(p) = pred[j] {
            let d = p - reference[j];
            total += match metric {
                Metric::AbsSum => d.abs(),
                Metric::SqSum => d * d,
            };
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidParameter(format!(
            "window [{start}, {end}] holds no predictions"
        )));
    }
    Ok(total)
}

/// Loads or generates the trajectory a config describes.
pub fn load_config_trajectory(config: &ExperimentConfig, seed: u64) -> Result<Trajectory> {
    match &config.trajectory {
        TrajectorySource::Sine { .. } => {
            gen_sine(&config.trajectory.sine_params(seed).expect("sine source"))
        }
        TrajectorySource::Csv {
            path,
            sample_period_s,
        } => {
            let mut traj = load_trajectory(path)?;
            if let Some(t) = sample_period_s {
                traj.sample_period = Some(*t);
            }
            Ok(traj)
        }
    }
}

/// 64-bit FNV-1a, used to give each estimator its own RNG stream keyed by
/// name, so adding or removing roster entries leaves the others unchanged.
fn name_stream(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn estimator_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(name_stream(name));
    rng
}

struct RunContext<'a> {
    traj: &'a Trajectory,
    build: BuildContext,
    warmup: usize,
    metric: Metric,
    windows: &'a [(usize, usize)],
    check_covariance: bool,
    seed: u64,
}

fn run_estimator(spec: &EstimatorSpec, ctx: &RunContext<'_>) -> Result<EstimatorReport> {
    let mut predictor = build_predictor(spec, &ctx.build, estimator_rng(ctx.seed, &spec.name))?;
    let n = ctx.traj.len();
    let horizon = ctx.build.horizon;
    let mut predictions = vec![None; n];
    let mut health = ctx.check_covariance.then(CovarianceHealth::default);
    let mut seconds = 0.0;
    let mut failure = None;

    for (i, &z) in ctx.traj.measurement.iter().enumerate() {
        let start = Instant::now();
        let out = predictor.step(z);
        seconds += start.elapsed().as_secs_f64();
        match out {
            Ok(p) => predictions[i] = Some(p),
            Err(e) => {
                failure = Some(format!("step {i}: {e}"));
                break;
            }
        }
        if let (Some(h), Some(cov)) = (health.as_mut(), predictor.covariance()) {
            h.steps_checked += 1;
            let scale = cov.abs().max().max(1.0);
            h.max_asymmetry = h.max_asymmetry.max(max_asymmetry(cov) / scale);
            if !eigen_floor_holds(cov, EIGEN_FLOOR) {
                h.floor_violations += 1;
            }
        }
    }
    let health = health.filter(|h| h.steps_checked > 0);

    let reference = ctx.traj.reference();
    // forecasts on their target steps, warmup forecasts dropped
    let landed: Vec<Option<f64>> = (0..n)
        .map(|j| {
            let i = j.checked_sub(horizon).filter(|&i| i >= ctx.warmup)?;
            predictions[i]
        })
        .collect();
    let errors = landed
        .iter()
        .zip(reference)
        .map(|(p, r)| p.map(|p| p - r))
        .collect();
    let accumulated = ctx
        .windows
        .iter()
        .map(|&w| accumulated_error(&landed, reference, w, ctx.metric).ok())
        .collect();

    Ok(EstimatorReport {
        name: spec.name.clone(),
        predictions,
        errors,
        accumulated,
        seconds,
        failure,
        covariance: health,
    })
}

/// Runs every estimator of `config` on the trajectory for `seed`.
///
/// Configuration problems are returned as errors; an estimator that fails
/// numerically is recorded in its report entry and the rest still run.
/// `parallel` runs estimators on the rayon pool; it changes timings only.
pub fn run_experiment(config: &ExperimentConfig, seed: u64, parallel: bool) -> Result<RunReport> {
    config.validate_static()?;
    let traj = load_config_trajectory(config, seed)?;
    run_on_trajectory(config, &traj, seed, parallel)
}

/// [`run_experiment`] on an already loaded trajectory.
pub fn run_on_trajectory(
    config: &ExperimentConfig,
    traj: &Trajectory,
    seed: u64,
    parallel: bool,
) -> Result<RunReport> {
    config.validate_static()?;
    config.validate_for_length(traj.len())?;
    let sample_period = traj.sample_period.ok_or_else(|| {
        Error::Config(
            "trajectory has no time column; set trajectory.sample_period_s".into(),
        )
    })?;
    let ctx = RunContext {
        traj,
        build: BuildContext {
            horizon: config.horizon,
            sample_period,
            sine_omega: config.trajectory.sine_params(seed).map(|p| p.omega()),
        },
        warmup: config.warmup(),
        metric: config.metric,
        windows: &config.windows,
        check_covariance: config.check_covariance,
        seed,
    };
    let estimators: Vec<EstimatorReport> = if parallel {
        config
            .estimators
            .par_iter()
            .map(|s| run_estimator(s, &ctx))
            .collect::<Result<_>>()?
    } else {
        config
            .estimators
            .iter()
            .map(|s| run_estimator(s, &ctx))
            .collect::<Result<_>>()?
    };
    Ok(RunReport {
        seed,
        horizon: config.horizon,
        warmup: ctx.warmup,
        metric: config.metric,
        windows: config.windows.clone(),
        sample_period: traj.sample_period,
        trajectory_meta: traj.meta.clone(),
        truth: traj.truth.clone(),
        measurement: traj.measurement.clone(),
        estimators,
    })
}

/// Runs every configured seed.
pub fn run_all(config: &ExperimentConfig, parallel: bool) -> Result<Vec<RunReport>> {
    config
        .seeds
        .iter()
        .map(|&seed| run_experiment(config, seed, parallel))
        .collect()
}

/// Where the per-seed CSV of a run goes inside `out_dir`.
pub fn run_csv_path(out_dir: &std::path::Path, seed: u64) -> PathBuf {
    out_dir.join(format!("run_seed{seed}.csv"))
}
