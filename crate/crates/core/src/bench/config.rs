//! Experiment configuration, read from TOML.
//!
//! ```toml
//! horizon = 3
//! metric = "abs_sum"                     # or "sq_sum"
//! windows = [[1, 10000], [8000, 10000]]  # 1-based inclusive target steps
//! seeds = [1, 2, 3]
//! # warmup = 25                          # default max(horizon, widest network input)
//! # check_covariance = true              # symmetry / eigenvalue-floor checks per step
//!
//! [trajectory]
//! kind = "sine"                          # or "csv" with path = "..." [, sample_period_s = 0.005]
//! amplitude = 10.0
//! period_s = 1.0
//! rate_hz = 200.0
//! steps = 10000
//! noise_var = 1.0
//!
//! [[estimator]]
//! name = "UAM-LKE"
//! type = "uam"                           # uam | sine | stack | nnssm
//! order = 3
//! backend = "lke"                        # lke | eke | uke | pe (model dependent)
//!
//! [[estimator]]
//! name = "NNSSE-UKE"
//! type = "nnssm"
//! backend = "uke"
//! network = "weighted_sum"               # or "mlp" with layers = [5, 5, 1], activation = "tanh"
//! inputs = 25
//! ```
//!
//! Every noise and spread parameter has a default and may be overridden per
//! estimator: `r`, `q` / `pi0` (baselines), `q_position`, `q_weight`,
//! `pi0_position`, `pi0_weight`, `weight_init`, `particles` and the
//! `[estimator.uke]` table (`alpha`, `beta`, `kappa`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::StackKind;
use crate::error::{Error, Result};
use crate::estimators::UkeParams;
use crate::model::{Activation, Topology, TopologyKind};
use crate::signals::SineParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Σ |pred - ref|
    #[default]
    AbsSum,
    /// Σ (pred - ref)²
    SqSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectorySource {
    Sine {
        #[serde(default = "d_amplitude")]
        amplitude: f64,
        #[serde(default = "d_period")]
        period_s: f64,
        #[serde(default = "d_rate")]
        rate_hz: f64,
        #[serde(default = "d_steps")]
        steps: usize,
        #[serde(default = "d_one")]
        noise_var: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        sample_period_s: Option<f64>,
    },
}

impl TrajectorySource {
    pub fn sine_params(&self, seed: u64) -> Option<SineParams> {
        match *self {
            TrajectorySource::Sine {
                amplitude,
                period_s,
                rate_hz,
                steps,
                noise_var,
            } => Some(SineParams {
                amplitude,
                period_s,
                rate_hz,
                steps,
                noise_var,
                seed,
            }),
            TrajectorySource::Csv { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Lke,
    Eke,
    Uke,
    Pe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackMode {
    /// Stack transition inside a linear Kalman correction loop.
    Kalman,
    /// Deterministic iteration on the raw measurements.
    #[default]
    OpenLoop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EstimatorKind {
    Uam {
        order: usize,
        #[serde(default)]
        backend: Backend,
        /// Per-state process variances; defaults to [`default_uam_q`].
        #[serde(default)]
        q: Option<Vec<f64>>,
        #[serde(default)]
        pi0: Option<Vec<f64>>,
        #[serde(default = "d_one")]
        r: f64,
        #[serde(default)]
        uke: UkeParams,
    },
    Sine {
        /// Angular frequency; taken from the sine generator when omitted.
        #[serde(default)]
        omega: Option<f64>,
        #[serde(default)]
        backend: Backend,
        #[serde(default = "d_sine_q")]
        q: f64,
        #[serde(default = "d_sine_pi0")]
        pi0: f64,
        #[serde(default = "d_one")]
        r: f64,
        #[serde(default)]
        uke: UkeParams,
    },
    Stack {
        stack: StackKind,
        #[serde(default)]
        mode: StackMode,
        #[serde(default = "d_stack_q")]
        q: f64,
        #[serde(default = "d_one")]
        pi0: f64,
        #[serde(default = "d_one")]
        r: f64,
    },
    Nnssm {
        backend: Backend,
        network: TopologyKind,
        /// Input width for `weighted_sum`.
        #[serde(default)]
        inputs: Option<usize>,
        /// Layer widths for `mlp`, input first, output (1) last.
        #[serde(default)]
        layers: Option<Vec<usize>>,
        #[serde(default)]
        activation: Activation,
        #[serde(default = "d_q_position")]
        q_position: f64,
        #[serde(default = "d_q_weight")]
        q_weight: f64,
        #[serde(default = "d_one")]
        pi0_position: f64,
        #[serde(default = "d_pi0_weight")]
        pi0_weight: f64,
        #[serde(default = "d_one")]
        r: f64,
        /// Half-width of the uniform MLP weight initialization.
        #[serde(default = "d_weight_init")]
        weight_init: f64,
        #[serde(default = "d_particles")]
        particles: usize,
        #[serde(default)]
        uke: UkeParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: EstimatorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub trajectory: TrajectorySource,
    pub horizon: usize,
    #[serde(default)]
    pub metric: Metric,
    pub windows: Vec<(usize, usize)>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub warmup: Option<usize>,
    #[serde(default)]
    pub check_covariance: bool,
    #[serde(rename = "estimator")]
    pub estimators: Vec<EstimatorSpec>,
}

fn d_amplitude() -> f64 {
    10.0
}
fn d_period() -> f64 {
    1.0
}
fn d_rate() -> f64 {
    200.0
}
fn d_steps() -> usize {
    10_000
}
fn d_one() -> f64 {
    1.0
}
fn d_sine_q() -> f64 {
    1e-4
}
fn d_sine_pi0() -> f64 {
    100.0
}
fn d_stack_q() -> f64 {
    1e-4
}
fn d_q_position() -> f64 {
    1e-4
}
fn d_q_weight() -> f64 {
    1e-6
}
fn d_pi0_weight() -> f64 {
    0.1
}
fn d_weight_init() -> f64 {
    0.1
}
fn d_particles() -> usize {
    1000
}
fn d_seeds() -> Vec<u64> {
    vec![1]
}

/// Default per-state process variances for the uniformly accelerated model
/// of the given order: only the highest derivative is driven. The values
/// minimize the steady-window error on the default noisy sine (unit noise,
/// 200 Hz, amplitude 10, 1 Hz).
pub fn default_uam_q(order: usize) -> Vec<f64> {
    const TOP: [f64; 4] = [1.0, 1e2, 1e4, 1e5];
    let mut q = vec![0.0; order];
    if let Some(last) = q.last_mut() {
        *last = TOP[order.clamp(1, 4) - 1];
    }
    q
}

/// Default initial variances for the uniformly accelerated model.
pub fn default_uam_pi0(order: usize) -> Vec<f64> {
    (0..order).map(|k| 10f64.powi(2 * k as i32)).collect()
}

impl EstimatorSpec {
    /// Input width the estimator needs before its forecasts are meaningful.
    pub fn input_width(&self) -> usize {
        match &self.kind {
            EstimatorKind::Nnssm {
                network,
                inputs,
                layers,
                ..
            } => match network {
                TopologyKind::WeightedSum => inputs.unwrap_or(0),
                TopologyKind::Mlp => layers.as_ref().and_then(|l| l.first().copied()).unwrap_or(0),
            },
            EstimatorKind::Stack { stack, .. } => stack.stack_len(),
            _ => 0,
        }
    }

    /// Builds the network topology of an `nnssm` estimator.
    pub fn topology(&self, horizon: usize, sample_period: f64) -> Result<Option<Topology>> {
        let EstimatorKind::Nnssm {
            network,
            inputs,
            layers,
            activation,
            ..
        } = &self.kind
        else {
            return Ok(None);
        };
        let topo = match network {
            TopologyKind::WeightedSum => {
                let b = inputs.ok_or_else(|| {
                    Error::Config(format!("{}: weighted_sum needs `inputs`", self.name))
                })?;
                if *activation != Activation::Identity {
                    return Err(Error::Config(format!(
                        "{}: weighted_sum has no hidden activation",
                        self.name
                    )));
                }
                Topology::weighted_sum(b, horizon, sample_period)
            }
            TopologyKind::Mlp => {
                let widths = layers.clone().ok_or_else(|| {
                    Error::Config(format!("{}: mlp needs `layers`", self.name))
                })?;
                Topology::mlp(widths, *activation, horizon, sample_period)
            }
        };
        topo.map(Some)
            .map_err(|e| Error::Config(format!("{}: {e}", self.name)))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate_static()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative trajectory paths resolve against the config file
        if let TrajectorySource::Csv { path: p, .. } = &mut cfg.trajectory {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks that do not need the trajectory.
    pub fn validate_static(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("estimator roster is empty".into()));
        }
        if self.windows.is_empty() {
            return Err(Error::Config("at least one error window is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        for &(start, end) in &self.windows {
            if start == 0 || start > end {
                return Err(Error::Config(format!("invalid window [{start}, {end}]")));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for spec in &self.estimators {
            if !names.insert(spec.name.as_str()) {
                return Err(Error::Config(format!("duplicate estimator name {:?}", spec.name)));
            }
            if spec.name.is_empty() || spec.name.contains(',') || spec.name.contains('"') {
                return Err(Error::Config(format!(
                    "estimator name {:?} must be non-empty without commas or quotes",
                    spec.name
                )));
            }
            spec.validate_backend()?;
        }
        Ok(())
    }

    /// Checks that need the trajectory length.
    pub fn validate_for_length(&self, len: usize) -> Result<()> {
        for &(start, end) in &self.windows {
            if end > len {
                return Err(Error::Config(format!(
                    "window [{start}, {end}] exceeds trajectory length {len}"
                )));
            }
        }
        Ok(())
    }

    pub fn warmup(&self) -> usize {
        self.warmup.unwrap_or_else(|| {
            let widest = self.estimators.iter().map(|e| e.input_width()).max().unwrap_or(0);
            self.horizon.max(widest)
        })
    }

    /// The ten-estimator simulation roster: kinematic baselines, the exact
    /// sine reference, weighted-sum networks under three back-ends and four
    /// MLP variants under the unscented back-end.
    pub fn table1() -> Self {
        let nnssm = |name: &str, backend: Backend, network: TopologyKind, layers: Option<Vec<usize>>, activation: Activation| EstimatorSpec {
            name: name.into(),
            kind: EstimatorKind::Nnssm {
                backend,
                network,
                inputs: if network == TopologyKind::WeightedSum { Some(25) } else { None },
                layers,
                activation,
                q_position: d_q_position(),
                q_weight: d_q_weight(),
                pi0_position: 1.0,
                pi0_weight: d_pi0_weight(),
                r: 1.0,
                weight_init: d_weight_init(),
                particles: d_particles(),
                uke: UkeParams::default(),
            },
        };
        let uam = |name: &str, backend: Backend| EstimatorSpec {
            name: name.into(),
            kind: EstimatorKind::Uam {
                order: 3,
                backend,
                q: None,
                pi0: None,
                r: 1.0,
                uke: UkeParams::default(),
            },
        };
        // a bootstrap cloud of 1000 particles cannot cover the default weight
        // prior; a narrow start with faster weight diffusion keeps it stable
        let pe_tuned = |mut spec: EstimatorSpec| {
            if let EstimatorKind::Nnssm { pi0_weight, q_weight, .. } = &mut spec.kind {
                *pi0_weight = 1e-3;
                *q_weight = 1e-5;
            }
            spec
        };
        let ws = TopologyKind::WeightedSum;
        let mlp = TopologyKind::Mlp;
        let id = Activation::Identity;
        ExperimentConfig {
            trajectory: TrajectorySource::Sine {
                amplitude: 10.0,
                period_s: 1.0,
                rate_hz: 200.0,
                steps: 10_000,
                noise_var: 1.0,
            },
            horizon: 3,
            metric: Metric::AbsSum,
            windows: vec![(1, 10_000), (8_000, 10_000)],
            seeds: vec![1],
            warmup: None,
            check_covariance: false,
            estimators: vec![
                uam("UAM-LKE", Backend::Lke),
                uam("UAM-UKE", Backend::Uke),
                EstimatorSpec {
                    name: "Accurate-Sin".into(),
                    kind: EstimatorKind::Sine {
                        omega: None,
                        backend: Backend::Lke,
                        q: d_sine_q(),
                        pi0: d_sine_pi0(),
                        r: 1.0,
                        uke: UkeParams::default(),
                    },
                },
                nnssm("NNSSE-UKE", Backend::Uke, ws, None, id),
                pe_tuned(nnssm("NNSSE-PE", Backend::Pe, ws, None, id)),
                nnssm("NNSSE-EKE", Backend::Eke, ws, None, id),
                nnssm("NNSSE-5-5-1", Backend::Uke, mlp, Some(vec![5, 5, 1]), id),
                nnssm("NNSSE-10-10-1", Backend::Uke, mlp, Some(vec![10, 10, 1]), id),
                nnssm("NNSSE-Tanh", Backend::Uke, mlp, Some(vec![5, 5, 1]), Activation::Tanh),
                nnssm("NNSSE-5-5-5-1", Backend::Uke, mlp, Some(vec![5, 5, 5, 1]), id),
            ],
        }
    }

    /// Kinematic Kalman models of order 1 to 4 against the position-stack
    /// family on the noisy sine.
    pub fn stacks() -> Self {
        let mut estimators: Vec<EstimatorSpec> = (1..=4)
            .map(|order| EstimatorSpec {
                name: format!("UAM{order}-LKE"),
                kind: EstimatorKind::Uam {
                    order,
                    backend: Backend::Lke,
                    q: None,
                    pi0: None,
                    r: 1.0,
                    uke: UkeParams::default(),
                },
            })
            .collect();
        estimators.extend(StackKind::ALL.iter().map(|&stack| EstimatorSpec {
            name: stack.to_string(),
            kind: EstimatorKind::Stack {
                stack,
                mode: StackMode::OpenLoop,
                q: d_stack_q(),
                pi0: 1.0,
                r: 1.0,
            },
        }));
        ExperimentConfig {
            estimators,
            ..Self::table1()
        }
    }
}

impl EstimatorSpec {
    fn validate_backend(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::Config(format!("{}: backend not supported for {what}", self.name)))
        };
        match &self.kind {
            EstimatorKind::Uam { order, backend, q, pi0, .. } => {
                if !(1..=4).contains(order) {
                    return Err(Error::Config(format!("{}: UAM order must be 1..=4", self.name)));
                }
                for v in [q, pi0].into_iter().flatten() {
                    if v.len() != *order {
                        return Err(Error::Config(format!(
                            "{}: per-state variances need {order} entries",
                            self.name
                        )));
                    }
                }
                if *backend == Backend::Pe {
                    return bad("uam");
                }
            }
            EstimatorKind::Sine { backend, .. } => {
                if *backend == Backend::Pe {
                    return bad("sine");
                }
            }
            EstimatorKind::Stack { .. } => {}
            EstimatorKind::Nnssm { backend, particles, .. } => {
                if *backend == Backend::Lke {
                    return bad("the nonlinear network model (use eke, uke or pe)");
                }
                if *backend == Backend::Pe && *particles < 2 {
                    return Err(Error::Config(format!("{}: need at least 2 particles", self.name)));
                }
                // sample period does not enter the network; any positive value validates
                self.topology(1, 1.0)?;
            }
        }
        Ok(())
    }
}
