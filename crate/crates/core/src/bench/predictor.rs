//! Online predictors: one measurement in, one horizon-ahead forecast out.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{default_uam_pi0, default_uam_q, Backend, EstimatorKind, EstimatorSpec, StackMode};
use crate::baselines::{
    sine_reference_model, stack_transition, Forecast, RefitWindow, StackKind, StackModel,
    UamModel,
};
use crate::error::{Error, Result};
use crate::estimators::{
    eke_step, lke_step, pe_step_with_root, psd_sqrt, uke_step, DifferentiableModel,
    GaussianBelief, ParticleSet, StateSpaceModel, UkeParams,
};
use crate::model::{predict_ahead_slice, NoiseSpec, Topology, TopologyKind};

pub trait OnlinePredictor: Send {
    /// Consumes measurement `z_i` and returns the forecast `p̂_{i+a|i}`.
    fn step(&mut self, z: f64) -> Result<f64>;

    /// Current posterior covariance, for Gaussian back-ends.
    fn covariance(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

/// What the trajectory tells the builder.
#[derive(Debug, Clone, Copy)]
pub struct BuildContext {
    pub horizon: usize,
    pub sample_period: f64,
    /// Angular frequency of the generating sine, when known.
    pub sine_omega: Option<f64>,
}

/// Model-specific pieces shared by the Gaussian and particle predictors.
trait Dynamics: DifferentiableModel + Send {
    fn initial_mean(&self, z0: f64) -> DVector<f64>;

    fn forecast(&self, mean: &[f64]) -> f64;

    /// Called with each measurement after the filter update.
    fn after_update(&mut self, _z: f64) {}
}

/// Linear baseline with its forecast horizon.
struct Baseline<F> {
    inner: F,
    horizon: usize,
}

impl<F: Forecast> StateSpaceModel for Baseline<F> {
    fn dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn transition_into(&self, x: &[f64], out: &mut [f64]) {
        self.inner.linear_model().transition_into(x, out)
    }

    fn observe(&self, x: &[f64]) -> f64 {
        self.inner.linear_model().observe(x)
    }

    fn transition_offset_into(&self, x: &[f64], fx: &[f64], d: &[f64], out: &mut [f64]) {
        self.inner.linear_model().transition_offset_into(x, fx, d, out)
    }

    fn observe_offset(&self, x: &[f64], d: &[f64]) -> f64 {
        self.inner.linear_model().observe_offset(x, d)
    }
}

impl<F: Forecast> DifferentiableModel for Baseline<F> {
    fn transition_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.inner.linear_model().transition_jacobian(x)
    }

    fn observation_row(&self) -> RowDVector<f64> {
        self.inner.linear_model().observation_row()
    }
}

/// Kinematic state starts at rest at the first measurement.
impl Dynamics for Baseline<UamModel> {
    fn initial_mean(&self, z0: f64) -> DVector<f64> {
        let mut m = DVector::zeros(self.inner.state_dim());
        m[0] = z0;
        m
    }

    fn forecast(&self, mean: &[f64]) -> f64 {
        self.inner.predict_n(mean, self.horizon)
    }
}

impl Dynamics for Baseline<crate::baselines::SineModel> {
    fn initial_mean(&self, z0: f64) -> DVector<f64> {
        DVector::from_row_slice(&[z0, 0.0])
    }

    fn forecast(&self, mean: &[f64]) -> f64 {
        self.inner.predict_n(mean, self.horizon)
    }
}

/// Stack models, optionally refitting their coefficients online.
struct Stack {
    base: Baseline<StackModel>,
    refit: Option<RefitWindow>,
}

impl Stack {
    fn new(kind: StackKind, horizon: usize) -> Self {
        Stack {
            base: Baseline {
                inner: stack_transition(kind),
                horizon,
            },
            refit: (kind == StackKind::E4PTRW).then(RefitWindow::new),
        }
    }

    fn observe_sample(&mut self, z: f64) {
        if let Some(window) = &mut self.refit {
            window.push(z);
            self.base
                .inner
                .set_coefficients(&window.coefficients())
                .expect("refit returns four coefficients");
        }
    }
}

impl StateSpaceModel for Stack {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn transition_into(&self, x: &[f64], out: &mut [f64]) {
        self.base.transition_into(x, out)
    }

    fn observe(&self, x: &[f64]) -> f64 {
        self.base.observe(x)
    }

    fn transition_offset_into(&self, x: &[f64], fx: &[f64], d: &[f64], out: &mut [f64]) {
        self.base.transition_offset_into(x, fx, d, out)
    }

    fn observe_offset(&self, x: &[f64], d: &[f64]) -> f64 {
        self.base.observe_offset(x, d)
    }
}

impl DifferentiableModel for Stack {
    fn transition_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.base.transition_jacobian(x)
    }

    fn observation_row(&self) -> RowDVector<f64> {
        self.base.observation_row()
    }
}

impl Dynamics for Stack {
    fn initial_mean(&self, z0: f64) -> DVector<f64> {
        DVector::from_element(self.dim(), z0)
    }

    fn forecast(&self, mean: &[f64]) -> f64 {
        self.base.inner.predict_n(mean, self.base.horizon)
    }

    fn after_update(&mut self, z: f64) {
        self.observe_sample(z);
    }
}

/// Network state-space model with its initial weight vector.
struct Network {
    topology: Topology,
    initial_weights: Vec<f64>,
}

impl Network {
    fn new(topology: Topology, init_half_width: f64, rng: &mut ChaCha8Rng) -> Self {
        let count = topology.weight_count();
        let initial_weights = match topology.kind() {
            // persistence: the newest input passes straight through
            TopologyKind::WeightedSum => {
                let mut w = vec![0.0; count];
                w[0] = 1.0;
                w
            }
            TopologyKind::Mlp => (0..count)
                .map(|_| rng.random_range(-init_half_width..=init_half_width))
                .collect(),
        };
        Network {
            topology,
            initial_weights,
        }
    }
}

impl StateSpaceModel for Network {
    fn dim(&self) -> usize {
        self.topology.dim()
    }

    fn transition_into(&self, x: &[f64], out: &mut [f64]) {
        self.topology.transition_into(x, out)
    }

    fn observe(&self, x: &[f64]) -> f64 {
        self.topology.observe(x)
    }

    fn transition_offset_into(&self, x: &[f64], fx: &[f64], d: &[f64], out: &mut [f64]) {
        self.topology.transition_offset_into(x, fx, d, out)
    }

    fn observe_offset(&self, x: &[f64], d: &[f64]) -> f64 {
        self.topology.observe_offset(x, d)
    }
}

impl DifferentiableModel for Network {
    fn transition_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.topology.transition_jacobian(x)
    }

    fn observation_row(&self) -> RowDVector<f64> {
        self.topology.observation_row()
    }
}

impl Dynamics for Network {
    fn initial_mean(&self, z0: f64) -> DVector<f64> {
        let m = self.topology.position_count();
        let mut x = DVector::from_element(self.topology.state_dim(), z0);
        x.as_mut_slice()[m..].copy_from_slice(&self.initial_weights);
        x
    }

    fn forecast(&self, mean: &[f64]) -> f64 {
        predict_ahead_slice(&self.topology, mean)
    }
}

#[derive(Debug, Clone, Copy)]
enum GaussianBackend {
    Lke,
    Eke,
    Uke(UkeParams),
}

struct GaussianPredictor<D> {
    dynamics: D,
    backend: GaussianBackend,
    noise: NoiseSpec,
    belief: Option<GaussianBelief>,
}

impl<D: Dynamics> OnlinePredictor for GaussianPredictor<D> {
    fn step(&mut self, z: f64) -> Result<f64> {
        let next = match &self.belief {
            None => GaussianBelief::new(self.dynamics.initial_mean(z), self.noise.initial_cov.clone())?,
            Some(b) => match self.backend {
                GaussianBackend::Lke => {
                    let f = self.dynamics.transition_jacobian(&b.mean);
                    let h = self.dynamics.observation_row();
                    lke_step(&f, &h, &self.noise, b, z)?.0
                }
                GaussianBackend::Eke => eke_step(&self.dynamics, &self.noise, b, z)?.0,
                GaussianBackend::Uke(params) => {
                    uke_step(&self.dynamics, &self.noise, b, z, params)?.0
                }
            },
        };
        if next.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("posterior mean is not finite".into()));
        }
        let forecast = self.dynamics.forecast(next.mean.as_slice());
        self.belief = Some(next);
        self.dynamics.after_update(z);
        Ok(forecast)
    }

    fn covariance(&self) -> Option<&DMatrix<f64>> {
        self.belief.as_ref().map(|b| &b.cov)
    }
}

struct ParticlePredictor<D> {
    dynamics: D,
    q_root: DMatrix<f64>,
    r: f64,
    initial_cov: DMatrix<f64>,
    count: usize,
    particles: Option<ParticleSet>,
    rng: ChaCha8Rng,
}

impl<D: Dynamics> OnlinePredictor for ParticlePredictor<D> {
    fn step(&mut self, z: f64) -> Result<f64> {
        let next = match &self.particles {
            None => {
                let belief =
                    GaussianBelief::new(self.dynamics.initial_mean(z), self.initial_cov.clone())?;
                ParticleSet::sample_gaussian(&belief, self.count, &mut self.rng)?
            }
            Some(set) => {
                pe_step_with_root(&self.dynamics, &self.q_root, self.r, set, z, &mut self.rng)?.0
            }
        };
        let forecast = self.dynamics.forecast(next.mean().as_slice());
        self.particles = Some(next);
        self.dynamics.after_update(z);
        Ok(forecast)
    }
}

/// Stack iterated directly on the newest measurements.
struct OpenLoopStack {
    stack: Stack,
    history: VecDeque<f64>,
}

impl OnlinePredictor for OpenLoopStack {
    fn step(&mut self, z: f64) -> Result<f64> {
        let k = self.stack.dim();
        if self.history.is_empty() {
            self.history.extend(std::iter::repeat_n(z, k));
        } else {
            self.history.pop_back();
            self.history.push_front(z);
        }
        let state: Vec<f64> = self.history.iter().copied().collect();
        let forecast = self.stack.forecast(&state);
        self.stack.observe_sample(z);
        Ok(forecast)
    }
}

fn gaussian_backend(backend: Backend, uke: UkeParams) -> GaussianBackend {
    match backend {
        Backend::Lke => GaussianBackend::Lke,
        Backend::Eke => GaussianBackend::Eke,
        Backend::Uke | Backend::Pe => GaussianBackend::Uke(uke),
    }
}

fn boxed<D: Dynamics + 'static>(
    dynamics: D,
    backend: Backend,
    uke: UkeParams,
    noise: NoiseSpec,
    particles: usize,
    rng: ChaCha8Rng,
) -> Result<Box<dyn OnlinePredictor>> {
    if backend == Backend::Pe {
        let q_root = psd_sqrt(&noise.q)?;
        return Ok(Box::new(ParticlePredictor {
            dynamics,
            q_root,
            r: noise.r,
            initial_cov: noise.initial_cov,
            count: particles,
            particles: None,
            rng,
        }));
    }
    Ok(Box::new(GaussianPredictor {
        dynamics,
        backend: gaussian_backend(backend, uke),
        noise,
        belief: None,
    }))
}

fn config_err(name: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Config(format!("{name}: {e}"))
}

/// Builds the predictor described by `spec`. `rng` is the estimator's own
/// stream (weight initialization and particle noise).
pub fn build_predictor(
    spec: &EstimatorSpec,
    ctx: &BuildContext,
    mut rng: ChaCha8Rng,
) -> Result<Box<dyn OnlinePredictor>> {
    let name = spec.name.as_str();
    let err = config_err(name);
    match &spec.kind {
        EstimatorKind::Uam {
            order,
            backend,
            q,
            pi0,
            r,
            uke,
        } => {
            let q = q.clone().unwrap_or_else(|| default_uam_q(*order));
            let pi0 = pi0.clone().unwrap_or_else(|| default_uam_pi0(*order));
            let noise = NoiseSpec::diagonal(&q, *r, &pi0).map_err(&err)?;
            let dynamics = Baseline {
                inner: UamModel::new(*order, ctx.sample_period).map_err(&err)?,
                horizon: ctx.horizon,
            };
            boxed(dynamics, *backend, *uke, noise, 0, rng)
        }
        EstimatorKind::Sine {
            omega,
            backend,
            q,
            pi0,
            r,
            uke,
        } => {
            let omega = omega.or(ctx.sine_omega).ok_or_else(|| {
                Error::Config(format!("{name}: `omega` is required for non-generated data"))
            })?;
            let noise = NoiseSpec::diagonal(&[*q, *q], *r, &[*pi0, *pi0]).map_err(&err)?;
            let dynamics = Baseline {
                inner: sine_reference_model(omega, ctx.sample_period).map_err(&err)?,
                horizon: ctx.horizon,
            };
            boxed(dynamics, *backend, *uke, noise, 0, rng)
        }
        EstimatorKind::Stack {
            stack,
            mode,
            q,
            pi0,
            r,
        } => {
            let model = Stack::new(*stack, ctx.horizon);
            match mode {
                StackMode::OpenLoop => Ok(Box::new(OpenLoopStack {
                    stack: model,
                    history: VecDeque::new(),
                })),
                StackMode::Kalman => {
                    let k = stack.stack_len();
                    let noise =
                        NoiseSpec::diagonal(&vec![*q; k], *r, &vec![*pi0; k]).map_err(&err)?;
                    boxed(model, Backend::Lke, UkeParams::default(), noise, 0, rng)
                }
            }
        }
        EstimatorKind::Nnssm {
            backend,
            q_position,
            q_weight,
            pi0_position,
            pi0_weight,
            r,
            weight_init,
            particles,
            uke,
            ..
        } => {
            let topology = spec
                .topology(ctx.horizon, ctx.sample_period)?
                .expect("nnssm spec has a topology");
            let noise = NoiseSpec::for_topology(
                &topology,
                *q_position,
                *q_weight,
                *r,
                *pi0_position,
                *pi0_weight,
            )
            .map_err(&err)?;
            let dynamics = Network::new(topology, *weight_init, &mut rng);
            boxed(dynamics, *backend, *uke, noise, *particles, rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config::ExperimentConfig;
    use rand::SeedableRng;

    fn ctx() -> BuildContext {
        BuildContext {
            horizon: 3,
            sample_period: 0.005,
            sine_omega: Some(std::f64::consts::TAU),
        }
    }

    #[test]
    fn every_table1_estimator_builds_and_steps() {
        for spec in ExperimentConfig::table1().estimators {
            let mut p = build_predictor(&spec, &ctx(), ChaCha8Rng::seed_from_u64(1)).unwrap();
            for i in 0..5 {
                let v = p.step(i as f64).unwrap();
                assert!(v.is_finite(), "{}", spec.name);
            }
        }
    }

    #[test]
    fn first_forecast_tracks_first_measurement() {
        // everything starts at rest at z0, so the first forecast is z0 for the
        // kinematic and unit-gain stack models; the regressed weights sum to
        // 1.0001 and drift slightly
        for spec in ExperimentConfig::stacks().estimators {
            let mut p = build_predictor(&spec, &ctx(), ChaCha8Rng::seed_from_u64(1)).unwrap();
            let v = p.step(4.0).unwrap();
            let tol = if spec.name.starts_with("E4PRW") || spec.name.starts_with("E4PTRW") {
                1e-2
            } else {
                1e-12
            };
            assert!((v - 4.0).abs() < tol, "{}: {v}", spec.name);
        }
    }

    #[test]
    fn open_loop_stack_extrapolates_ramp() {
        let spec = EstimatorSpec {
            name: "E2P".into(),
            kind: EstimatorKind::Stack {
                stack: StackKind::E2P,
                mode: StackMode::OpenLoop,
                q: 0.0,
                pi0: 1.0,
                r: 1.0,
            },
        };
        let mut p = build_predictor(&spec, &ctx(), ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut last = 0.0;
        for i in 0..10 {
            last = p.step(2.0 * i as f64).unwrap();
        }
        assert!((last - 2.0 * 12.0).abs() < 1e-12);
    }

    #[test]
    fn sine_without_omega_is_config_error() {
        let spec = ExperimentConfig::table1().estimators[2].clone();
        let c = BuildContext {
            sine_omega: None,
            ..ctx()
        };
        assert!(matches!(
            build_predictor(&spec, &c, ChaCha8Rng::seed_from_u64(1)),
            Err(Error::Config(_))
        ));
    }
}
