//! The neural-network state-space model.
//!
//! State layout for horizon `a`, input width `b` and weight count `c`:
//!
//! ```text
//! index 0 .. a+b-2        positions, newest first: p_i, p_{i-1}, ..., p_{i-a-b+2}
//! index a+b-1 .. n-1      weights, layer by layer, each matrix row-major
//!                         (row = destination neuron)
//! ```
//!
//! The transition feeds the `b` positions at offsets `a-1 ..= a+b-2` through
//! the surrogate network to produce the new newest position, shifts the rest
//! of the position block down by one and copies the weights. The network
//! therefore learns an `a`-step-ahead map, and [`predict_ahead`] applies the
//! same map to the `b` newest positions.
//!
//! No layer carries a bias term.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{DifferentiableModel, StateSpaceModel};
use crate::linalg::{eigen_floor_holds, max_asymmetry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    /// A single output node summing weighted inputs.
    WeightedSum,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y = apply(z)`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Architecture of the surrogate network plus the prediction horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    kind: TopologyKind,
    layer_widths: Vec<usize>,
    hidden_activation: Activation,
    horizon: usize,
    sample_period: f64,
}

impl Topology {
    pub fn new(
        kind: TopologyKind,
        layer_widths: Vec<usize>,
        hidden_activation: Activation,
        horizon: usize,
        sample_period: f64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidTopology("horizon must be at least 1".into()));
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::InvalidTopology(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        if layer_widths.len() < 2 {
            return Err(Error::InvalidTopology(
                "need at least an input and an output layer".into(),
            ));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidTopology("layer widths must be positive".into()));
        }
        if *layer_widths.last().unwrap() != 1 {
            return Err(Error::InvalidTopology("output width must be 1".into()));
        }
        if kind == TopologyKind::WeightedSum
            && (layer_widths.len() != 2 || hidden_activation != Activation::Identity)
        {
            return Err(Error::InvalidTopology(
                "weighted sum takes widths [b, 1] with identity activation".into(),
            ));
        }
        Ok(Topology {
            kind,
            layer_widths,
            hidden_activation,
            horizon,
            sample_period,
        })
    }

    pub fn weighted_sum(inputs: usize, horizon: usize, sample_period: f64) -> Result<Self> {
        Self::new(
            TopologyKind::WeightedSum,
            vec![inputs, 1],
            Activation::Identity,
            horizon,
            sample_period,
        )
    }

    pub fn mlp(
        layer_widths: Vec<usize>,
        hidden_activation: Activation,
        horizon: usize,
        sample_period: f64,
    ) -> Result<Self> {
        Self::new(
            TopologyKind::Mlp,
            layer_widths,
            hidden_activation,
            horizon,
            sample_period,
        )
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    /// Prediction horizon `a` in samples.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    /// Network input width `b`.
    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    /// Weight count `c`.
    pub fn weight_count(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// Length of the position block, `a + b - 1`.
    pub fn position_count(&self) -> usize {
        self.horizon + self.input_width() - 1
    }

    /// `(a - 1) + b + c`.
    pub fn state_dim(&self) -> usize {
        self.position_count() + self.weight_count()
    }

    /// Surrogate network output for `inputs` under `weights`.
    pub fn forward(&self, inputs: &[f64], weights: &[f64]) -> Result<f64> {
        self.check_lengths(inputs, weights)?;
        Ok(self.forward_unchecked(inputs, weights))
    }

    fn check_lengths(&self, inputs: &[f64], weights: &[f64]) -> Result<()> {
        if inputs.len() != self.input_width() {
            return Err(Error::dim("network inputs", self.input_width(), inputs.len()));
        }
        if weights.len() != self.weight_count() {
            return Err(Error::dim("network weights", self.weight_count(), weights.len()));
        }
        Ok(())
    }

    fn forward_unchecked(&self, inputs: &[f64], weights: &[f64]) -> f64 {
        if self.kind == TopologyKind::WeightedSum {
            return inputs.iter().zip(weights).map(|(x, w)| x * w).sum();
        }
        let layers = self.layer_widths.len() - 1;
        let mut current = inputs.to_vec();
        let mut next = Vec::new();
        let mut offset = 0;
        for layer in 0..layers {
            let (fan_in, fan_out) = (self.layer_widths[layer], self.layer_widths[layer + 1]);
            next.clear();
            for row in 0..fan_out {
                let w = &weights[offset + row * fan_in..offset + (row + 1) * fan_in];
                let z: f64 = w.iter().zip(&current).map(|(w, x)| w * x).sum();
                next.push(if layer + 1 < layers {
                    self.hidden_activation.apply(z)
                } else {
                    z
                });
            }
            offset += fan_in * fan_out;
            std::mem::swap(&mut current, &mut next);
        }
        current[0]
    }

    /// Network output together with its gradient with respect to the inputs
    /// and to every weight (reverse-mode chain rule).
    pub fn forward_with_gradient(
        &self,
        inputs: &[f64],
        weights: &[f64],
        grad_inputs: &mut [f64],
        grad_weights: &mut [f64],
    ) -> Result<f64> {
        self.check_lengths(inputs, weights)?;
        if grad_inputs.len() != inputs.len() {
            return Err(Error::dim("input gradient", inputs.len(), grad_inputs.len()));
        }
        if grad_weights.len() != weights.len() {
            return Err(Error::dim("weight gradient", weights.len(), grad_weights.len()));
        }

        let layers = self.layer_widths.len() - 1;
        // activations[k] feeds layer k; activations[0] are the inputs
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        activations.push(inputs.to_vec());
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for layer in 0..layers {
            let (fan_in, fan_out) = (self.layer_widths[layer], self.layer_widths[layer + 1]);
            offsets.push(offset);
            let prev = &activations[layer];
            let out: Vec<f64> = (0..fan_out)
                .map(|row| {
                    let w = &weights[offset + row * fan_in..offset + (row + 1) * fan_in];
                    let z: f64 = w.iter().zip(prev).map(|(w, x)| w * x).sum();
                    if layer + 1 < layers {
                        self.hidden_activation.apply(z)
                    } else {
                        z
                    }
                })
                .collect();
            offset += fan_in * fan_out;
            activations.push(out);
        }
        let output = activations[layers][0];

        // delta = d output / d pre-activation of the current layer
        let mut delta = vec![1.0];
        for layer in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_widths[layer], self.layer_widths[layer + 1]);
            let prev = &activations[layer];
            let base = offsets[layer];
            for row in 0..fan_out {
                for col in 0..fan_in {
                    grad_weights[base + row * fan_in + col] = delta[row] * prev[col];
                }
            }
            let mut upstream = vec![0.0; fan_in];
            for (row, d) in delta.iter().enumerate() {
                let w = &weights[base + row * fan_in..base + (row + 1) * fan_in];
                for (u, w) in upstream.iter_mut().zip(w) {
                    *u += d * w;
                }
            }
            if layer > 0 {
                for (u, y) in upstream.iter_mut().zip(prev) {
                    *u *= self.hidden_activation.derivative_from_output(*y);
                }
            }
            delta = upstream;
        }
        grad_inputs.copy_from_slice(&delta);
        Ok(output)
    }

    fn network_input_range(&self) -> std::ops::Range<usize> {
        let start = self.horizon - 1;
        start..start + self.input_width()
    }
}

impl StateSpaceModel for Topology {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn transition_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.position_count();
        let (positions, weights) = x.split_at(m);
        let next = self.forward_unchecked(&positions[self.network_input_range()], weights);
        out[0] = next;
        out[1..m].copy_from_slice(&positions[..m - 1]);
        out[m..].copy_from_slice(weights);
    }

    fn observe(&self, x: &[f64]) -> f64 {
        x[0]
    }

    /// Only the new position is nonlinear; the shifted positions and the
    /// weights move by exactly `d`.
    fn transition_offset_into(&self, x: &[f64], fx: &[f64], d: &[f64], out: &mut [f64]) {
        let m = self.position_count();
        let shifted: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + b).collect();
        let (positions, weights) = shifted.split_at(m);
        out[0] = self.forward_unchecked(&positions[self.network_input_range()], weights) - fx[0];
        out[1..m].copy_from_slice(&d[..m - 1]);
        out[m..].copy_from_slice(&d[m..]);
    }

    fn observe_offset(&self, _x: &[f64], d: &[f64]) -> f64 {
        d[0]
    }
}

impl DifferentiableModel for Topology {
    fn transition_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.state_dim();
        let m = self.position_count();
        let b = self.input_width();
        let mut jac = DMatrix::zeros(n, n);

        let (positions, weights) = x.as_slice().split_at(m);
        let range = self.network_input_range();
        let mut grad_inputs = vec![0.0; b];
        let mut grad_weights = vec![0.0; self.weight_count()];
        self.forward_with_gradient(
            &positions[range.clone()],
            weights,
            &mut grad_inputs,
            &mut grad_weights,
        )
        .expect("state length checked by caller");
        for (k, g) in grad_inputs.iter().enumerate() {
            jac[(0, range.start + k)] = *g;
        }
        for (k, g) in grad_weights.iter().enumerate() {
            jac[(0, m + k)] = *g;
        }
        for r in 1..m {
            jac[(r, r - 1)] = 1.0;
        }
        for r in m..n {
            jac[(r, r)] = 1.0;
        }
        jac
    }

    fn observation_row(&self) -> RowDVector<f64> {
        unit_row(self.state_dim())
    }
}

pub(crate) fn unit_row(n: usize) -> RowDVector<f64> {
    let mut h = RowDVector::zeros(n);
    if n > 0 {
        h[0] = 1.0;
    }
    h
}

/// Joint vector of lagged positions and network weights, sized for one
/// topology.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    values: DVector<f64>,
    positions: usize,
}

impl AugmentedState {
    pub fn new(topology: &Topology, values: DVector<f64>) -> Result<Self> {
        if values.len() != topology.state_dim() {
            return Err(Error::dim("augmented state", topology.state_dim(), values.len()));
        }
        Ok(AugmentedState {
            values,
            positions: topology.position_count(),
        })
    }

    pub fn from_blocks(topology: &Topology, positions: &[f64], weights: &[f64]) -> Result<Self> {
        if positions.len() != topology.position_count() {
            return Err(Error::dim(
                "position block",
                topology.position_count(),
                positions.len(),
            ));
        }
        if weights.len() != topology.weight_count() {
            return Err(Error::dim("weight block", topology.weight_count(), weights.len()));
        }
        let values = DVector::from_iterator(
            positions.len() + weights.len(),
            positions.iter().chain(weights).copied(),
        );
        Ok(AugmentedState {
            values,
            positions: positions.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.values.as_slice()[..self.positions]
    }

    pub fn weights(&self) -> &[f64] {
        &self.values.as_slice()[self.positions..]
    }

    pub fn positions_mut(&mut self) -> &mut [f64] {
        let m = self.positions;
        &mut self.values.as_mut_slice()[..m]
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        let m = self.positions;
        &mut self.values.as_mut_slice()[m..]
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }
}

fn check_state(topology: &Topology, state: &AugmentedState) -> Result<()> {
    if state.len() != topology.state_dim() || state.positions != topology.position_count() {
        return Err(Error::dim("augmented state", topology.state_dim(), state.len()));
    }
    Ok(())
}

pub fn weight_count(topology: &Topology) -> usize {
    topology.weight_count()
}

pub fn forward(topology: &Topology, inputs: &[f64], weights: &[f64]) -> Result<f64> {
    topology.forward(inputs, weights)
}

pub fn transition(topology: &Topology, state: &AugmentedState) -> Result<AugmentedState> {
    check_state(topology, state)?;
    let mut out = DVector::zeros(state.len());
    topology.transition_into(state.values.as_slice(), out.as_mut_slice());
    Ok(AugmentedState {
        values: out,
        positions: state.positions,
    })
}

/// Newest position, `h(x) = x[0]`.
pub fn observe(state: &AugmentedState) -> f64 {
    state.values.get(0).copied().unwrap_or(0.0)
}

/// `a`-step-ahead forecast: the network applied to the `b` newest positions.
pub fn predict_ahead(topology: &Topology, state: &AugmentedState) -> Result<f64> {
    check_state(topology, state)?;
    Ok(predict_ahead_slice(topology, state.values.as_slice()))
}

pub(crate) fn predict_ahead_slice(topology: &Topology, x: &[f64]) -> f64 {
    let m = topology.position_count();
    topology.forward_unchecked(&x[..topology.input_width()], &x[m..])
}

pub fn transition_jacobian(topology: &Topology, state: &AugmentedState) -> Result<DMatrix<f64>> {
    check_state(topology, state)?;
    Ok(DifferentiableModel::transition_jacobian(topology, &state.values))
}

/// Process covariance `Q`, scalar measurement variance `R` and initial
/// covariance `Π₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub q: DMatrix<f64>,
    pub r: f64,
    pub initial_cov: DMatrix<f64>,
}

impl NoiseSpec {
    pub fn new(q: DMatrix<f64>, r: f64, initial_cov: DMatrix<f64>) -> Result<Self> {
        if !(r > 0.0) || r.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "measurement variance must be positive, got {r}"
            )));
        }
        let n = q.nrows();
        if q.ncols() != n {
            return Err(Error::dim("process covariance (square)", n, q.ncols()));
        }
        if initial_cov.nrows() != n || initial_cov.ncols() != n {
            return Err(Error::dim("initial covariance", n, initial_cov.nrows()));
        }
        for (name, m) in [("process covariance", &q), ("initial covariance", &initial_cov)] {
            let scale = m.abs().max().max(1.0);
            if max_asymmetry(m) > 1e-12 * scale {
                return Err(Error::InvalidParameter(format!("{name} is not symmetric")));
            }
            if !eigen_floor_holds(m, 1e-9 * scale) {
                return Err(Error::InvalidParameter(format!(
                    "{name} is not positive semidefinite"
                )));
            }
        }
        Ok(NoiseSpec { q, r, initial_cov })
    }

    /// Diagonal `Q` and `Π₀` with one scale for each element of the
    /// per-state `q` and `pi0` vectors.
    pub fn diagonal(q: &[f64], r: f64, pi0: &[f64]) -> Result<Self> {
        if q.len() != pi0.len() {
            return Err(Error::dim("initial covariance diagonal", q.len(), pi0.len()));
        }
        Self::new(
            DMatrix::from_diagonal(&DVector::from_row_slice(q)),
            r,
            DMatrix::from_diagonal(&DVector::from_row_slice(pi0)),
        )
    }

    /// Block-diagonal spec for a topology: one variance for the position
    /// block, another for the weight block.
    pub fn for_topology(
        topology: &Topology,
        q_position: f64,
        q_weight: f64,
        r: f64,
        pi0_position: f64,
        pi0_weight: f64,
    ) -> Result<Self> {
        let m = topology.position_count();
        let n = topology.state_dim();
        let pick = |i: usize, p: f64, w: f64| if i < m { p } else { w };
        let q: Vec<f64> = (0..n).map(|i| pick(i, q_position, q_weight)).collect();
        let pi0: Vec<f64> = (0..n).map(|i| pick(i, pi0_position, pi0_weight)).collect();
        Self::diagonal(&q, r, &pi0)
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }
}
