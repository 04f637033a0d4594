//! Classical comparison models: uniformly accelerated Kalman models of order
//! 1 to 4, the position-stack predictors (E2P through E4PTRW) and the exact
//! sine reference.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::LinearModel;

/// Multi-step forecasting from a baseline state vector.
pub trait Forecast {
    fn state_dim(&self) -> usize;

    /// Forecast of the observed coordinate `steps` samples ahead.
    fn predict_n(&self, state: &[f64], steps: usize) -> f64;

    fn linear_model(&self) -> &LinearModel;
}

/// Uniformly accelerated model of the given order: states `[p]`, `[p, v]`,
/// `[p, v, a]` or `[p, v, a, ȧ]`, with the upper-triangular Taylor transition.
#[derive(Debug, Clone, PartialEq)]
pub struct UamModel {
    order: usize,
    sample_period: f64,
    model: LinearModel,
}

impl UamModel {
    pub fn new(order: usize, sample_period: f64) -> Result<Self> {
        if !(1..=4).contains(&order) {
            return Err(Error::InvalidParameter(format!(
                "UAM order must be 1..=4, got {order}"
            )));
        }
        if !(sample_period > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        let f = DMatrix::from_fn(order, order, |i, j| {
            if j >= i {
                taylor_coeff(sample_period, j - i)
            } else {
                0.0
            }
        });
        Ok(UamModel {
            order,
            sample_period,
            model: LinearModel::observing_first(f)?,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.model.f
    }
}

/// `t^k / k!`
fn taylor_coeff(t: f64, k: usize) -> f64 {
    let factorial: f64 = (1..=k).map(|i| i as f64).product();
    t.powi(k as i32) / factorial
}

/// Kinematic `n`-step extrapolation `p + v·nT + a·(nT)²/2 + ȧ·(nT)³/6`, using
/// as many terms as `state` holds.
pub fn uam_predict_n(state: &[f64], steps: usize, sample_period: f64) -> f64 {
    let horizon = steps as f64 * sample_period;
    state
        .iter()
        .enumerate()
        .map(|(k, s)| s * taylor_coeff(horizon, k))
        .sum()
}

impl Forecast for UamModel {
    fn state_dim(&self) -> usize {
        self.order
    }

    fn predict_n(&self, state: &[f64], steps: usize) -> f64 {
        uam_predict_n(state, steps, self.sample_period)
    }

    fn linear_model(&self) -> &LinearModel {
        &self.model
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackKind {
    E2P,
    E3P,
    E4P,
    E4PVW,
    E4PRW,
    E4PTRW,
}

impl StackKind {
    pub const ALL: [StackKind; 6] = [
        StackKind::E2P,
        StackKind::E3P,
        StackKind::E4P,
        StackKind::E4PVW,
        StackKind::E4PRW,
        StackKind::E4PTRW,
    ];

    /// First-row coefficients of the companion transition, newest position
    /// first.
    pub fn coefficients(self) -> Vec<f64> {
        match self {
            // p + (p - p1)
            StackKind::E2P => vec![2.0, -1.0],
            // p + (p - p1)/2 + (p1 - p2)/2
            StackKind::E3P => vec![1.5, 0.0, -0.5],
            // p + (p - p3)/3
            StackKind::E4P => vec![4.0 / 3.0, 0.0, 0.0, -1.0 / 3.0],
            // p + 3(p - p1)/6 + 2(p1 - p2)/6 + (p2 - p3)/6
            StackKind::E4PVW => vec![1.5, -1.0 / 6.0, -1.0 / 6.0, -1.0 / 6.0],
            StackKind::E4PRW | StackKind::E4PTRW => E4PRW_COEFFS.to_vec(),
        }
    }

    pub fn stack_len(self) -> usize {
        match self {
            StackKind::E2P => 2,
            StackKind::E3P => 3,
            _ => 4,
        }
    }
}

impl fmt::Display for StackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StackKind::E2P => "E2P",
            StackKind::E3P => "E3P",
            StackKind::E4P => "E4P",
            StackKind::E4PVW => "E4PVW",
            StackKind::E4PRW => "E4PRW",
            StackKind::E4PTRW => "E4PTRW",
        };
        f.write_str(s)
    }
}

/// Offline-regressed four-position weights.
pub const E4PRW_COEFFS: [f64; 4] = [1.2668, -0.0152, 0.0103, -0.2618];

/// Number of most recent pairs the online regression uses.
pub const E4PTRW_WINDOW: usize = 50;

/// Smallest window the regression accepts.
pub const E4PTRW_MIN_PAIRS: usize = 5;

/// Position-stack model: state `[p_i, p_{i-1}, ...]`, companion transition
/// whose first row holds the prediction coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct StackModel {
    kind: StackKind,
    model: LinearModel,
}

impl StackModel {
    pub fn kind(&self) -> StackKind {
        self.kind
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.model.f.row(0).iter().copied().collect()
    }

    /// Replaces the first row (used by the online-regressed variant).
    pub fn set_coefficients(&mut self, coeffs: &[f64]) -> Result<()> {
        let k = self.model.f.nrows();
        if coeffs.len() != k {
            return Err(Error::dim("stack coefficients", k, coeffs.len()));
        }
        for (j, c) in coeffs.iter().enumerate() {
            self.model.f[(0, j)] = *c;
        }
        Ok(())
    }

    pub fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.model.f
    }
}

fn companion(coeffs: &[f64]) -> DMatrix<f64> {
    let k = coeffs.len();
    let mut f = DMatrix::zeros(k, k);
    for (j, c) in coeffs.iter().enumerate() {
        f[(0, j)] = *c;
    }
    for r in 1..k {
        f[(r, r - 1)] = 1.0;
    }
    f
}

pub fn stack_transition(kind: StackKind) -> StackModel {
    let f = companion(&kind.coefficients());
    StackModel {
        kind,
        model: LinearModel::observing_first(f).expect("companion matrix is square"),
    }
}

impl Forecast for StackModel {
    fn state_dim(&self) -> usize {
        self.model.f.nrows()
    }

    /// First element of `Fⁿ · state`.
    fn predict_n(&self, state: &[f64], steps: usize) -> f64 {
        let f = &self.model.f;
        let mut x = DVector::from_row_slice(state);
        for _ in 0..steps {
            x = f * x;
        }
        x[0]
    }

    fn linear_model(&self) -> &LinearModel {
        &self.model
    }
}

/// One regression pair: the four newest positions and the value that followed.
pub type RefitPair = ([f64; 4], f64);

/// Minimum-norm least-squares fit of `next ≈ coeffs · inputs` (no intercept).
///
/// Returns `None` when fewer than [`E4PTRW_MIN_PAIRS`] pairs are available,
/// when the window holds non-finite values or when the decomposition does
/// not converge.
pub fn e4ptrw_refit(window: &[RefitPair]) -> Option<[f64; 4]> {
    if window.len() < E4PTRW_MIN_PAIRS {
        return None;
    }
    let finite = window
        .iter()
        .all(|(inputs, next)| next.is_finite() && inputs.iter().all(|v| v.is_finite()));
    if !finite {
        return None;
    }
    let rows = window.len();
    let a = DMatrix::from_fn(rows, 4, |i, j| window[i].0[j]);
    let b = DVector::from_fn(rows, |i, _| window[i].1);
    let svd = a.try_svd(true, true, f64::EPSILON, 10_000)?;
    let largest = svd.singular_values.max();
    if largest == 0.0 {
        return Some([0.0; 4]);
    }
    let tol = largest * rows.max(4) as f64 * f64::EPSILON;
    let x = svd.solve(&b, tol).ok()?;
    Some([x[0], x[1], x[2], x[3]])
}

/// Sum of squared one-step residuals of `coeffs` on `window`.
pub fn window_residual(window: &[RefitPair], coeffs: &[f64; 4]) -> f64 {
    window
        .iter()
        .map(|(inputs, next)| {
            let pred: f64 = inputs.iter().zip(coeffs).map(|(x, c)| x * c).sum();
            (next - pred).powi(2)
        })
        .sum()
}

/// Rolling regression state for the online-regressed stack predictor.
///
/// The fixed regressed weights are used until the window holds
/// [`E4PTRW_WINDOW`] pairs; from then on the weights are refit every step.
#[derive(Debug, Clone, Default)]
pub struct RefitWindow {
    history: VecDeque<f64>,
    pairs: VecDeque<RefitPair>,
}

impl RefitWindow {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a new sample; once four earlier samples exist the pair
    /// (previous four, sample) enters the window.
    pub fn push(&mut self, value: f64) {
        if self.history.len() == 4 {
            let inputs = [
                self.history[0],
                self.history[1],
                self.history[2],
                self.history[3],
            ];
            if self.pairs.len() == E4PTRW_WINDOW {
                self.pairs.pop_front();
            }
            self.pairs.push_back((inputs, value));
            self.history.pop_back();
        }
        self.history.push_front(value);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> Vec<RefitPair> {
        self.pairs.iter().copied().collect()
    }

    pub fn coefficients(&self) -> [f64; 4] {
        if self.pairs.len() < E4PTRW_WINDOW {
            return E4PRW_COEFFS;
        }
        let pairs: Vec<RefitPair> = self.pairs.iter().copied().collect();
        e4ptrw_refit(&pairs).unwrap_or(E4PRW_COEFFS)
    }
}

/// Exact sine model: state `[s, q]` rotated by `ωT` each step, `z = s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SineModel {
    omega: f64,
    sample_period: f64,
    model: LinearModel,
}

impl SineModel {
    pub fn omega(&self) -> f64 {
        self.omega
    }
}

pub fn sine_reference_model(omega: f64, sample_period: f64) -> Result<SineModel> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "angular frequency must be positive, got {omega}"
        )));
    }
    if !(sample_period > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sample period must be positive, got {sample_period}"
        )));
    }
    let (s, c) = (omega * sample_period).sin_cos();
    let f = DMatrix::from_row_slice(2, 2, &[c, s, -s, c]);
    Ok(SineModel {
        omega,
        sample_period,
        model: LinearModel::observing_first(f)?,
    })
}

impl Forecast for SineModel {
    fn state_dim(&self) -> usize {
        2
    }

    /// Rotation by `n·ωT`.
    fn predict_n(&self, state: &[f64], steps: usize) -> f64 {
        let (s, c) = (steps as f64 * self.omega * self.sample_period).sin_cos();
        c * state[0] + s * state[1]
    }

    fn linear_model(&self) -> &LinearModel {
        &self.model
    }
}

pub fn multi_step_predict<M: Forecast + ?Sized>(model: &M, state: &[f64], steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(Error::InvalidParameter("forecast needs at least one step".into()));
    }
    if state.len() != model.state_dim() {
        return Err(Error::dim("baseline state", model.state_dim(), state.len()));
    }
    Ok(model.predict_n(state, steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{lke_step, GaussianBelief, StateSpaceModel};
    use crate::model::NoiseSpec;

    #[test]
    fn uam_order3_matches_constant_acceleration_matrix() {
        let t = 0.005;
        let m = UamModel::new(3, t).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, t, t * t / 2.0, 0.0, 1.0, t, 0.0, 0.0, 1.0],
        );
        assert_eq!(m.transition_matrix(), &expected);
        assert!(UamModel::new(0, t).is_err());
        assert!(UamModel::new(5, t).is_err());
    }

    #[test]
    fn uam_prediction_examples() {
        assert!((uam_predict_n(&[0.0, 1.0, 0.0], 2, 0.1) - 0.2).abs() < 1e-15);
        assert_eq!(uam_predict_n(&[1.0, 0.0, 2.0], 3, 1.0), 10.0);
        let s3 = [0.3, -1.2, 4.0];
        let s4 = [0.3, -1.2, 4.0, 7.5];
        let (n, t) = (4usize, 0.05);
        let jerk = 7.5 * (n as f64 * t).powi(3) / 6.0;
        assert!((uam_predict_n(&s4, n, t) - (uam_predict_n(&s3, n, t) + jerk)).abs() < 1e-14);
    }

    #[test]
    fn stack_first_rows() {
        assert_eq!(stack_transition(StackKind::E2P).coefficients(), vec![2.0, -1.0]);
        assert_eq!(
            stack_transition(StackKind::E4PRW).coefficients(),
            vec![1.2668, -0.0152, 0.0103, -0.2618]
        );
        let vw = stack_transition(StackKind::E4PVW).coefficients();
        let expected = [1.5, -1.0 / 6.0, -1.0 / 6.0, -1.0 / 6.0];
        for (a, b) in vw.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let e3p = stack_transition(StackKind::E3P);
        assert_eq!(e3p.transition_matrix().nrows(), 3);
    }

    #[test]
    fn fixed_stacks_sum_to_one_except_regressed() {
        for kind in [StackKind::E2P, StackKind::E3P, StackKind::E4P, StackKind::E4PVW] {
            let s: f64 = kind.coefficients().iter().sum();
            assert!((s - 1.0).abs() < 1e-15, "{kind}");
        }
        let s: f64 = E4PRW_COEFFS.iter().sum();
        assert!((s - 1.0001).abs() < 1e-12);
    }

    #[test]
    fn stack_shift_rows() {
        let m = stack_transition(StackKind::E4P);
        let f = m.transition_matrix();
        for r in 1..4 {
            for c in 0..4 {
                assert_eq!(f[(r, c)], if c == r - 1 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn e2p_two_step() {
        let m = stack_transition(StackKind::E2P);
        assert_eq!(multi_step_predict(&m, &[3.0, 2.0], 2).unwrap(), 5.0);
        assert_eq!(multi_step_predict(&m, &[3.0, 2.0], 1).unwrap(), 4.0);
        assert!(multi_step_predict(&m, &[3.0, 2.0], 0).is_err());
        assert!(multi_step_predict(&m, &[3.0], 1).is_err());
    }

    #[test]
    fn one_step_equals_transition() {
        let m = stack_transition(StackKind::E4PVW);
        let state = [1.0, 0.5, -0.25, 2.0];
        let next = m.linear_model().transition(&DVector::from_row_slice(&state));
        assert_eq!(multi_step_predict(&m, &state, 1).unwrap(), next[0]);

        let u = UamModel::new(3, 0.1).unwrap();
        let state = [1.0, 2.0, 3.0];
        let next = u.linear_model().transition(&DVector::from_row_slice(&state));
        assert!((multi_step_predict(&u, &state, 1).unwrap() - next[0]).abs() < 1e-15);
    }

    #[test]
    fn e4p_ramp_exact_all_horizons() {
        let m = stack_transition(StackKind::E4P);
        let state = [10.0, 9.0, 8.0, 7.0];
        for n in 1..=10 {
            let p = multi_step_predict(&m, &state, n).unwrap();
            assert!((p - (10.0 + n as f64)).abs() < 1e-9, "n={n}");
        }
    }

    fn synthesize(coeffs: &[f64; 4], seed: [f64; 4], count: usize) -> Vec<RefitPair> {
        let mut series: Vec<f64> = seed.iter().rev().copied().collect();
        let mut pairs = Vec::new();
        while pairs.len() < count {
            let k = series.len();
            let inputs = [series[k - 1], series[k - 2], series[k - 3], series[k - 4]];
            let next: f64 = inputs.iter().zip(coeffs).map(|(x, c)| x * c).sum();
            pairs.push((inputs, next));
            series.push(next);
        }
        pairs
    }

    #[test]
    fn refit_recovers_regressed_weights() {
        let pairs = synthesize(&E4PRW_COEFFS, [1.0, -0.3, 0.7, 0.2], 50);
        let fit = e4ptrw_refit(&pairs).unwrap();
        for (a, b) in fit.iter().zip(E4PRW_COEFFS) {
            assert!((a - b).abs() <= 1e-8, "{fit:?}");
        }
    }

    #[test]
    fn refit_on_ramp_predicts_next_exactly() {
        let pairs: Vec<RefitPair> = (4..54)
            .map(|k| {
                let k = k as f64;
                ([k - 1.0, k - 2.0, k - 3.0, k - 4.0], k)
            })
            .collect();
        let fit = e4ptrw_refit(&pairs).unwrap();
        let next: f64 = [53.0, 52.0, 51.0, 50.0]
            .iter()
            .zip(&fit)
            .map(|(x, c)| x * c)
            .sum();
        assert!((next - 54.0).abs() <= 1e-9, "{next}");
        // normal-equation oracle: the fit must zero the residual
        assert!(window_residual(&pairs, &fit) < 1e-18 * 54.0 * 54.0 * 50.0);
    }

    #[test]
    fn refit_constant_window_is_min_norm() {
        let pairs = vec![([2.0; 4], 2.0); 50];
        let fit = e4ptrw_refit(&pairs).unwrap();
        for c in fit {
            assert!((c - 0.25).abs() < 1e-12, "{fit:?}");
        }
    }

    #[test]
    fn refit_needs_five_pairs() {
        let pairs = vec![([1.0, 2.0, 3.0, 4.0], 1.0); 4];
        assert_eq!(e4ptrw_refit(&pairs), None);
    }

    #[test]
    fn refit_window_rolls() {
        let mut w = RefitWindow::new();
        for k in 0..4 {
            w.push(k as f64);
        }
        assert!(w.is_empty());
        assert_eq!(w.coefficients(), E4PRW_COEFFS);
        w.push(4.0);
        assert_eq!(w.pairs(), vec![([3.0, 2.0, 1.0, 0.0], 4.0)]);
        for k in 5..200 {
            w.push(k as f64);
        }
        assert_eq!(w.len(), E4PTRW_WINDOW);
        let c = w.coefficients();
        let next: f64 = [199.0, 198.0, 197.0, 196.0].iter().zip(&c).map(|(x, c)| x * c).sum();
        assert!((next - 200.0).abs() < 1e-9);
    }

    #[test]
    fn sine_quarter_turn() {
        let m = sine_reference_model(std::f64::consts::FRAC_PI_2, 1.0).unwrap();
        let next = m.linear_model().transition(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((next[0] - 0.0).abs() < 1e-15);
        assert!((next[1] + 1.0).abs() < 1e-15);
        assert!(sine_reference_model(0.0, 1.0).is_err());
    }

    #[test]
    fn sine_n_step() {
        let (omega, t) = (2.0 * std::f64::consts::PI, 0.005);
        let m = sine_reference_model(omega, t).unwrap();
        let amp = 3.0;
        for n in 1..20 {
            let p = multi_step_predict(&m, &[amp, 0.0], n).unwrap();
            assert!((p - amp * (n as f64 * omega * t).cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn sine_lke_innovations_vanish() {
        let (omega, t) = (2.0 * std::f64::consts::PI, 0.005);
        let m = sine_reference_model(omega, t).unwrap();
        let lm = m.linear_model();
        let noise = NoiseSpec::diagonal(&[1e-4, 1e-4], 1.0, &[1.0, 1.0]).unwrap();
        let mut belief =
            GaussianBelief::new(DVector::zeros(2), noise.initial_cov.clone()).unwrap();
        let mut tail = 0.0_f64;
        for i in 1..10_000 {
            let z = 10.0 * (omega * t * i as f64).sin();
            let (post, innov) = lke_step(&lm.f, &lm.h, &noise, &belief, z).unwrap();
            belief = post;
            if i >= 8_000 {
                tail = tail.max(innov.abs());
            }
        }
        assert!(tail < 1e-8, "{tail}");
    }

    #[test]
    fn refit_rejects_non_finite_windows() {
        let mut window: Vec<RefitPair> = (0..10).map(|k| ([k as f64; 4], k as f64)).collect();
        window[3].0[2] = f64::NAN;
        assert_eq!(e4ptrw_refit(&window), None);
        window[3].0[2] = 0.0;
        window[7].1 = f64::INFINITY;
        assert_eq!(e4ptrw_refit(&window), None);
    }
}
