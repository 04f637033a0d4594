//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nnsse::estimators::StateSpaceModel;
use nnsse::model::{Activation, Topology};
use rand::Rng;

/// Dense layer-by-layer evaluation with plain loops: layer `k` is a
/// `widths[k+1] x widths[k]` row-major block of `weights`.
pub fn dense_forward(widths: &[usize], act: Activation, inputs: &[f64], weights: &[f64]) -> f64 {
    let mut x = inputs.to_vec();
    let mut offset = 0;
    for k in 0..widths.len() - 1 {
        let (n_in, n_out) = (widths[k], widths[k + 1]);
        let mut y = vec![0.0; n_out];
        for (r, yr) in y.iter_mut().enumerate() {
            for (c, xc) in x.iter().enumerate() {
                *yr += weights[offset + r * n_in + c] * xc;
            }
        }
        offset += n_in * n_out;
        let hidden = k + 2 < widths.len();
        if hidden && act == Activation::Tanh {
            y.iter_mut().for_each(|v| *v = v.tanh());
        }
        x = y;
    }
    x[0]
}

/// Central-difference Jacobian of `model.transition_into`.
pub fn fd_jacobian<M: StateSpaceModel>(model: &M, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        model.transition_into(&xp, &mut plus);
        xp[j] = x[j] - h;
        model.transition_into(&xp, &mut minus);
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Seeded random augmented state: positions in `[-10, 10]`, weights in
/// `[-w, w]`.
pub fn random_state<R: Rng>(topology: &Topology, weight_scale: f64, rng: &mut R) -> DVector<f64> {
    let m = topology.position_count();
    DVector::from_fn(topology.state_dim(), |i, _| {
        if i < m {
            rng.random_range(-10.0..10.0)
        } else {
            rng.random_range(-weight_scale..weight_scale)
        }
    })
}

/// `A Aᵀ` for a random square `A`, optionally rank deficient.
pub fn random_psd<R: Rng>(n: usize, rank: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    let mut m = &a * a.transpose();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// The five network shapes exercised by the benchmark roster.
pub fn roster_topologies(horizon: usize) -> Vec<(&'static str, Topology)> {
    let t = 0.005;
    vec![
        ("WeightedSum(25)", Topology::weighted_sum(25, horizon, t).unwrap()),
        ("5-5-1", Topology::mlp(vec![5, 5, 1], Activation::Identity, horizon, t).unwrap()),
        ("10-10-1", Topology::mlp(vec![10, 10, 1], Activation::Identity, horizon, t).unwrap()),
        ("Tanh 5-5-1", Topology::mlp(vec![5, 5, 1], Activation::Tanh, horizon, t).unwrap()),
        ("5-5-5-1", Topology::mlp(vec![5, 5, 5, 1], Activation::Identity, horizon, t).unwrap()),
    ]
}

/// Max-norm relative difference, guarded for zero references.
pub fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}
