mod support;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nnsse::baselines::{stack_transition, Forecast, StackKind, UamModel};
use nnsse::bench::{accumulated_error, Metric};
use nnsse::estimators::{
    eke_step, lke_step, uke_sigma_points, uke_step, DifferentiableModel, GaussianBelief,
    UkeParams,
};
use nnsse::model::{
    forward, observe, predict_ahead, transition, Activation, AugmentedState, NoiseSpec, Topology,
};
use support::{dense_forward, fd_jacobian, random_psd, random_state, rel_diff, roster_topologies};

fn small_topology() -> impl Strategy<Value = Topology> {
    let ws = (1usize..8, 1usize..5).prop_map(|(b, a)| Topology::weighted_sum(b, a, 0.01).unwrap());
    let mlp = (
        prop::collection::vec(1usize..6, 2..4),
        prop::bool::ANY,
        1usize..5,
    )
        .prop_map(|(mut widths, tanh, a)| {
            widths.push(1);
            let act = if tanh { Activation::Tanh } else { Activation::Identity };
            Topology::mlp(widths, act, a, 0.01).unwrap()
        });
    prop_oneof![ws, mlp]
}

fn topology_and_state() -> impl Strategy<Value = (Topology, Vec<f64>)> {
    small_topology().prop_flat_map(|t| {
        let n = t.state_dim();
        (Just(t), prop::collection::vec(-5.0f64..5.0, n))
    })
}

proptest! {
    #[test]
    fn layout_blocks_round_trip((t, values) in topology_and_state()) {
        let m = t.position_count();
        let state = AugmentedState::from_blocks(&t, &values[..m], &values[m..]).unwrap();
        prop_assert_eq!(state.positions(), &values[..m]);
        prop_assert_eq!(state.weights(), &values[m..]);
        prop_assert_eq!(state.len(), (t.horizon() - 1) + t.input_width() + t.weight_count());
        let again = AugmentedState::new(&t, state.clone().into_vector()).unwrap();
        prop_assert_eq!(again, state);
    }

    #[test]
    fn transition_preserves_weights_and_shifts((t, values) in topology_and_state()) {
        let state = AugmentedState::new(&t, DVector::from_vec(values.clone())).unwrap();
        let next = transition(&t, &state).unwrap();
        // bitwise copy of the weight block
        let same = next.weights().iter().zip(state.weights()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
        let m = t.position_count();
        prop_assert_eq!(&next.positions()[1..], &state.positions()[..m - 1]);
        let a = t.horizon();
        let inputs = &state.positions()[a - 1..a - 1 + t.input_width()];
        prop_assert_eq!(next.positions()[0], forward(&t, inputs, state.weights()).unwrap());
        prop_assert_eq!(observe(&next), next.positions()[0]);
    }

    #[test]
    fn weighted_sum_is_bilinear(
        u in prop::collection::vec(-10.0f64..10.0, 6),
        v in prop::collection::vec(-10.0f64..10.0, 6),
        w in prop::collection::vec(-2.0f64..2.0, 6),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let t = Topology::weighted_sum(6, 1, 1.0).unwrap();
        let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = forward(&t, &mix, &w).unwrap();
        let rhs = alpha * forward(&t, &u, &w).unwrap() + beta * forward(&t, &v, &w).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        let scaled: Vec<f64> = w.iter().map(|x| alpha * x).collect();
        let lhs = forward(&t, &u, &scaled).unwrap();
        let rhs = alpha * forward(&t, &u, &w).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn predict_ahead_reads_newest_inputs((t, values) in topology_and_state()) {
        let state = AugmentedState::new(&t, DVector::from_vec(values)).unwrap();
        let expected = forward(&t, &state.positions()[..t.input_width()], state.weights()).unwrap();
        prop_assert_eq!(predict_ahead(&t, &state).unwrap(), expected);
    }

    #[test]
    fn analytic_jacobian_matches_differences((t, values) in topology_and_state()) {
        let x = DVector::from_vec(values);
        let analytic = t.transition_jacobian(&x);
        let numeric = fd_jacobian(&t, x.as_slice(), 1e-6);
        let err = (&analytic - &numeric).amax();
        prop_assert!(err <= 1e-5, "max abs error {}", err);
    }

    #[test]
    fn sigma_points_reconstruct_moments(n in 1usize..12, seed in any::<u64>(), alpha in 1e-3f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = random_psd(n, n, &mut rng);
        let mean = random_state(&Topology::weighted_sum(n, 1, 1.0).unwrap(), 1.0, &mut rng)
            .rows(0, n).into_owned();
        let belief = GaussianBelief::new(mean.clone(), cov.clone()).unwrap();
        let params = UkeParams { alpha, ..UkeParams::default() };
        let set = uke_sigma_points(&belief, params).unwrap();
        let total: f64 = set.mean_weights.iter().sum();
        prop_assert_eq!(total, 1.0);
        let center = set.points.column(0).into_owned();
        let mut m = center.clone();
        for (k, col) in set.points.column_iter().enumerate() {
            m += (col - &center) * set.mean_weights[k];
        }
        prop_assert!((&m - &mean).amax() <= 1e-10);
        let mut c = DMatrix::zeros(n, n);
        for (k, col) in set.points.column_iter().enumerate() {
            let d = col - &mean;
            c += &d * d.transpose() * set.cov_weights[k];
        }
        prop_assert!((&c - &cov).amax() <= 1e-10 * cov.amax().max(1.0));
    }

    #[test]
    fn nonlinear_filters_reduce_to_kalman_on_linear_models(
        order in 1usize..5,
        seed in any::<u64>(),
        steps in 1usize..40,
    ) {
        let model = UamModel::new(order, 0.01).unwrap();
        let lin = model.linear_model();
        let mut q = vec![1e-3; order];
        q[0] = 1e-2;
        let noise = NoiseSpec::diagonal(&q, 0.5, &vec![1.0; order]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = GaussianBelief::new(DVector::zeros(order), noise.initial_cov.clone()).unwrap();
        let (mut bl, mut be, mut bu) = (start.clone(), start.clone(), start);
        for i in 0..steps {
            let z = (i as f64 * 0.1).sin() * 3.0 + rand::Rng::random_range(&mut rng, -1.0..1.0);
            bl = lke_step(&lin.f, &lin.h, &noise, &bl, z).unwrap().0;
            be = eke_step(lin, &noise, &be, z).unwrap().0;
            bu = uke_step(lin, &noise, &bu, z, UkeParams::default()).unwrap().0;
            prop_assert!(rel_diff(&be.mean, &bl.mean) <= 1e-12);
            prop_assert!(rel_diff(&bu.mean, &bl.mean) <= 1e-8);
        }
    }

    #[test]
    fn fixed_stacks_reproduce_ramps(
        slope in -5.0f64..5.0,
        offset in -100.0f64..100.0,
        horizon in 1usize..=10,
    ) {
        for kind in [StackKind::E2P, StackKind::E3P, StackKind::E4P, StackKind::E4PVW] {
            let stack = stack_transition(kind);
            let k = stack.state_dim();
            let state: Vec<f64> = (0..k).map(|j| offset - slope * j as f64).collect();
            let pred = stack.predict_n(&state, horizon);
            let expected = offset + slope * horizon as f64;
            prop_assert!((pred - expected).abs() <= 1e-9 * (1.0 + expected.abs()), "{}: {} vs {}", kind, pred, expected);
        }
    }

    #[test]
    fn accumulated_error_is_additive_and_nonnegative(
        pairs in prop::collection::vec((prop::option::of(-10.0f64..10.0), -10.0f64..10.0), 3..60),
        split in 0.0f64..1.0,
    ) {
        let pred: Vec<Option<f64>> = pairs.iter().map(|p| p.0).collect();
        let reference: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let n = pred.len();
        let cut = 1 + ((n - 2) as f64 * split) as usize;
        for metric in [Metric::AbsSum, Metric::SqSum] {
            let whole = accumulated_error(&pred, &reference, (1, n), metric);
            let left = accumulated_error(&pred, &reference, (1, cut), metric);
            let right = accumulated_error(&pred, &reference, (cut + 1, n), metric);
            match (whole, left, right) {
                (Ok(w), Ok(l), Ok(r)) => {
                    prop_assert!(w >= 0.0);
                    prop_assert!((w - (l + r)).abs() <= 1e-9 * (1.0 + w));
                }
                (Ok(w), Ok(l), Err(_)) => prop_assert_eq!(w, l),
                (Ok(w), Err(_), Ok(r)) => prop_assert_eq!(w, r),
                (Err(_), _, _) => prop_assert!(pred.iter().all(Option::is_none)),
                _ => prop_assert!(false, "split windows cannot both be empty"),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn identity_mlp_matches_dense_product(
        widths in prop::collection::vec(1usize..7, 1..4),
        seed in any::<u64>(),
    ) {
        let mut widths = widths;
        widths.insert(0, 1 + (seed % 6) as usize);
        widths.push(1);
        let t = Topology::mlp(widths.clone(), Activation::Identity, 1, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<f64> = (0..t.input_width()).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let weights: Vec<f64> = (0..t.weight_count()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let got = forward(&t, &inputs, &weights).unwrap();
        let want = dense_forward(&widths, Activation::Identity, &inputs, &weights);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {}", got, want);
    }

    #[test]
    fn tanh_mlp_matches_dense_oracle(seed in any::<u64>()) {
        let widths = vec![4, 3, 2, 1];
        let t = Topology::mlp(widths.clone(), Activation::Tanh, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<f64> = (0..4).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let weights: Vec<f64> = (0..t.weight_count()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let got = forward(&t, &inputs, &weights).unwrap();
        let want = dense_forward(&widths, Activation::Tanh, &inputs, &weights);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}

#[test]
fn roster_jacobians_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, t) in roster_topologies(3) {
        for _ in 0..10 {
            let x = random_state(&t, 0.5, &mut rng);
            let err = (t.transition_jacobian(&x) - fd_jacobian(&t, x.as_slice(), 1e-6)).amax();
            assert!(err <= 1e-5, "{name}: {err}");
        }
    }
}

#[test]
fn regressed_weights_do_not_reproduce_constants() {
    // the regressed weights sum to 1.0001
    let stack = stack_transition(StackKind::E4PRW);
    let sum: f64 = stack.coefficients().iter().sum();
    assert!((sum - 1.0001).abs() < 1e-12);
    let pred = stack.predict_n(&[100.0; 4], 1);
    assert!((pred - 100.01).abs() < 1e-9);
}
