mod common;

use common::{gradient_check, random_featured};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treexplain::features::FeaturedGraph;
use treexplain::gcn::{train, Activation, GcnModel, TrainConfig};

#[test]
fn tanh_gradients_match_finite_differences() {
    for seed in 0..10 {
        let err = gradient_check(Activation::Tanh, seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn relu_gradients_match_finite_differences() {
    for seed in 100..110 {
        let err = gradient_check(Activation::Relu, seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<_> = (0..20).map(|i| random_featured(&mut rng, 6, 4, i % 2)).collect();
    let cfg = TrainConfig {
        epochs: 5,
        rng_seed: 42,
        ..TrainConfig::default()
    };
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
}

#[test]
fn head_only_full_batch_loss_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<_> = (0..30).map(|i| random_featured(&mut rng, 7, 4, i % 2)).collect();
    let cfg = TrainConfig {
        epochs: 40,
        learning_rate: 0.1,
        momentum: 0.0,
        head_hidden: vec![],
        l2_penalty: 0.0,
        batch_size: data.len(),
        validation_fraction: 0.0,
        freeze_conv: true,
        rng_seed: 1,
        ..TrainConfig::default()
    };
    let out = train(&data, &cfg).unwrap();
    for w in out.history.windows(2) {
        assert!(w[1].loss <= w[0].loss + 1e-12, "{} -> {}", w[0].loss, w[1].loss);
    }
    assert!(out.history.last().unwrap().loss < out.history[0].loss);
}

#[test]
fn linearly_decodable_labels_are_learned() {
    // Label = sign of the first feature's mean over nodes.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data: Vec<_> = (0..200)
        .map(|_| {
            let n = rng.random_range(3..=9);
            let mut fg = random_featured(&mut rng, n, 4, 0);
            let shift = if rng.random_bool(0.5) { 0.6 } else { -0.6 };
            fg.features.column_mut(0).mapv_inplace(|x| 0.3 * x + shift);
            fg.teacher_label = usize::from(shift > 0.0);
            fg
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 60,
        validation_fraction: 0.0,
        rng_seed: 2,
        ..TrainConfig::default()
    };
    let out = train(&data, &cfg).unwrap();
    let hits = data
        .iter()
        .filter(|fg| out.model.predict(fg).unwrap() == fg.teacher_label)
        .count();
    assert!(hits as f64 / data.len() as f64 >= 0.95, "train accuracy {hits}/200");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forward_is_permutation_invariant(seed in 0u64..10_000, n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fg = random_featured(&mut rng, n, 5, 0);
        let model = GcnModel::new(5, &[6, 4], &[4], 3, Activation::Relu, seed);

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let graph = fg.graph.relabeled(&perm).unwrap();
        let mut features = Array2::zeros((n, 5));
        for old in 0..n {
            features.row_mut(perm[old]).assign(&fg.features.row(old));
        }
        let moved = FeaturedGraph { graph, features, ..fg.clone() };
        let a = model.forward(&fg).unwrap();
        let b = model.forward(&moved).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn probabilities_sum_to_one(seed in 0u64..10_000, n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fg = random_featured(&mut rng, n.max(2), 3, 0);
        let model = GcnModel::new(3, &[4], &[], 4, Activation::Tanh, seed);
        let p = model.forward(&fg).unwrap();
        prop_assert!((p.sum() - 1.0).abs() < 1e-6);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }
}
