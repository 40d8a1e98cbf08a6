use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use t4pdm::features::FeaturePipelineState;
use t4pdm::model::{ModelConfig, ModelParams, TokenLayout};
use t4pdm::train::{predict, predict_tokens, train, TokenizedSet, TrainConfig};

fn toy_config(dropout_rate: f64) -> ModelConfig {
    ModelConfig {
        n_blocks: 1,
        attention_layers: 1,
        n_heads: 2,
        d_model: 8,
        d_ff: 16,
        dropout_rate,
        sublayer_dropout: 0.0,
        seq_len: 2,
        token_dim: 2,
        n_classes: 2,
    }
}

/// Two Gaussian blobs at +-2 in every coordinate.
fn blobs(n: usize, seed: u64) -> TokenizedSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array3::from_shape_fn((n, 2, 2), |(i, _, _)| {
        let centre = if labels[i] == 0 { -2.0 } else { 2.0 };
        centre + noise.sample(&mut rng)
    });
    TokenizedSet { x, labels }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let model = ModelParams::init(toy_config(0.5), 1).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let (trained, history) = train(model.clone(), &blobs(32, 2), &blobs(8, 3), &cfg).unwrap();
    assert_eq!(trained.weights, model.weights);
    assert_eq!(history.epochs.len(), 3);
}

#[test]
fn separable_blobs_are_learned() {
    let model = ModelParams::init(toy_config(0.5), 5).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 16,
        learning_rate: 1e-3,
        seed: 9,
        ..TrainConfig::default()
    };
    let (_, history) = train(model, &blobs(64, 6), &blobs(16, 7), &cfg).unwrap();
    let reached = history.epochs.iter().any(|e| e.train_loss < 0.05);
    let last = history.epochs.last().unwrap();
    assert!(reached, "final train loss {}", last.train_loss);
    assert!(last.val_loss < 0.05, "final val loss {}", last.val_loss);
}

#[test]
fn single_sample_loss_decreases_monotonically() {
    let model = ModelParams::init(toy_config(0.0), 11).unwrap();
    let one = TokenizedSet {
        x: Array3::from_shape_vec((1, 2, 2), vec![0.3, -1.0, 0.7, 0.1]).unwrap(),
        labels: vec![1],
    };
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 1,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let (_, history) = train(model, &one, &one, &cfg).unwrap();
    let losses: Vec<f64> = history.epochs.iter().map(|e| e.train_loss).collect();
    for pair in losses.windows(2) {
        assert!(pair[1] < pair[0], "{losses:?}");
    }
}

#[test]
fn runs_are_bitwise_reproducible() {
    for dropout in [0.0, 0.5] {
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let model = ModelParams::init(toy_config(dropout), 3).unwrap();
            train(model, &blobs(40, 1), &blobs(10, 2), &cfg).unwrap()
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a.weights, b.weights);
        let losses = |h: &t4pdm::train::TrainHistory| {
            h.epochs.iter().map(|e| (e.train_loss, e.val_loss)).collect::<Vec<_>>()
        };
        assert_eq!(losses(&ha), losses(&hb));
    }
}

#[test]
fn early_stopping_restores_best_parameters() {
    let model = ModelParams::init(toy_config(0.0), 2).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 4,
        learning_rate: 0.05,
        early_stop_patience: Some(2),
        ..TrainConfig::default()
    };
    let val = blobs(8, 8);
    let (trained, history) = train(model, &blobs(16, 5), &val, &cfg).unwrap();
    if history.stopped_early {
        let best = history.epochs[history.best_epoch - 1].val_loss;
        let restored = t4pdm::train::evaluate_loss(&trained, &val, 64).unwrap();
        assert!((best - restored).abs() < 1e-12, "{best} vs {restored}");
        assert!(history.epochs.len() < 50);
    }
}

#[test]
fn batch_size_larger_than_train_set_is_rejected() {
    let model = ModelParams::init(toy_config(0.0), 2).unwrap();
    let cfg = TrainConfig {
        batch_size: 100,
        ..TrainConfig::default()
    };
    assert!(train(model, &blobs(10, 1), &blobs(4, 2), &cfg).is_err());
}

#[test]
fn prediction_does_not_depend_on_batching() {
    let model = ModelParams::init(toy_config(0.5), 21).unwrap();
    let set = blobs(37, 4);
    let all = predict_tokens(&model, &set.x, 256).unwrap();
    let single = predict_tokens(&model, &set.x, 1).unwrap();
    let odd = predict_tokens(&model, &set.x, 5).unwrap();
    assert_eq!(all, single);
    assert_eq!(all, odd);
    for row in all.rows() {
        assert!((row.sum() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn predict_runs_pipeline_and_checks_dims() {
    let model = ModelParams::init(toy_config(0.0), 21).unwrap();
    let pipeline = FeaturePipelineState::identity(4);
    let layout = TokenLayout::resolve(4, Some(2), false).unwrap();
    let features = Array2::from_shape_fn((6, 4), |(i, j)| (i * 4 + j) as f64 / 10.0);
    let (ids, probs) = predict(&model, &pipeline, &layout, &features).unwrap();
    assert_eq!(ids.len(), 6);
    assert_eq!(probs.dim(), (6, 2));

    let wrong = TokenLayout::resolve(6, Some(2), false).unwrap();
    assert!(predict(&model, &FeaturePipelineState::identity(6), &wrong, &Array2::zeros((1, 6))).is_err());
}
