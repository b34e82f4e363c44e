//! Cross-module training-dynamics checks that need the whole pipeline.

use attrfuse_core::ckdm::ContrastiveMode;
use attrfuse_core::data::{generate_synthetic_fixture, FixtureConfig, SampleTensors, Split};
use attrfuse_core::error::Error;
use attrfuse_core::graph::Graph;
use attrfuse_core::model::{fixture_batch, forward_batch, ModelConfig};
use attrfuse_core::params::{ParameterStore, Session};
use attrfuse_core::scalar::Dtype;
use attrfuse_core::tensor::Tensor;
use attrfuse_core::train::{run_ablation_suite, train, AdamW, TrainConfig};

fn narrow_model(vocab: usize, mode: ContrastiveMode) -> ModelConfig {
    let mut m = TrainConfig::grad_check_default().model_config(vocab);
    m.contrastive_mode = mode;
    m
}

fn narrow_fixture(n: usize, seed: u64) -> FixtureConfig {
    FixtureConfig {
        n_samples: n,
        ..FixtureConfig::grad_check(seed)
    }
}

fn mean_positive_cosine(
    store: &mut ParameterStore<f64>,
    batch: &[SampleTensors<f64>],
    model: &ModelConfig,
) -> f64 {
    let g = Graph::new();
    let mut sess = Session::new(&g, store);
    let out = forward_batch(&mut sess, batch, model).unwrap();
    let cosines: Vec<f64> = out
        .samples
        .iter()
        .map(|s| s.positive_cosine.expect("distillation on"))
        .collect();
    cosines.iter().sum::<f64>() / cosines.len() as f64
}

/// Alignment dynamics: 200 optimizer steps on a 16-sample fixture raise
/// the mean cosine between the projected content row and the knowledge
/// row by at least 0.1 from initialization (in-batch-negative mode).
#[test]
fn contrastive_training_raises_positive_cosines() {
    let model = narrow_model(4, ContrastiveMode::CrossPair);
    let batch: Vec<SampleTensors<f64>> = fixture_batch(&narrow_fixture(16, 23)).unwrap();
    let mut store: ParameterStore<f64> = ParameterStore::new(5);

    let initial = mean_positive_cosine(&mut store, &batch, &model);
    let mut opt: AdamW<f64> = AdamW::new(1e-3, 0.01, 0.9, 0.999, 1e-8);
    for _ in 0..200 {
        let g = Graph::new();
        let mut sess = Session::new(&g, &mut store);
        let out = forward_batch(&mut sess, &batch, &model).unwrap();
        let grads = g.backward(out.total).unwrap();
        sess.fold_gradients(&grads).unwrap();
        drop(sess);
        opt.step(&mut store);
        store.zero_grads();
    }
    let trained = mean_positive_cosine(&mut store, &batch, &model);
    assert!(
        trained - initial >= 0.1,
        "mean positive cosine moved {initial:.4} -> {trained:.4}"
    );
}

/// Zero caption features are tolerated: the forward stays finite and a
/// short training run still reduces the loss.
#[test]
fn zero_captions_still_train() {
    let model = narrow_model(4, ContrastiveMode::MatchedPair);
    let mut batch: Vec<SampleTensors<f64>> = fixture_batch(&narrow_fixture(8, 29)).unwrap();
    for s in &mut batch {
        s.captions = Tensor::zeros(s.captions.shape());
    }
    let mut store: ParameterStore<f64> = ParameterStore::new(3);
    let mut opt: AdamW<f64> = AdamW::new(1e-3, 0.01, 0.9, 0.999, 1e-8);
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..40 {
        let g = Graph::new();
        let mut sess = Session::new(&g, &mut store);
        let out = forward_batch(&mut sess, &batch, &model).unwrap();
        let loss = g.scalar(out.total).unwrap();
        assert!(loss.is_finite());
        first.get_or_insert(loss);
        last = loss;
        let grads = g.backward(out.total).unwrap();
        sess.fold_gradients(&grads).unwrap();
        drop(sess);
        opt.step(&mut store);
        store.zero_grads();
    }
    assert!(last < first.unwrap(), "loss {:?} -> {last}", first);
}

/// Rerunning the ablation suite with the same seed reproduces the table
/// byte for byte.
#[test]
fn ablation_suite_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let fix = narrow_fixture(8, 31);
    generate_synthetic_fixture(&fix, dir.path()).unwrap();
    let val = FixtureConfig {
        n_samples: 4,
        split: Split::Val,
        ..fix
    };
    generate_synthetic_fixture(&val, dir.path()).unwrap();

    let mut base = TrainConfig::grad_check_default();
    base.train_manifest = dir.path().join("train.manifest");
    base.val_manifest = Some(dir.path().join("val.manifest"));
    base.epochs = 3;
    base.batch_size = 4;
    base.seed = 13;

    let t1 = run_ablation_suite(&base).unwrap();
    let t2 = run_ablation_suite(&base).unwrap();
    assert_eq!(t1.render(), t2.render());
    assert_eq!(t1.metric_lines(), t2.metric_lines());
    assert_eq!(t1.rows.len(), 4);
}

/// A numerically exploding run aborts with a diagnostic that names the
/// first non-finite tensor instead of propagating NaN.
#[test]
fn exploding_run_aborts_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic_fixture(&narrow_fixture(8, 37), dir.path()).unwrap();

    let mut cfg = TrainConfig::grad_check_default();
    cfg.train_manifest = dir.path().join("train.manifest");
    cfg.epochs = 30;
    cfg.batch_size = 4;
    cfg.seed = 2;
    cfg.precision = Dtype::F32;
    // Steps of ~1e18 overflow f32 activations within a few epochs.
    cfg.learning_rate = 1e18;
    cfg.weight_decay = 0.0;

    match train(&cfg) {
        Err(Error::NonFinite(msg)) => {
            assert!(msg.contains("node"), "diagnostic should name a tensor: {msg}");
        }
        Err(other) => panic!("expected a non-finite abort, got: {other}"),
        Ok(_) => panic!("a 1e18 learning rate should not converge quietly"),
    }
}
