//! The training loop: deterministic epoch shuffles, batch loss, gradient
//! accumulation and optimizer steps, with per-epoch loss tracking.

use std::time::Instant;

use super::checkpoint::{AnyStore, Checkpoint};
use super::config::TrainConfig;
use super::eval::{predict_dataset, score_predictions, EpochLoss, MetricsReport};
use super::optim::AdamW;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::forward_batch;
use crate::params::{ParameterStore, Session};
use crate::rng::{mix, SplitMix64};
use crate::scalar::{Dtype, Scalar};

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
    /// Replay log: one line per epoch with the shuffle seed and losses.
    pub run_log: Vec<String>,
}

/// Train per the configuration. The returned report is evaluated on the
/// validation manifest when one is configured, otherwise on the training
/// manifest.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    match config.precision {
        Dtype::F64 => train_t::<f64>(config),
        Dtype::F32 => train_t::<f32>(config),
    }
}

fn train_t<T: Scalar>(config: &TrainConfig) -> Result<TrainOutcome>
where
    AnyStore: From<ParameterStore<T>>,
{
    let started = Instant::now();
    let train_ds = Dataset::open(&config.train_manifest)?;
    if train_ds.is_empty() {
        return Err(Error::Precondition("training manifest has no samples".into()));
    }
    let val_ds = match &config.val_manifest {
        Some(p) => Some(Dataset::open(p)?),
        None => None,
    };
    if let Some(v) = &val_ds {
        if v.vocab != train_ds.vocab {
            return Err(Error::Integrity(
                "validation vocabulary differs from training vocabulary".into(),
            ));
        }
    }
    let model = config.model_config(train_ds.vocab.len());
    model.validate()?;

    // Materialize all samples up front; the fixtures are desk-scale.
    let samples: Vec<crate::data::SampleTensors<T>> = (0..train_ds.len())
        .map(|i| train_ds.sample(i, &config.knowledge_streams))
        .collect::<Result<_>>()?;

    let mut store: ParameterStore<T> = ParameterStore::new(config.seed);
    let mut optimizer: AdamW<T> = AdamW::new(
        config.learning_rate,
        config.weight_decay,
        config.beta1,
        config.beta2,
        config.adam_eps,
    );

    let mut loss_curves = Vec::with_capacity(config.epochs);
    let mut run_log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let shuffle_seed = mix(config.seed, 0x5u64.wrapping_add(epoch as u64));
        let order = SplitMix64::new(shuffle_seed).permutation(samples.len());
        let batches = plan_batches(&order, config.batch_size, contrastive_active(config));

        let mut epoch_vqa = 0.0f64;
        let mut epoch_cl = 0.0f64;
        let mut epoch_total = 0.0f64;
        let mut counted = 0usize;

        for batch_idx in &batches {
            let batch: Vec<crate::data::SampleTensors<T>> =
                batch_idx.iter().map(|&i| samples[i].clone()).collect();
            let g = Graph::new();
            let mut sess = Session::new(&g, &mut store);
            let out = forward_batch(&mut sess, &batch, &model)?;
            let total = g.scalar(out.total)?;
            if !total.is_finite() {
                let culprit = g
                    .first_non_finite()
                    .unwrap_or_else(|| "loss node only".to_string());
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}: loss became {total}; first non-finite tensor: {culprit}"
                )));
            }
            let grads = g.backward(out.total)?;
            sess.fold_gradients(&grads)?;
            drop(sess);
            optimizer.step(&mut store);
            store.zero_grads();

            let w = batch.len() as f64;
            epoch_vqa += g.scalar(out.l_vqa)?.to_f64_lossy() * w;
            if let Some(cl) = out.l_cl {
                epoch_cl += g.scalar(cl)?.to_f64_lossy() * w;
            }
            epoch_total += total.to_f64_lossy() * w;
            counted += batch.len();
        }

        let n = counted as f64;
        let entry = EpochLoss {
            epoch,
            l_vqa: epoch_vqa / n,
            l_cl: epoch_cl / n,
            total: epoch_total / n,
        };
        run_log.push(format!(
            "epoch={} shuffle_seed={:#018x} l_vqa={:.9} l_cl={:.9} total={:.9}",
            entry.epoch, shuffle_seed, entry.l_vqa, entry.l_cl, entry.total
        ));
        loss_curves.push(entry);
    }

    // Report on the held-out split when configured, else on train.
    let eval_ds = val_ds.as_ref().unwrap_or(&train_ds);
    let predictions = predict_dataset(&mut store, eval_ds, &model, &config.knowledge_streams)?;
    let mut report = score_predictions(&predictions)?;
    report.loss_curves = loss_curves;
    report.config_hash = config.hash();
    report.seed = config.seed;
    report.wall_secs = started.elapsed().as_secs_f64();

    let checkpoint = Checkpoint {
        store: AnyStore::from(store),
        config: config.clone(),
        epoch: config.epochs,
        vocab: train_ds.vocab.clone(),
    };
    Ok(TrainOutcome {
        checkpoint,
        report,
        run_log,
    })
}

impl From<ParameterStore<f32>> for AnyStore {
    fn from(s: ParameterStore<f32>) -> Self {
        AnyStore::F32(s)
    }
}

impl From<ParameterStore<f64>> for AnyStore {
    fn from(s: ParameterStore<f64>) -> Self {
        AnyStore::F64(s)
    }
}

fn contrastive_active(config: &TrainConfig) -> bool {
    config.ckdm_enabled && config.ckdm_loss_enabled
}

/// Split a shuffled index order into batches. When the contrastive loss is
/// active a trailing singleton is folded into the previous batch so every
/// batch keeps at least one negative.
fn plan_batches(order: &[usize], batch_size: usize, needs_pairs: bool) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect();
    if needs_pairs && batches.len() >= 2 {
        if let Some(single) = batches.pop_if(|b| b.len() == 1) {
            batches
                .last_mut()
                .expect("len >= 2 before pop")
                .extend(single);
        }
    }
    batches
}

/// Evaluate a checkpoint against a manifest.
pub fn evaluate(checkpoint: &mut Checkpoint, manifest_path: &std::path::Path) -> Result<MetricsReport> {
    let dataset = Dataset::open(manifest_path)?;
    if dataset.vocab != checkpoint.vocab {
        return Err(Error::Integrity(format!(
            "checkpoint vocabulary ({} answers) does not match manifest vocabulary ({} answers)",
            checkpoint.vocab.len(),
            dataset.vocab.len()
        )));
    }
    let model = checkpoint.config.model_config(checkpoint.vocab.len());
    let streams = checkpoint.config.knowledge_streams.clone();
    let predictions = match &mut checkpoint.store {
        AnyStore::F32(store) => predict_dataset(store, &dataset, &model, &streams)?,
        AnyStore::F64(store) => predict_dataset(store, &dataset, &model, &streams)?,
    };
    let mut report = score_predictions(&predictions)?;
    report.config_hash = checkpoint.config.hash();
    report.seed = checkpoint.config.seed;
    Ok(report)
}
