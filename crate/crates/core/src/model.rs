//! Full pipeline composition: per-sample forward through attribute fusion
//! and knowledge distillation into the answer head, plus the batch loss.
//!
//! Component toggles select what the answer head sees:
//!
//! - attribute fusion ON: the pooled content row comes from the updated
//!   attribute nodes S1 (updated visual nodes feed prediction only through
//!   S1's dependency on them);
//! - attribute fusion OFF: the content rows are the raw visual features,
//!   so attribute embeddings never reach the head;
//! - distillation ON: top-down attention is conditioned on the pooled
//!   compound tokens, the knowledge row F̄ joins the head input, and the
//!   contrastive loss couples the batch;
//! - distillation OFF: conditioning falls back to a projection of the
//!   mean question token and F̄ is a zero row.

use crate::answer::{self, AnswerHeadParams};
use crate::ckdm::{self, CompoundConfig, ContrastiveMode, QueryPool};
use crate::data::SampleTensors;
use crate::error::{Error, Result};
use crate::fusion::{self, FusionConfig};
use crate::graph::Var;
use crate::nn::{mlp_forward, Activation, Diagnostics, MlpSpec};
use crate::params::Session;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_v: usize,
    pub d_e: usize,
    pub d_t: usize,
    /// Compound-token embedding width (even).
    pub d: usize,
    pub d_h: usize,
    pub d_a: usize,
    pub d_b: usize,
    pub heads: usize,
    pub g_att_layers: usize,
    pub fusion_rounds: usize,
    pub topdown_hidden: usize,
    pub f_ans_hidden: usize,
    pub vocab_size: usize,
    pub activation: Activation,
    pub afm_enabled: bool,
    pub ckdm_enabled: bool,
    pub ckdm_loss_enabled: bool,
    pub contrastive_mode: ContrastiveMode,
    pub lambda: f64,
    pub temperature: f64,
    pub query_pool: QueryPool,
}

impl ModelConfig {
    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            d_h: self.d_h,
            d_a: self.d_a,
            d_b: self.d_b,
            activation: self.activation,
            rounds: self.fusion_rounds,
        }
    }

    pub fn compound_config(&self) -> CompoundConfig {
        CompoundConfig {
            d: self.d,
            heads: self.heads,
            g_att_layers: self.g_att_layers,
        }
    }

    /// Width of the pooled content row entering the head projection.
    pub fn content_width(&self) -> usize {
        if self.afm_enabled {
            self.d_e + self.fusion_rounds * self.d_b
        } else {
            self.d_v
        }
    }

    pub fn answer_head(&self) -> Result<AnswerHeadParams> {
        let spec = MlpSpec::new(
            vec![2 * self.d, self.f_ans_hidden, self.vocab_size],
            self.activation,
        )?;
        AnswerHeadParams::new(spec, self.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion_config().validate()?;
        self.compound_config().validate()?;
        if self.vocab_size < 2 {
            return Err(Error::Config("vocabulary needs at least 2 answers".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "contrastive weight must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.topdown_hidden == 0 || self.f_ans_hidden == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

fn check_sample_widths<T: Scalar>(cfg: &ModelConfig, s: &SampleTensors<T>) -> Result<()> {
    let checks = [
        ("visual", s.visual.dims2()?.1, cfg.d_v),
        ("attributes", s.attributes.dims2()?.1, cfg.d_e),
        ("question", s.question.dims2()?.1, cfg.d_t),
        ("captions", s.captions.dims2()?.1, cfg.d_t),
        ("knowledge", s.knowledge.dims2()?.1, cfg.d_t),
    ];
    for (label, got, want) in checks {
        if got != want {
            return Err(Error::Config(format!(
                "sample '{}': {label} width {got} does not match configured {want}",
                s.id
            )));
        }
    }
    if s.targets.len() != cfg.vocab_size {
        return Err(Error::Config(format!(
            "sample '{}': {} targets vs vocabulary {}",
            s.id,
            s.targets.len(),
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Per-sample forward products the harness needs after the graph is gone.
pub struct SampleOutput<T: Scalar> {
    pub id: String,
    pub question_type: String,
    /// Detached raw answer scores, 1 x |vocab|.
    pub scores: Tensor<T>,
    /// Detached targets (as fed to the loss).
    pub targets: Tensor<T>,
    /// Cosine of the projected content row against the knowledge row;
    /// absent when distillation is off.
    pub positive_cosine: Option<T>,
}

pub struct BatchOutput<T: Scalar> {
    pub total: Var,
    pub l_vqa: Var,
    pub l_cl: Option<Var>,
    pub samples: Vec<SampleOutput<T>>,
}

/// Forward one batch and assemble the training objective.
///
/// The contrastive term requires at least two samples; singleton batches
/// (e.g. during evaluation) simply omit it.
pub fn forward_batch<T: Scalar>(
    sess: &mut Session<'_, T>,
    batch: &[SampleTensors<T>],
    cfg: &ModelConfig,
) -> Result<BatchOutput<T>> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let head = cfg.answer_head()?;
    let diag = Diagnostics::default();

    let mut outputs = Vec::with_capacity(batch.len());
    let mut vqa_terms = Vec::with_capacity(batch.len());
    let mut attr_rows = Vec::with_capacity(batch.len());
    let mut knowledge_rows = Vec::with_capacity(batch.len());

    for s in batch {
        check_sample_widths(cfg, s)?;
        // Node-count and finiteness invariants live on the graph type.
        let mgraph = fusion::MultimodalGraph::new(s.visual.clone(), s.attributes.clone())?;
        let g = sess.graph;
        let visual = g.input_labeled(
            mgraph.visual_nodes().clone(),
            format!("{}:visual", s.id),
        );
        let question = g.input_labeled(s.question.clone(), format!("{}:question", s.id));

        let content_rows = if cfg.afm_enabled {
            let attributes = g.input_labeled(
                mgraph.semantic_nodes().clone(),
                format!("{}:attributes", s.id),
            );
            let fused = fusion::fuse(sess, visual, attributes, &cfg.fusion_config(), "afm")?;
            fused.s1
        } else {
            visual
        };

        let (s_bar, f_bar) = if cfg.ckdm_enabled {
            let g = sess.graph;
            let knowledge = g.input_labeled(s.knowledge.clone(), format!("{}:knowledge", s.id));
            let captions = g.input_labeled(s.captions.clone(), format!("{}:captions", s.id));
            let state = ckdm::ckdm_forward(
                sess,
                question,
                knowledge,
                captions,
                content_rows,
                &cfg.compound_config(),
                cfg.topdown_hidden,
                cfg.query_pool,
                "ckdm",
            )?;
            (state.s_bar, state.f_bar)
        } else {
            let pooled_q = ckdm::pool_query(sess.graph, question, QueryPool::Mean)?;
            let q_proj = MlpSpec::linear(cfg.d_t, cfg.d)?;
            let cond = mlp_forward(sess, pooled_q, &q_proj, "cond.q_proj")?;
            let (s_bar, _) =
                ckdm::top_down_attend(sess, content_rows, cond, cfg.topdown_hidden, "cond.att_s")?;
            let f_bar = sess.constant(Tensor::zeros(&[1, cfg.d]));
            (s_bar, f_bar)
        };

        // Shared projection: head input and contrastive anchor.
        let s_proj_spec = MlpSpec::linear(cfg.content_width(), cfg.d)?;
        let s_proj = mlp_forward(sess, s_bar, &s_proj_spec, "head.s_proj")?;

        let scores = answer::predict(sess, s_proj, f_bar, &head, "head.f_ans")?;
        let l_vqa_i = answer::vqa_loss(sess.graph, scores, &s.targets)?;
        vqa_terms.push(l_vqa_i);

        let positive_cosine = if cfg.ckdm_enabled {
            let sp = sess.graph.value(s_proj);
            let fb = sess.graph.value(f_bar);
            Some(crate::nn::cosine_similarity(&sp, &fb, &diag)?)
        } else {
            None
        };

        attr_rows.push(s_proj);
        knowledge_rows.push(f_bar);
        outputs.push(SampleOutput {
            id: s.id.clone(),
            question_type: s.question_type.clone(),
            scores: sess.graph.value(scores),
            targets: s.targets.clone(),
            positive_cosine,
        });
    }

    let g = sess.graph;
    let mut vqa_sum = vqa_terms[0];
    for &t in &vqa_terms[1..] {
        vqa_sum = g.add(vqa_sum, t)?;
    }
    let l_vqa = g.scale(
        vqa_sum,
        T::one() / T::from_usize(batch.len()).expect("batch size fits scalar"),
    )?;

    let l_cl = if cfg.ckdm_enabled && cfg.ckdm_loss_enabled && batch.len() >= 2 {
        Some(ckdm::contrastive_loss(
            g,
            &attr_rows,
            &knowledge_rows,
            cfg.contrastive_mode,
            T::cast(cfg.temperature),
        )?)
    } else {
        None
    };

    let total = answer::total_loss(g, l_vqa, l_cl, T::cast(cfg.lambda))?;
    Ok(BatchOutput {
        total,
        l_vqa,
        l_cl,
        samples: outputs,
    })
}

/// Evaluate the full-pipeline loss on a fixed batch, optionally folding
/// gradients into the store. The shape expected by the gradient oracle.
pub fn batch_loss_fn<'a, T: Scalar>(
    batch: &'a [SampleTensors<T>],
    cfg: &'a ModelConfig,
) -> impl FnMut(&mut crate::params::ParameterStore<T>, bool) -> Result<T> + 'a {
    move |store, accumulate| {
        let g = crate::graph::Graph::new();
        let mut sess = Session::new(&g, store);
        let out = forward_batch(&mut sess, batch, cfg)?;
        if accumulate {
            let grads = g.backward(out.total)?;
            sess.fold_gradients(&grads)?;
        }
        g.scalar(out.total)
    }
}

/// Check analytic gradients of the whole pipeline — fusion, distillation,
/// answer head, composite loss — against central differences on a
/// two-sample synthetic fixture. f64 only.
pub fn pipeline_grad_check(
    model: &ModelConfig,
    fixture_seed: u64,
    store_seed: u64,
    eps: f64,
    tol: f64,
) -> Result<crate::gradcheck::GradCheckReport> {
    let fixture = crate::data::FixtureConfig {
        n_samples: 2,
        m_objects: 2,
        l_attributes: 2,
        d_v: model.d_v,
        d_e: model.d_e,
        d_t: model.d_t,
        n_t: 2,
        n_c: 2,
        n_p: 2,
        vocab_size: model.vocab_size,
        knowledge_streams: vec!["synthetic".to_string()],
        attribute_signal: true,
        min_margin: 0.0,
        seed: fixture_seed,
        split: crate::data::Split::Train,
    };
    let batch: Vec<SampleTensors<f64>> = fixture_batch(&fixture)?;
    let mut store = crate::params::ParameterStore::<f64>::new(store_seed);
    crate::gradcheck::grad_check(batch_loss_fn(&batch, model), &mut store, eps, tol)
}

/// Materialize fixture samples in memory at the working precision.
pub fn fixture_batch<T: Scalar>(
    cfg: &crate::data::FixtureConfig,
) -> Result<Vec<SampleTensors<T>>> {
    let samples = crate::data::fixture::synth_samples(cfg)?;
    samples
        .into_iter()
        .map(|s| {
            let mut targets = Tensor::<T>::zeros(&[1, cfg.vocab_size]);
            targets.set(0, s.answer_index, T::one());
            let parts: Vec<Tensor<T>> = s
                .knowledge
                .iter()
                .map(|(_, t)| t.cast::<T>())
                .collect();
            let refs: Vec<&Tensor<T>> = parts.iter().collect();
            Ok(SampleTensors {
                id: s.id,
                question_type: s.question_type,
                visual: s.visual.cast(),
                question: s.question.cast(),
                attributes: s.attributes.cast(),
                captions: s.captions.cast(),
                knowledge: Tensor::concat_rows(&refs)?,
                targets,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FixtureConfig;
    use crate::gradcheck::grad_check;
    use crate::graph::Graph;
    use crate::params::ParameterStore;

    pub(crate) fn tiny_config(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_v: 8,
            d_e: 8,
            d_t: 8,
            d: 8,
            d_h: 8,
            d_a: 8,
            d_b: 8,
            heads: 2,
            g_att_layers: 1,
            fusion_rounds: 1,
            topdown_hidden: 8,
            f_ans_hidden: 8,
            vocab_size,
            activation: Activation::Relu,
            afm_enabled: true,
            ckdm_enabled: true,
            ckdm_loss_enabled: true,
            contrastive_mode: ContrastiveMode::MatchedPair,
            lambda: 1.0,
            temperature: 1.0,
            query_pool: QueryPool::Mean,
        }
    }

    fn tiny_batch(n: usize) -> Vec<SampleTensors<f64>> {
        let cfg = FixtureConfig {
            n_samples: n,
            ..FixtureConfig::grad_check(40)
        };
        fixture_batch(&cfg).unwrap()
    }

    #[test]
    fn full_pipeline_grad_check_on_two_sample_fixture() {
        let cfg = tiny_config(4);
        let batch = tiny_batch(2);
        let mut store: ParameterStore<f64> = ParameterStore::new(7);
        let report = grad_check(batch_loss_fn(&batch, &cfg), &mut store, 1e-5, 1e-4).unwrap();
        assert!(
            report.passed(),
            "max {} at {:?} over {} entries",
            report.max_rel_error,
            report.worst,
            report.entries_checked
        );
    }

    #[test]
    fn toggles_change_the_parameter_set() {
        let batch = tiny_batch(2);
        let run = |afm: bool, ckdm_on: bool| {
            let mut cfg = tiny_config(4);
            cfg.afm_enabled = afm;
            cfg.ckdm_enabled = ckdm_on;
            cfg.ckdm_loss_enabled = ckdm_on;
            let mut store: ParameterStore<f64> = ParameterStore::new(1);
            let g = Graph::new();
            let mut sess = Session::new(&g, &mut store);
            forward_batch(&mut sess, &batch, &cfg).unwrap();
            store.names()
        };
        let full = run(true, true);
        let baseline = run(false, false);
        assert!(full.iter().any(|n| n.starts_with("afm.")));
        assert!(full.iter().any(|n| n.starts_with("ckdm.")));
        assert!(!baseline.iter().any(|n| n.starts_with("afm.")));
        assert!(!baseline.iter().any(|n| n.starts_with("ckdm.")));
        assert!(baseline.iter().any(|n| n.starts_with("cond.")));
    }

    #[test]
    fn baseline_never_reads_attribute_embeddings() {
        // With fusion off, replacing the attribute tensor must not change
        // any score.
        let mut cfg = tiny_config(4);
        cfg.afm_enabled = false;
        let mut batch = tiny_batch(2);
        let mut store: ParameterStore<f64> = ParameterStore::new(3);

        let run = |store: &mut ParameterStore<f64>, batch: &[SampleTensors<f64>]| {
            let g = Graph::new();
            let mut sess = Session::new(&g, store);
            let out = forward_batch(&mut sess, batch, &cfg).unwrap();
            out.samples[0].scores.clone()
        };
        let base = run(&mut store, &batch);
        batch[0].attributes = Tensor::filled(&[2, 8], 9.0);
        let altered = run(&mut store, &batch);
        assert_eq!(base, altered);
    }

    #[test]
    fn contrastive_term_needs_two_samples() {
        let cfg = tiny_config(4);
        let batch = tiny_batch(1);
        let mut store: ParameterStore<f64> = ParameterStore::new(5);
        let g = Graph::new();
        let mut sess = Session::new(&g, &mut store);
        let out = forward_batch(&mut sess, &batch, &cfg).unwrap();
        assert!(out.l_cl.is_none());
        assert!(out.samples[0].positive_cosine.is_some());
    }

    #[test]
    fn lambda_zero_reduces_total_to_vqa() {
        let mut cfg = tiny_config(4);
        cfg.lambda = 0.0;
        let batch = tiny_batch(2);
        let mut store: ParameterStore<f64> = ParameterStore::new(6);
        let g = Graph::new();
        let mut sess = Session::new(&g, &mut store);
        let out = forward_batch(&mut sess, &batch, &cfg).unwrap();
        assert_eq!(g.scalar(out.total).unwrap(), g.scalar(out.l_vqa).unwrap());
    }

    #[test]
    fn width_mismatch_names_the_sample() {
        let cfg = tiny_config(4);
        let mut batch = tiny_batch(1);
        batch[0].visual = Tensor::zeros(&[2, 5]);
        let mut store: ParameterStore<f64> = ParameterStore::new(6);
        let g = Graph::new();
        let mut sess = Session::new(&g, &mut store);
        let err = match forward_batch(&mut sess, &batch, &cfg) {
            Ok(_) => panic!("mismatched width must fail"),
            Err(e) => e,
        };
        assert!(err.to_string().contains("train-00000"), "{err}");
    }

    #[test]
    fn f32_forward_runs_and_stays_finite() {
        let cfg = tiny_config(4);
        let fix = FixtureConfig {
            n_samples: 2,
            ..FixtureConfig::grad_check(41)
        };
        let batch: Vec<SampleTensors<f32>> = fixture_batch(&fix).unwrap();
        let mut store: ParameterStore<f32> = ParameterStore::new(9);
        let g = Graph::new();
        let mut sess = Session::new(&g, &mut store);
        let out = forward_batch(&mut sess, &batch, &cfg).unwrap();
        assert!(g.scalar(out.total).unwrap().is_finite());
    }
}
