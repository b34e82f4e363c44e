//! Knowledge distillation: compound-token encoding of question and
//! knowledge streams, second-stage fusion with captions, top-down
//! attention pooling, and the batch contrastive alignment loss.
//!
//! The compound encoder maps each stream into half the embedding width,
//! cross-attends each half against the other, widens back by feature-axis
//! concatenation, then stacks both streams along the sequence axis and
//! runs joint self-attention. Feature-axis concatenation restores width d;
//! sequence-axis concatenation is what makes the tokens "compound".

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{mlp_forward, multi_head_cross_attention, self_attention_stack, MlpSpec};
use crate::params::{Init, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How a token sequence is reduced to the conditioning vector for
/// top-down attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryPool {
    Mean,
    First,
}

impl QueryPool {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean" => Some(QueryPool::Mean),
            "first" => Some(QueryPool::First),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QueryPool::Mean => "mean",
            QueryPool::First => "first",
        }
    }
}

/// Denominator structure of the contrastive loss.
///
/// `MatchedPair` builds each negative from another sample's own
/// (attribute, knowledge) pair; `CrossPair` scores the anchor against
/// other samples' knowledge vectors (standard in-batch negatives). Both
/// are kept; neither is asserted as the only right reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastiveMode {
    MatchedPair,
    CrossPair,
}

impl ContrastiveMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "matched_pair" => Some(ContrastiveMode::MatchedPair),
            "cross_pair" => Some(ContrastiveMode::CrossPair),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ContrastiveMode::MatchedPair => "matched_pair",
            ContrastiveMode::CrossPair => "cross_pair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompoundConfig {
    /// Full embedding width d; each stream is first mapped to d/2.
    pub d: usize,
    pub heads: usize,
    pub g_att_layers: usize,
}

impl CompoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "compound width must be positive and even, got {}",
                self.d
            )));
        }
        if self.heads == 0 || !(self.d / 2).is_multiple_of(self.heads) || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} heads must divide both {} and {}",
                self.heads,
                self.d / 2,
                self.d
            )));
        }
        if self.g_att_layers == 0 {
            return Err(Error::Config("at least one self-attention layer".into()));
        }
        Ok(())
    }
}

/// Map question tokens and knowledge tokens into half the embedding space:
/// T' = f_2(T), P' = f_1(P).
pub fn channel_split<T: Scalar>(
    sess: &mut Session<'_, T>,
    question: Var,
    knowledge: Var,
    cfg: &CompoundConfig,
    prefix: &str,
) -> Result<(Var, Var)> {
    cfg.validate()?;
    let (_, d_t) = sess.graph.dims2(question)?;
    let (_, d_p) = sess.graph.dims2(knowledge)?;
    let half = cfg.d / 2;
    let f2 = MlpSpec::linear(d_t, half)?;
    let f1 = MlpSpec::linear(d_p, half)?;
    let t_half = mlp_forward(sess, question, &f2, &format!("{prefix}.f2"))?;
    let p_half = mlp_forward(sess, knowledge, &f1, &format!("{prefix}.f1"))?;
    Ok((t_half, p_half))
}

/// Compound encoder output with detached attention-weight snapshots.
pub struct CompoundOutput<T: Scalar> {
    pub z: Var,
    pub h1_weights: Vec<Tensor<T>>,
    pub h2_weights: Vec<Tensor<T>>,
    pub g_att_weights: Vec<Vec<Tensor<T>>>,
}

/// Cross-attend the two half-width streams against each other, widen each
/// by feature-axis concatenation, stack along the sequence axis, and run
/// joint self-attention. Output: (n_t + n_p) x d.
pub fn compound_fuse<T: Scalar>(
    sess: &mut Session<'_, T>,
    t_half: Var,
    p_half: Var,
    cfg: &CompoundConfig,
    prefix: &str,
) -> Result<CompoundOutput<T>> {
    cfg.validate()?;
    let half = cfg.d / 2;
    for (name, v) in [("first", t_half), ("second", p_half)] {
        let (_, w) = sess.graph.dims2(v)?;
        if w != half {
            return Err(Error::Dimension(format!(
                "{prefix}: {name} stream width {w}, expected {half}"
            )));
        }
    }
    let h1 = multi_head_cross_attention(
        sess,
        t_half,
        p_half,
        p_half,
        cfg.heads,
        &format!("{prefix}.h1"),
    )?;
    let h2 = multi_head_cross_attention(
        sess,
        p_half,
        t_half,
        t_half,
        cfg.heads,
        &format!("{prefix}.h2"),
    )?;
    let g = sess.graph;
    let t_hat = g.concat_cols(&[t_half, h1.output])?;
    let p_hat = g.concat_cols(&[p_half, h2.output])?;
    let stacked = g.concat_rows(&[t_hat, p_hat])?;
    let joint = self_attention_stack(
        sess,
        stacked,
        cfg.g_att_layers,
        cfg.heads,
        &format!("{prefix}.g_att"),
    )?;
    Ok(CompoundOutput {
        z: joint.output,
        h1_weights: h1.weights,
        h2_weights: h2.weights,
        g_att_weights: joint.attention,
    })
}

/// Second-stage fusion of encoded tokens Z with caption tokens C through a
/// separately parameterized compound encoder. Output: (n_z + n_c) x d.
pub fn knowledge_caption_fuse<T: Scalar>(
    sess: &mut Session<'_, T>,
    z: Var,
    captions: Var,
    cfg: &CompoundConfig,
    prefix: &str,
) -> Result<CompoundOutput<T>> {
    let (z_half, c_half) = channel_split(sess, z, captions, cfg, prefix)?;
    compound_fuse(sess, z_half, c_half, cfg, prefix)
}

/// Reduce a token sequence to a single 1 x d conditioning row.
pub fn pool_query<T: Scalar>(g: &Graph<T>, z: Var, pool: QueryPool) -> Result<Var> {
    match pool {
        QueryPool::Mean => g.mean_rows(z),
        QueryPool::First => {
            let t = g.transpose(z)?;
            g.transpose(g.slice_cols(t, 0, 1)?)
        }
    }
}

/// Question-conditioned soft pooling over a set of rows.
///
/// Scores each row k as vᵀ·relu(W·[x_k ; z]), normalizes with softmax, and
/// returns the weighted sum along with the 1 x n weight row.
pub fn top_down_attend<T: Scalar>(
    sess: &mut Session<'_, T>,
    x: Var,
    z: Var,
    hidden: usize,
    prefix: &str,
) -> Result<(Var, Var)> {
    let (n, d_x) = sess.graph.dims2(x)?;
    let (zr, d_z) = sess.graph.dims2(z)?;
    if zr != 1 {
        return Err(Error::Dimension(format!(
            "{prefix}: conditioning must be a single row, got {zr}"
        )));
    }
    if hidden == 0 {
        return Err(Error::Config(format!(
            "{prefix}: hidden width must be positive"
        )));
    }
    let w_mat = sess.param(&format!("{prefix}.w"), &[d_x + d_z, hidden], Init::Xavier)?;
    let w_vec = sess.param(&format!("{prefix}.v"), &[hidden, 1], Init::Xavier)?;
    let g = sess.graph;
    let z_rows = g.broadcast_row(z, n)?;
    let cat = g.concat_cols(&[x, z_rows])?;
    let h = g.relu(g.matmul(cat, w_mat)?)?;
    let scores = g.matmul(h, w_vec)?;
    let weights = g.softmax_rows(g.transpose(scores)?)?;
    let pooled = g.matmul(weights, x)?;
    Ok((pooled, weights))
}

/// Contrastive loss over a batch, from graph nodes holding the projected
/// attribute rows and knowledge rows (each 1 x d). Returns a scalar node.
pub fn contrastive_loss<T: Scalar>(
    g: &Graph<T>,
    attr_rows: &[Var],
    knowledge_rows: &[Var],
    mode: ContrastiveMode,
    temperature: T,
) -> Result<Var> {
    let n = attr_rows.len();
    if n != knowledge_rows.len() {
        return Err(Error::Dimension(format!(
            "batch sides differ: {n} vs {}",
            knowledge_rows.len()
        )));
    }
    if n < 2 {
        return Err(Error::Domain(
            "contrastive loss needs a batch of at least 2 (no negatives otherwise)".into(),
        ));
    }
    if temperature <= T::zero() {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let inv_t = T::one() / temperature;

    // Diagonal cosines are shared by both modes.
    let diag: Vec<Var> = (0..n)
        .map(|i| g.cosine(attr_rows[i], knowledge_rows[i]))
        .collect::<Result<_>>()?;

    let mut total: Option<Var> = None;
    for i in 0..n {
        let pos = g.scale(diag[i], inv_t)?;
        let mut denom = g.exp(pos)?;
        for b in 0..n {
            if b == i {
                continue;
            }
            let neg_cos = match mode {
                ContrastiveMode::MatchedPair => diag[b],
                ContrastiveMode::CrossPair => g.cosine(attr_rows[i], knowledge_rows[b])?,
            };
            denom = g.add(denom, g.exp(g.scale(neg_cos, inv_t)?)?)?;
        }
        let term = g.sub(g.ln(denom)?, pos)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    g.scale(
        total.expect("n >= 2"),
        T::one() / T::from_usize(n).expect("batch size fits scalar"),
    )
}

/// Same loss evaluated directly from a cosine matrix, where `cos[i][j]`
/// scores sample i's attribute row against sample j's knowledge row. An
/// independent route used by closed-form and monotonicity checks.
pub fn contrastive_loss_from_cosines<T: Scalar>(
    cos: &Tensor<T>,
    mode: ContrastiveMode,
    temperature: T,
) -> Result<T> {
    let (n, m) = cos.dims2()?;
    if n != m {
        return Err(Error::Dimension(format!(
            "cosine matrix must be square, got {n}x{m}"
        )));
    }
    if n < 2 {
        return Err(Error::Domain(
            "contrastive loss needs a batch of at least 2 (no negatives otherwise)".into(),
        ));
    }
    let inv_t = T::one() / temperature;
    let mut total = T::zero();
    for i in 0..n {
        let pos = cos.at(i, i) * inv_t;
        let mut denom = pos.exp();
        for b in 0..n {
            if b == i {
                continue;
            }
            let c = match mode {
                ContrastiveMode::MatchedPair => cos.at(b, b),
                ContrastiveMode::CrossPair => cos.at(i, b),
            };
            denom += (c * inv_t).exp();
        }
        total = total + denom.ln() - pos;
    }
    Ok(total / T::from_usize(n).expect("batch size fits scalar"))
}

/// Everything one sample's distillation pass produces.
pub struct DistillationState<T: Scalar> {
    /// Encoded question+knowledge tokens, (n_t + n_p) x d.
    pub z: Var,
    /// Tokens after caption fusion, (n_t + n_p + n_c) x d.
    pub f: Var,
    /// Attention-pooled content row (width of the content rows).
    pub s_bar: Var,
    /// Attention-pooled knowledge row, width d.
    pub f_bar: Var,
    pub s_weights: Tensor<T>,
    pub f_weights: Tensor<T>,
    pub encoder: CompoundOutput<T>,
    pub caption_encoder: CompoundOutput<T>,
}

/// Full distillation pass for one sample: encode question+knowledge, fuse
/// with captions, pool a conditioning query, then attend over both the
/// content rows (S1 from attribute fusion) and the fused tokens.
#[allow(clippy::too_many_arguments)]
pub fn ckdm_forward<T: Scalar>(
    sess: &mut Session<'_, T>,
    question: Var,
    knowledge: Var,
    captions: Var,
    content_rows: Var,
    cfg: &CompoundConfig,
    topdown_hidden: usize,
    pool: QueryPool,
    prefix: &str,
) -> Result<DistillationState<T>> {
    let (t_half, p_half) =
        channel_split(sess, question, knowledge, cfg, &format!("{prefix}.enc"))?;
    let encoder = compound_fuse(sess, t_half, p_half, cfg, &format!("{prefix}.enc"))?;
    let caption_encoder =
        knowledge_caption_fuse(sess, encoder.z, captions, cfg, &format!("{prefix}.cap"))?;
    let zq = pool_query(sess.graph, encoder.z, pool)?;
    let (s_bar, s_w) = top_down_attend(
        sess,
        content_rows,
        zq,
        topdown_hidden,
        &format!("{prefix}.att_s"),
    )?;
    let (f_bar, f_w) = top_down_attend(
        sess,
        caption_encoder.z,
        zq,
        topdown_hidden,
        &format!("{prefix}.att_f"),
    )?;
    let s_weights = sess.graph.value(s_w);
    let f_weights = sess.graph.value(f_w);
    Ok(DistillationState {
        z: encoder.z,
        f: caption_encoder.z,
        s_bar,
        f_bar,
        s_weights,
        f_weights,
        encoder,
        caption_encoder,
    })
}
