//! Attribute fusion: a bipartite multimodal graph over visual object nodes
//! and semantic attribute nodes, fully connected across modalities, with
//! two aggregation passes.
//!
//! Both subgraphs are complete, so neighbourhoods never need an adjacency
//! structure: every semantic node neighbours every visual node and vice
//! versa. One relevance matrix drives both attention normalizations — over
//! semantic neighbours when updating visual nodes, over visual neighbours
//! when updating semantic nodes. Visual nodes update first; the semantic
//! update consumes the *already updated* visual representations, which the
//! type of [`UpdatedVisualNodes`] enforces at compile time.

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::nn::{mlp_forward, Activation, MlpSpec};
use crate::params::Session;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The two node sets of one sample's multimodal graph.
#[derive(Debug, Clone)]
pub struct MultimodalGraph<T: Scalar> {
    visual_nodes: Tensor<T>,
    semantic_nodes: Tensor<T>,
}

impl<T: Scalar> MultimodalGraph<T> {
    pub fn new(visual_nodes: Tensor<T>, semantic_nodes: Tensor<T>) -> Result<Self> {
        let (m, _) = visual_nodes.dims2()?;
        let (l, _) = semantic_nodes.dims2()?;
        if m == 0 || l == 0 {
            return Err(Error::Dimension(
                "both subgraphs need at least one node".into(),
            ));
        }
        if !visual_nodes.is_finite_all() || !semantic_nodes.is_finite_all() {
            return Err(Error::NonFinite("graph node features".into()));
        }
        Ok(MultimodalGraph {
            visual_nodes,
            semantic_nodes,
        })
    }

    pub fn visual_nodes(&self) -> &Tensor<T> {
        &self.visual_nodes
    }

    pub fn semantic_nodes(&self) -> &Tensor<T> {
        &self.semantic_nodes
    }

    pub fn num_visual(&self) -> usize {
        self.visual_nodes.shape()[0]
    }

    pub fn num_semantic(&self) -> usize {
        self.semantic_nodes.shape()[0]
    }
}

/// Widths of the fusion maps. The score maps are two-layer MLPs into d_h;
/// the projection maps are single linear layers into d_a / d_b.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionConfig {
    pub d_h: usize,
    pub d_a: usize,
    pub d_b: usize,
    pub activation: Activation,
    pub rounds: usize,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_h == 0 || self.d_a == 0 || self.d_b == 0 {
            return Err(Error::Config("fusion widths must be positive".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("at least one fusion round".into()));
        }
        Ok(())
    }
}

/// Relevance scores between every semantic node k and visual node j:
/// `r'[k][j] = f_v(v_j)ᵀ f_s(s_k)`. Output is L x M.
pub fn pairwise_relevance<T: Scalar>(
    sess: &mut Session<'_, T>,
    visual: Var,
    semantic: Var,
    cfg: &FusionConfig,
    prefix: &str,
) -> Result<Var> {
    let (_, d_v) = sess.graph.dims2(visual)?;
    let (_, d_e) = sess.graph.dims2(semantic)?;
    let f_v = MlpSpec::new(vec![d_v, cfg.d_h, cfg.d_h], cfg.activation)?;
    let f_s = MlpSpec::new(vec![d_e, cfg.d_h, cfg.d_h], cfg.activation)?;
    let enc_v = mlp_forward(sess, visual, &f_v, &format!("{prefix}.f_v"))?;
    let enc_s = mlp_forward(sess, semantic, &f_s, &format!("{prefix}.f_s"))?;
    let g = sess.graph;
    g.matmul(enc_s, g.transpose(enc_v)?)
}

/// Normalize relevance over each visual node's semantic neighbours:
/// columns of the L x M matrix sum to 1.
pub fn visual_attention_weights<T: Scalar>(
    sess: &Session<'_, T>,
    relevance: Var,
) -> Result<Var> {
    let g = sess.graph;
    g.transpose(g.softmax_rows(g.transpose(relevance)?)?)
}

/// Normalize relevance over each semantic node's visual neighbours:
/// rows of the L x M matrix sum to 1.
pub fn semantic_attention_weights<T: Scalar>(
    sess: &Session<'_, T>,
    relevance: Var,
) -> Result<Var> {
    sess.graph.softmax_rows(relevance)
}

/// Visual nodes after one aggregation pass; witnesses that the visual
/// update ran before the semantic one.
#[derive(Debug, Clone, Copy)]
pub struct UpdatedVisualNodes(Var);

impl UpdatedVisualNodes {
    pub fn var(&self) -> Var {
        self.0
    }
}

/// `v_j¹ = [v_j⁰ ; Σ_k rᵛ[k][j] · f_s'(s_k⁰)]`, width d_v + d_a.
pub fn update_visual_nodes<T: Scalar>(
    sess: &mut Session<'_, T>,
    visual: Var,
    semantic: Var,
    visual_weights: Var,
    cfg: &FusionConfig,
    prefix: &str,
) -> Result<UpdatedVisualNodes> {
    let (_, d_e) = sess.graph.dims2(semantic)?;
    let f_sp = MlpSpec::linear(d_e, cfg.d_a)?;
    let projected = mlp_forward(sess, semantic, &f_sp, &format!("{prefix}.f_sp"))?;
    let g = sess.graph;
    // (L x M)ᵀ · (L x d_a) = M x d_a, one weighted sum per visual node.
    let aggregated = g.matmul(g.transpose(visual_weights)?, projected)?;
    let v1 = g.concat_cols(&[visual, aggregated])?;
    Ok(UpdatedVisualNodes(v1))
}

/// `s_k¹ = [s_k⁰ ; Σ_j rˢ[k][j] · f_v'(v_j¹)]`, width d_e + d_b.
///
/// Takes [`UpdatedVisualNodes`] rather than a bare var: the aggregation is
/// defined over the already-updated visual representations.
pub fn update_semantic_nodes<T: Scalar>(
    sess: &mut Session<'_, T>,
    semantic: Var,
    updated_visual: UpdatedVisualNodes,
    semantic_weights: Var,
    cfg: &FusionConfig,
    prefix: &str,
) -> Result<Var> {
    let (_, d_v1) = sess.graph.dims2(updated_visual.var())?;
    let f_vp = MlpSpec::linear(d_v1, cfg.d_b)?;
    let projected = mlp_forward(sess, updated_visual.var(), &f_vp, &format!("{prefix}.f_vp"))?;
    let g = sess.graph;
    // (L x M) · (M x d_b) = L x d_b.
    let aggregated = g.matmul(semantic_weights, projected)?;
    g.concat_cols(&[semantic, aggregated])
}

/// Result of a full fusion pass, with detached weight snapshots for
/// normalization checks.
pub struct FuseOutput<T: Scalar> {
    pub v1: Var,
    pub s1: Var,
    pub visual_weights: Vec<Tensor<T>>,
    pub semantic_weights: Vec<Tensor<T>>,
}

/// Run `cfg.rounds` aggregation rounds: relevance, both weight maps,
/// visual update, then semantic update. Node widths grow by (d_a, d_b)
/// per round.
pub fn fuse<T: Scalar>(
    sess: &mut Session<'_, T>,
    visual: Var,
    semantic: Var,
    cfg: &FusionConfig,
    prefix: &str,
) -> Result<FuseOutput<T>> {
    cfg.validate()?;
    let mut v = visual;
    let mut s = semantic;
    let mut visual_weights = Vec::with_capacity(cfg.rounds);
    let mut semantic_weights = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let p = format!("{prefix}.r{round}");
        let relevance = pairwise_relevance(sess, v, s, cfg, &p)?;
        let rv = visual_attention_weights(sess, relevance)?;
        let rs = semantic_attention_weights(sess, relevance)?;
        visual_weights.push(sess.graph.value(rv));
        semantic_weights.push(sess.graph.value(rs));
        let v1 = update_visual_nodes(sess, v, s, rv, cfg, &p)?;
        let s1 = update_semantic_nodes(sess, s, v1, rs, cfg, &p)?;
        v = v1.var();
        s = s1;
    }
    Ok(FuseOutput {
        v1: v,
        s1: s,
        visual_weights,
        semantic_weights,
    })
}

/// Naive per-edge reference for [`fuse`] with a single round: explicit
/// loops over all L·M edges, no vectorization shared with the graph path.
///
/// Parameters are read from the same store by name so the two routes use
/// identical weights.
pub fn fuse_loop_oracle<T: Scalar>(
    store: &crate::params::ParameterStore<T>,
    graph_in: &MultimodalGraph<T>,
    cfg: &FusionConfig,
    prefix: &str,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let p = format!("{prefix}.r0");
    let m = graph_in.num_visual();
    let l = graph_in.num_semantic();

    let mlp = |input: &[T], pfx: &str, widths: &[usize], act: Activation| -> Vec<T> {
        let layers = widths.len() - 1;
        let mut h = input.to_vec();
        for i in 0..layers {
            let w = store.value(&format!("{pfx}.w{i}")).expect("param exists");
            let b = store.value(&format!("{pfx}.b{i}")).expect("param exists");
            let (w_in, w_out) = w.dims2().expect("rank 2");
            let mut next = vec![T::zero(); w_out];
            for (o, nv) in next.iter_mut().enumerate() {
                let mut acc = b.at(0, o);
                for (r, &hv) in h.iter().enumerate().take(w_in) {
                    acc += hv * w.at(r, o);
                }
                *nv = acc;
            }
            if i + 1 < layers {
                for v in &mut next {
                    *v = match act {
                        Activation::Relu => {
                            if *v > T::zero() {
                                *v
                            } else {
                                T::zero()
                            }
                        }
                        Activation::Gelu => {
                            let x = v.to_f64_lossy();
                            let c = (2.0 / std::f64::consts::PI).sqrt();
                            let u = c * (x + 0.044715 * x * x * x);
                            T::cast(0.5 * x * (1.0 + u.tanh()))
                        }
                        Activation::Identity => *v,
                    };
                }
            }
            h = next;
        }
        h
    };

    let d_v = graph_in.visual_nodes().shape()[1];
    let d_e = graph_in.semantic_nodes().shape()[1];
    let score_v: Vec<Vec<T>> = (0..m)
        .map(|j| {
            mlp(
                graph_in.visual_nodes().row_slice(j),
                &format!("{p}.f_v"),
                &[d_v, cfg.d_h, cfg.d_h],
                cfg.activation,
            )
        })
        .collect();
    let score_s: Vec<Vec<T>> = (0..l)
        .map(|k| {
            mlp(
                graph_in.semantic_nodes().row_slice(k),
                &format!("{p}.f_s"),
                &[d_e, cfg.d_h, cfg.d_h],
                cfg.activation,
            )
        })
        .collect();

    // r'[k][j] per edge.
    let mut relevance = vec![vec![T::zero(); m]; l];
    for k in 0..l {
        for j in 0..m {
            let mut dot = T::zero();
            for h in 0..cfg.d_h {
                dot += score_v[j][h] * score_s[k][h];
            }
            relevance[k][j] = dot;
        }
    }

    // Per visual node: softmax over its L semantic neighbours.
    let mut rv = vec![vec![T::zero(); m]; l];
    for j in 0..m {
        let col: Vec<T> = (0..l).map(|k| relevance[k][j]).collect();
        let w = crate::nn::softmax_values(&col)?;
        for k in 0..l {
            rv[k][j] = w[k];
        }
    }
    // Per semantic node: softmax over its M visual neighbours.
    let mut rs = vec![vec![T::zero(); m]; l];
    for k in 0..l {
        let w = crate::nn::softmax_values(&relevance[k])?;
        rs[k].copy_from_slice(&w);
    }

    // Visual update, one edge at a time.
    let proj_s: Vec<Vec<T>> = (0..l)
        .map(|k| {
            mlp(
                graph_in.semantic_nodes().row_slice(k),
                &format!("{p}.f_sp"),
                &[d_e, cfg.d_a],
                Activation::Identity,
            )
        })
        .collect();
    let mut v1_rows: Vec<Vec<T>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut row = graph_in.visual_nodes().row_slice(j).to_vec();
        let mut agg = vec![T::zero(); cfg.d_a];
        for k in 0..l {
            for (a, &pv) in agg.iter_mut().zip(proj_s[k].iter()) {
                *a += rv[k][j] * pv;
            }
        }
        row.extend_from_slice(&agg);
        v1_rows.push(row);
    }

    // Semantic update over the already-updated visual rows.
    let proj_v: Vec<Vec<T>> = v1_rows
        .iter()
        .map(|row| {
            mlp(
                row,
                &format!("{p}.f_vp"),
                &[d_v + cfg.d_a, cfg.d_b],
                Activation::Identity,
            )
        })
        .collect();
    let mut s1_rows: Vec<Vec<T>> = Vec::with_capacity(l);
    for k in 0..l {
        let mut row = graph_in.semantic_nodes().row_slice(k).to_vec();
        let mut agg = vec![T::zero(); cfg.d_b];
        for j in 0..m {
            for (a, &pv) in agg.iter_mut().zip(proj_v[j].iter()) {
                *a += rs[k][j] * pv;
            }
        }
        row.extend_from_slice(&agg);
        s1_rows.push(row);
    }

    Ok((Tensor::from_rows(&v1_rows)?, Tensor::from_rows(&s1_rows)?))
}
