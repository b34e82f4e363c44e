//! Shared differentiable building blocks: MLPs, softmax, multi-head
//! attention, pre-norm self-attention blocks and cosine similarity.
//!
//! Token sets in this model (objects, attributes, knowledge tokens) are
//! unordered, so nothing here adds positional encodings; permutation
//! behaviour is part of the contract and is tested as such.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Init, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Identity,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "gelu" => Some(Activation::Gelu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
            Activation::Identity => "identity",
        }
    }

    pub fn apply<T: Scalar>(self, g: &Graph<T>, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Gelu => g.gelu(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Widths of an MLP, input first, plus the activation applied between
/// layers (never after the last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::Config(
                "an MLP needs an input width and at least one layer".into(),
            ));
        }
        if layer_widths.contains(&0) {
            return Err(Error::Config(format!(
                "MLP widths must be positive, got {layer_widths:?}"
            )));
        }
        Ok(MlpSpec {
            layer_widths,
            activation,
        })
    }

    pub fn linear(d_in: usize, d_out: usize) -> Result<Self> {
        MlpSpec::new(vec![d_in, d_out], Activation::Identity)
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated non-empty")
    }
}

/// Apply an MLP to an n x d_in input. Parameters live under
/// `{prefix}.w{i}` / `{prefix}.b{i}`.
pub fn mlp_forward<T: Scalar>(
    sess: &mut Session<'_, T>,
    x: Var,
    spec: &MlpSpec,
    prefix: &str,
) -> Result<Var> {
    let (_, d_in) = sess.graph.dims2(x)?;
    if d_in != spec.input_width() {
        return Err(Error::Dimension(format!(
            "{prefix}: input width {d_in} does not match first layer width {}",
            spec.input_width()
        )));
    }
    let mut h = x;
    let layers = spec.layer_widths.len() - 1;
    for i in 0..layers {
        let (w_in, w_out) = (spec.layer_widths[i], spec.layer_widths[i + 1]);
        let w = sess.param(&format!("{prefix}.w{i}"), &[w_in, w_out], Init::Xavier)?;
        let b = sess.param(&format!("{prefix}.b{i}"), &[1, w_out], Init::Zeros)?;
        h = sess.graph.add_bias(sess.graph.matmul(h, w)?, b)?;
        if i + 1 < layers {
            h = spec.activation.apply(sess.graph, h)?;
        }
    }
    Ok(h)
}

/// Numerically stable softmax over a raw score slice.
pub fn softmax_values<T: Scalar>(scores: &[T]) -> Result<Vec<T>> {
    if scores.is_empty() {
        return Err(Error::Domain("softmax of an empty score vector".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("softmax requires finite scores".into()));
    }
    let max = scores
        .iter()
        .copied()
        .fold(scores[0], |m, x| if x > m { x } else { m });
    let exps: Vec<T> = scores.iter().map(|&x| (x - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Softmax of a score vector (rank-1 or a single row), shape-preserving.
pub fn softmax<T: Scalar>(scores: &Tensor<T>) -> Result<Tensor<T>> {
    let data = softmax_values(scores.data())?;
    Tensor::new(scores.shape().to_vec(), data)
}

/// Output of an attention call plus a detached snapshot of its weights,
/// one n_q x n_k matrix per head. Weight rows sum to 1.
pub struct AttentionOutput<T: Scalar> {
    pub output: Var,
    pub weights: Vec<Tensor<T>>,
}

/// Multi-head scaled dot-product attention. Query attends over key/value;
/// output has the query's shape. Scores are divided by sqrt(d / heads).
pub fn multi_head_cross_attention<T: Scalar>(
    sess: &mut Session<'_, T>,
    query: Var,
    key: Var,
    value: Var,
    heads: usize,
    prefix: &str,
) -> Result<AttentionOutput<T>> {
    let (_, d) = sess.graph.dims2(query)?;
    let (n_k, dk) = sess.graph.dims2(key)?;
    let (n_v, dv) = sess.graph.dims2(value)?;
    if dk != d || dv != d {
        return Err(Error::Dimension(format!(
            "{prefix}: query width {d} vs key {dk} / value {dv}"
        )));
    }
    if n_k != n_v {
        return Err(Error::Dimension(format!(
            "{prefix}: key rows {n_k} vs value rows {n_v}"
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "{prefix}: width {d} not divisible by {heads} heads"
        )));
    }
    let d_head = d / heads;
    let scale = T::cast(1.0 / (d_head as f64).sqrt());

    let g = sess.graph;
    let wq = sess.param(&format!("{prefix}.wq"), &[d, d], Init::Xavier)?;
    let bq = sess.param(&format!("{prefix}.bq"), &[1, d], Init::Zeros)?;
    // No key bias: a bias shared by every key row cancels inside softmax,
    // leaving a parameter with identically zero gradient.
    let wk = sess.param(&format!("{prefix}.wk"), &[d, d], Init::Xavier)?;
    let wv = sess.param(&format!("{prefix}.wv"), &[d, d], Init::Xavier)?;
    let bv = sess.param(&format!("{prefix}.bv"), &[1, d], Init::Zeros)?;
    let wo = sess.param(&format!("{prefix}.wo"), &[d, d], Init::Xavier)?;
    let bo = sess.param(&format!("{prefix}.bo"), &[1, d], Init::Zeros)?;

    let q = g.add_bias(g.matmul(query, wq)?, bq)?;
    let k = g.matmul(key, wk)?;
    let v = g.add_bias(g.matmul(value, wv)?, bv)?;

    let mut contexts = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let lo = h * d_head;
        let hi = lo + d_head;
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let scores = g.scale(g.matmul(qh, g.transpose(kh)?)?, scale)?;
        let w = g.softmax_rows(scores)?;
        weights.push(g.value(w));
        contexts.push(g.matmul(w, vh)?);
    }
    let ctx = g.concat_cols(&contexts)?;
    let output = g.add_bias(g.matmul(ctx, wo)?, bo)?;
    Ok(AttentionOutput { output, weights })
}

/// Attention weights gathered from a stack, indexed `[layer][head]`.
pub struct StackOutput<T: Scalar> {
    pub output: Var,
    pub attention: Vec<Vec<Tensor<T>>>,
}

/// Stack of pre-norm residual blocks (self-attention sublayer, then a
/// position-wise two-layer MLP sublayer) followed by a final layer norm.
pub fn self_attention_stack<T: Scalar>(
    sess: &mut Session<'_, T>,
    x: Var,
    layers: usize,
    heads: usize,
    prefix: &str,
) -> Result<StackOutput<T>> {
    if layers == 0 {
        return Err(Error::Config(format!("{prefix}: at least one layer")));
    }
    let (_, d) = sess.graph.dims2(x)?;
    let hidden = 2 * d;
    let mut h = x;
    let mut attention = Vec::with_capacity(layers);
    for l in 0..layers {
        let g = sess.graph;
        let ln1_g = sess.param(&format!("{prefix}.l{l}.ln1.g"), &[1, d], Init::Ones)?;
        let ln1_b = sess.param(&format!("{prefix}.l{l}.ln1.b"), &[1, d], Init::Zeros)?;
        let normed = g.layer_norm_rows(h, ln1_g, ln1_b)?;
        let attn = multi_head_cross_attention(
            sess,
            normed,
            normed,
            normed,
            heads,
            &format!("{prefix}.l{l}.attn"),
        )?;
        attention.push(attn.weights);
        let g = sess.graph;
        h = g.add(h, attn.output)?;

        let ln2_g = sess.param(&format!("{prefix}.l{l}.ln2.g"), &[1, d], Init::Ones)?;
        let ln2_b = sess.param(&format!("{prefix}.l{l}.ln2.b"), &[1, d], Init::Zeros)?;
        let g = sess.graph;
        let normed2 = g.layer_norm_rows(h, ln2_g, ln2_b)?;
        let w1 = sess.param(&format!("{prefix}.l{l}.ffn.w0"), &[d, hidden], Init::Xavier)?;
        let b1 = sess.param(&format!("{prefix}.l{l}.ffn.b0"), &[1, hidden], Init::Zeros)?;
        let w2 = sess.param(&format!("{prefix}.l{l}.ffn.w1"), &[hidden, d], Init::Xavier)?;
        let b2 = sess.param(&format!("{prefix}.l{l}.ffn.b1"), &[1, d], Init::Zeros)?;
        let g = sess.graph;
        let mid = g.relu(g.add_bias(g.matmul(normed2, w1)?, b1)?)?;
        let ffn = g.add_bias(g.matmul(mid, w2)?, b2)?;
        h = g.add(h, ffn)?;
    }
    let fin_g = sess.param(&format!("{prefix}.final_ln.g"), &[1, d], Init::Ones)?;
    let fin_b = sess.param(&format!("{prefix}.final_ln.b"), &[1, d], Init::Zeros)?;
    let output = sess.graph.layer_norm_rows(h, fin_g, fin_b)?;
    Ok(StackOutput { output, attention })
}

/// Counters for numeric edge cases that are survived rather than raised.
#[derive(Debug, Default)]
pub struct Diagnostics {
    pub zero_norm_clamps: Cell<u64>,
}

/// Cosine similarity of two equal-length vectors, in [-1, 1].
///
/// A zero-norm side is clamped to 1e-12 and counted in `diag` instead of
/// producing NaN.
pub fn cosine_similarity<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, diag: &Diagnostics) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let floor = T::cast(1e-12);
    let mut dot = T::zero();
    let mut qa = T::zero();
    let mut qb = T::zero();
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        dot += x * y;
        qa += x * x;
        qb += y * y;
    }
    let mut na = qa.sqrt();
    if na < floor {
        na = floor;
        diag.zero_norm_clamps.set(diag.zero_norm_clamps.get() + 1);
    }
    let mut nb = qb.sqrt();
    if nb < floor {
        nb = floor;
        diag.zero_norm_clamps.set(diag.zero_norm_clamps.get() + 1);
    }
    Ok(dot / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParameterStore;
    use crate::rng::SplitMix64;

    fn random_matrix(rng: &mut SplitMix64, n: usize, d: usize) -> Tensor<f64> {
        let data: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        Tensor::new(vec![n, d], data).unwrap()
    }

    // ---- mlp ----

    #[test]
    fn mlp_identity_single_layer_passes_input_through() {
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(0);
        store.set_value(
            "m.w0",
            Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        );
        store.set_value("m.b0", Tensor::row(vec![0.0, 0.0]).unwrap());
        let mut sess = Session::new(&g, &mut store);
        let x = sess.constant(Tensor::row(vec![1.0, 2.0]).unwrap());
        let spec = MlpSpec::new(vec![2, 2], Activation::Identity).unwrap();
        let y = mlp_forward(&mut sess, x, &spec, "m").unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn mlp_relu_two_layer_hand_value() {
        // First layer identity, relu zeroes the -1, second layer sums.
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(0);
        store.set_value(
            "m.w0",
            Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        );
        store.set_value("m.b0", Tensor::row(vec![0.0, 0.0]).unwrap());
        store.set_value("m.w1", Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        store.set_value("m.b1", Tensor::row(vec![0.0]).unwrap());
        let mut sess = Session::new(&g, &mut store);
        let x = sess.constant(Tensor::row(vec![1.0, -1.0]).unwrap());
        let spec = MlpSpec::new(vec![2, 2, 1], Activation::Relu).unwrap();
        let y = mlp_forward(&mut sess, x, &spec, "m").unwrap();
        assert_eq!(g.value(y).data(), &[1.0]);
    }

    #[test]
    fn mlp_width_mismatch_names_layer() {
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(0);
        let mut sess = Session::new(&g, &mut store);
        let x = sess.constant(Tensor::row(vec![1.0, 2.0, 3.0]).unwrap());
        let spec = MlpSpec::new(vec![2, 2], Activation::Relu).unwrap();
        let err = mlp_forward(&mut sess, x, &spec, "scores").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("scores"), "{msg}");
    }

    #[test]
    fn mlp_spec_needs_a_layer() {
        assert!(MlpSpec::new(vec![4], Activation::Relu).is_err());
        assert!(MlpSpec::new(vec![4, 0], Activation::Relu).is_err());
    }

    // ---- softmax ----

    #[test]
    fn softmax_symmetric_pair() {
        let out = softmax(&Tensor::row(vec![0.0f64, 0.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_hand_value() {
        let out = softmax(&Tensor::row(vec![1.0f64, 0.0]).unwrap()).unwrap();
        assert!((out.data()[0] - 0.73106).abs() < 1e-5);
        assert!((out.data()[1] - 0.26894).abs() < 1e-5);
    }

    #[test]
    fn softmax_single_element_is_one() {
        for x in [-50.0f64, 0.0, 3.25, 1e6] {
            let out = softmax(&Tensor::row(vec![x]).unwrap()).unwrap();
            assert_eq!(out.data(), &[1.0]);
        }
    }

    #[test]
    fn softmax_empty_and_non_finite_rejected() {
        assert!(matches!(softmax_values::<f64>(&[]), Err(Error::Domain(_))));
        assert!(matches!(
            softmax_values(&[1.0, f64::NAN]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn softmax_properties_over_seeds() {
        // Positivity, sum-to-one within 1e-9 and shift invariance.
        for seed in 0..100u64 {
            let mut rng = SplitMix64::new(seed);
            let n = 1 + rng.below(12);
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform(-8.0, 8.0)).collect();
            let t = Tensor::row(scores.clone()).unwrap();
            let out = softmax(&t).unwrap();
            assert!(out.data().iter().all(|&p| p > 0.0));
            assert!((out.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shift = rng.uniform(-5.0, 5.0);
            let shifted = Tensor::row(scores.iter().map(|s| s + shift).collect()).unwrap();
            let out2 = softmax(&shifted).unwrap();
            assert!(out.max_abs_diff(&out2) < 1e-9);
        }
    }

    // ---- attention ----

    #[test]
    fn single_key_weights_are_exactly_one() {
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(4);
        let mut sess = Session::new(&g, &mut store);
        let mut rng = SplitMix64::new(5);
        let q = sess.constant(random_matrix(&mut rng, 3, 8));
        let kv = sess.constant(random_matrix(&mut rng, 1, 8));
        let out = multi_head_cross_attention(&mut sess, q, kv, kv, 2, "att").unwrap();
        for head in &out.weights {
            assert_eq!(head.shape(), &[3, 1]);
            assert!(head.data().iter().all(|&w| w == 1.0));
        }
    }

    #[test]
    fn duplicated_key_rows_match_single_row() {
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(4);
        let mut rng = SplitMix64::new(6);
        let qt = random_matrix(&mut rng, 2, 8);
        let row = random_matrix(&mut rng, 1, 8);
        let doubled = Tensor::concat_rows(&[&row, &row]).unwrap();

        let mut sess = Session::new(&g, &mut store);
        let q = sess.constant(qt.clone());
        let kv1 = sess.constant(row);
        let out1 = multi_head_cross_attention(&mut sess, q, kv1, kv1, 2, "att").unwrap();
        let v1 = g.value(out1.output);

        let g2 = Graph::new();
        let mut sess2 = Session::new(&g2, &mut store);
        let q2 = sess2.constant(qt);
        let kv2 = sess2.constant(doubled);
        let out2 = multi_head_cross_attention(&mut sess2, q2, kv2, kv2, 2, "att").unwrap();
        let v2 = g2.value(out2.output);

        assert!(v1.max_abs_diff(&v2) < 1e-6);
    }

    #[test]
    fn joint_key_value_permutation_leaves_output_unchanged() {
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(4);
        let mut rng = SplitMix64::new(7);
        let qt = random_matrix(&mut rng, 2, 8);
        let kvt = random_matrix(&mut rng, 5, 8);
        let perm = SplitMix64::new(1).permutation(5);

        let mut sess = Session::new(&g, &mut store);
        let q = sess.constant(qt.clone());
        let kv = sess.constant(kvt.clone());
        let base = multi_head_cross_attention(&mut sess, q, kv, kv, 2, "att").unwrap();
        let base_v = g.value(base.output);

        let g2 = Graph::new();
        let mut sess2 = Session::new(&g2, &mut store);
        let q2 = sess2.constant(qt);
        let kv2 = sess2.constant(kvt.permute_rows(&perm).unwrap());
        let permuted = multi_head_cross_attention(&mut sess2, q2, kv2, kv2, 2, "att").unwrap();
        let perm_v = g2.value(permuted.output);

        assert!(base_v.max_abs_diff(&perm_v) < 1e-6);
    }

    #[test]
    fn head_divisibility_enforced() {
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(4);
        let mut sess = Session::new(&g, &mut store);
        let mut rng = SplitMix64::new(5);
        let q = sess.constant(random_matrix(&mut rng, 2, 6));
        match multi_head_cross_attention(&mut sess, q, q, q, 4, "att") {
            Err(Error::Config(_)) => {}
            Err(other) => panic!("expected configuration error, got {other}"),
            Ok(_) => panic!("width 6 with 4 heads must be rejected"),
        }
    }

    // ---- self-attention stack ----

    #[test]
    fn zero_weight_stack_reduces_to_final_layer_norm() {
        let d = 6;
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(2);
        let mut rng = SplitMix64::new(8);
        let xt = random_matrix(&mut rng, 4, d);

        // Materialize parameters once, then zero every projection weight.
        {
            let mut sess = Session::new(&g, &mut store);
            let x = sess.constant(xt.clone());
            self_attention_stack(&mut sess, x, 1, 2, "stk").unwrap();
        }
        for name in store.names() {
            if name.contains(".attn.") || name.contains(".ffn.") {
                let shape = store.value(&name).unwrap().shape().to_vec();
                store.set_value(&name, Tensor::zeros(&shape));
            }
        }

        let g2 = Graph::new();
        let mut sess = Session::new(&g2, &mut store);
        let x = sess.constant(xt.clone());
        let out = self_attention_stack(&mut sess, x, 1, 2, "stk").unwrap();
        let got = g2.value(out.output);

        // Hand-composed oracle: plain row layer norm of the raw input.
        let g3: Graph<f64> = Graph::new();
        let xi = g3.input(xt);
        let gamma = g3.input(Tensor::filled(&[1, d], 1.0));
        let beta = g3.input(Tensor::zeros(&[1, d]));
        let expect = g3.value(g3.layer_norm_rows(xi, gamma, beta).unwrap());

        assert!(got.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn stack_preserves_wide_shape() {
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(3);
        let mut sess = Session::new(&g, &mut store);
        let mut rng = SplitMix64::new(9);
        let x = sess.constant(random_matrix(&mut rng, 7, 512));
        let out = self_attention_stack(&mut sess, x, 5, 8, "stk").unwrap();
        assert_eq!(g.shape(out.output), vec![7, 512]);
        assert_eq!(out.attention.len(), 5);
        assert_eq!(out.attention[0].len(), 8);
    }

    #[test]
    fn stack_is_permutation_equivariant() {
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(13);
        let mut rng = SplitMix64::new(10);
        let xt = random_matrix(&mut rng, 5, 8);
        let perm = SplitMix64::new(2).permutation(5);

        let mut sess = Session::new(&g, &mut store);
        let x = sess.constant(xt.clone());
        let base = self_attention_stack(&mut sess, x, 2, 2, "stk").unwrap();
        let base_v = g.value(base.output).permute_rows(&perm).unwrap();

        let g2 = Graph::new();
        let mut sess2 = Session::new(&g2, &mut store);
        let x2 = sess2.constant(xt.permute_rows(&perm).unwrap());
        let permuted = self_attention_stack(&mut sess2, x2, 2, 2, "stk").unwrap();
        let perm_v = g2.value(permuted.output);

        assert!(base_v.max_abs_diff(&perm_v) < 1e-6);
    }

    // ---- cosine ----

    #[test]
    #[allow(clippy::approx_constant)] // frozen hand value
    fn cosine_hand_values() {
        let diag = Diagnostics::default();
        let a = Tensor::row(vec![3.0f64, 4.0]).unwrap();
        assert!((cosine_similarity(&a, &a, &diag).unwrap() - 1.0).abs() < 1e-12);

        let e1 = Tensor::row(vec![1.0f64, 0.0]).unwrap();
        let e2 = Tensor::row(vec![0.0f64, 1.0]).unwrap();
        assert_eq!(cosine_similarity(&e1, &e2, &diag).unwrap(), 0.0);

        let diag2 = Diagnostics::default();
        let a = Tensor::row(vec![1.0f64, 1.0]).unwrap();
        let b = Tensor::row(vec![1.0f64, 0.0]).unwrap();
        let c = cosine_similarity(&a, &b, &diag2).unwrap();
        assert!((c - 0.70711).abs() < 1e-5);
        assert_eq!(diag2.zero_norm_clamps.get(), 0);
    }

    #[test]
    fn cosine_scale_invariance() {
        let diag = Diagnostics::default();
        let a = Tensor::row(vec![0.3f64, -0.8, 0.1]).unwrap();
        let b = Tensor::row(vec![1.2f64, 0.4, -0.9]).unwrap();
        let base = cosine_similarity(&a, &b, &diag).unwrap();
        for alpha in [0.5f64, 2.0, 10.0] {
            let scaled = cosine_similarity(&a.scale(alpha), &b, &diag).unwrap();
            assert!((scaled - base).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_zero_norm_counts_and_never_nan() {
        let diag = Diagnostics::default();
        let zero = Tensor::row(vec![0.0f64, 0.0]).unwrap();
        let b = Tensor::row(vec![1.0f64, 2.0]).unwrap();
        let c = cosine_similarity(&zero, &b, &diag).unwrap();
        assert!(c.is_finite());
        assert_eq!(diag.zero_norm_clamps.get(), 1);
        let c2 = cosine_similarity(&zero, &zero, &diag).unwrap();
        assert!(c2.is_finite());
        assert_eq!(diag.zero_norm_clamps.get(), 3);
    }
}
