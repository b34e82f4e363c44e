//! Answer prediction head, the multi-label VQA loss and the composite
//! training objective.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{mlp_forward, MlpSpec};
use crate::params::Session;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Answer-head shape: the score MLP plus the weight on the contrastive
/// term in the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerHeadParams {
    pub f_ans: MlpSpec,
    pub loss_weight: f64,
}

impl AnswerHeadParams {
    pub fn new(f_ans: MlpSpec, loss_weight: f64) -> Result<Self> {
        if loss_weight < 0.0 {
            return Err(Error::Config(format!(
                "contrastive loss weight must be non-negative, got {loss_weight}"
            )));
        }
        Ok(AnswerHeadParams { f_ans, loss_weight })
    }

    pub fn vocab_size(&self) -> usize {
        self.f_ans.output_width()
    }
}

/// Raw (pre-sigmoid) answer scores from the concatenated pooled attribute
/// row and pooled knowledge row. 1 x |vocab|.
pub fn predict<T: Scalar>(
    sess: &mut Session<'_, T>,
    attr_pooled: Var,
    knowledge_pooled: Var,
    head: &AnswerHeadParams,
    prefix: &str,
) -> Result<Var> {
    let (_, d_s) = sess.graph.dims2(attr_pooled)?;
    let (_, d_f) = sess.graph.dims2(knowledge_pooled)?;
    if d_s + d_f != head.f_ans.input_width() {
        return Err(Error::Config(format!(
            "{prefix}: pooled widths {d_s}+{d_f} do not match score MLP input {}",
            head.f_ans.input_width()
        )));
    }
    let joined = sess.graph.concat_cols(&[attr_pooled, knowledge_pooled])?;
    mlp_forward(sess, joined, &head.f_ans, prefix)
}

/// Index of the best score; ties break to the lowest index.
pub fn argmax<T: Scalar>(scores: &Tensor<T>) -> usize {
    let mut best = 0;
    let mut best_v = scores.data()[0];
    for (i, &v) in scores.data().iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Mean binary cross-entropy with logits against soft targets in [0, 1].
pub fn vqa_loss<T: Scalar>(g: &Graph<T>, scores: Var, targets: &Tensor<T>) -> Result<Var> {
    if targets.data().iter().any(|&t| t < T::zero() || t > T::one()) {
        return Err(Error::Domain("answer targets must lie in [0, 1]".into()));
    }
    g.bce_with_logits_mean(scores, targets)
}

/// L = L_vqa + λ · L_cl. Omitting the contrastive node drops the term.
pub fn total_loss<T: Scalar>(
    g: &Graph<T>,
    l_vqa: Var,
    l_cl: Option<Var>,
    lambda: T,
) -> Result<Var> {
    match l_cl {
        Some(cl) if lambda != T::zero() => g.add(l_vqa, g.scale(cl, lambda)?),
        _ => Ok(l_vqa),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::nn::Activation;
    use crate::params::ParameterStore;
    use crate::rng::SplitMix64;

    fn head(d_in: usize, vocab: usize) -> AnswerHeadParams {
        AnswerHeadParams::new(
            MlpSpec::new(vec![d_in, d_in, vocab], Activation::Relu).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_scores_and_argmax_zero() {
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(0);
        store.set_value("head.w0", Tensor::zeros(&[6, 6]));
        store.set_value("head.b0", Tensor::zeros(&[1, 6]));
        store.set_value("head.w1", Tensor::zeros(&[6, 2]));
        store.set_value("head.b1", Tensor::zeros(&[1, 2]));
        let mut sess = Session::new(&g, &mut store);
        let s = sess.constant(Tensor::row(vec![0.5, -0.3, 0.1]).unwrap());
        let f = sess.constant(Tensor::row(vec![1.0, 2.0, 3.0]).unwrap());
        let scores = predict(&mut sess, s, f, &head(6, 2), "head").unwrap();
        let v = g.value(scores);
        assert_eq!(v.shape(), &[1, 2]);
        assert!(v.data().iter().all(|&x| x == 0.0));
        assert_eq!(argmax(&v), 0);
    }

    #[test]
    fn two_answer_shape_contract() {
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(1);
        let mut sess = Session::new(&g, &mut store);
        let mut rng = SplitMix64::new(1);
        let s = sess.constant(Tensor::row((0..4).map(|_| rng.normal()).collect()).unwrap());
        let f = sess.constant(Tensor::row((0..4).map(|_| rng.normal()).collect()).unwrap());
        let scores = predict(&mut sess, s, f, &head(8, 2), "head").unwrap();
        assert_eq!(g.shape(scores), vec![1, 2]);
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let g = Graph::new();
        let mut store: ParameterStore<f64> = ParameterStore::new(1);
        let mut sess = Session::new(&g, &mut store);
        let s = sess.constant(Tensor::row(vec![1.0, 2.0]).unwrap());
        let f = sess.constant(Tensor::row(vec![3.0]).unwrap());
        let err = predict(&mut sess, s, f, &head(8, 2), "head").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn predict_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(2);
        let s_val = Tensor::row((0..3).map(|_| rng.normal()).collect::<Vec<f64>>()).unwrap();
        let f_val = Tensor::row((0..3).map(|_| rng.normal()).collect::<Vec<f64>>()).unwrap();
        let h = head(6, 4);
        let loss = |store: &mut ParameterStore<f64>, accumulate: bool| {
            let g = Graph::new();
            let mut sess = Session::new(&g, store);
            let s = sess.constant(s_val.clone());
            let f = sess.constant(f_val.clone());
            let scores = predict(&mut sess, s, f, &h, "head")?;
            let l = g.sum_all(g.mul(scores, scores)?)?;
            if accumulate {
                let grads = g.backward(l)?;
                sess.fold_gradients(&grads)?;
            }
            g.scalar(l)
        };
        let mut store = ParameterStore::new(3);
        let report = grad_check(loss, &mut store, 1e-6, 1e-4).unwrap();
        assert!(report.passed(), "max {}", report.max_rel_error);
    }

    #[test]
    #[allow(clippy::approx_constant)] // frozen hand values
    fn vqa_loss_hand_values() {
        let g: Graph<f64> = Graph::new();

        // Zero logits against 0.5 targets: ln 2 per entry.
        let scores = g.input(Tensor::row(vec![0.0, 0.0]).unwrap());
        let l = vqa_loss(&g, scores, &Tensor::row(vec![0.5, 0.5]).unwrap()).unwrap();
        assert!((g.scalar(l).unwrap() - 0.69315).abs() < 1e-5);

        // Saturated correct prediction.
        let low = g.input(Tensor::row(vec![-20.0, -20.0]).unwrap());
        let l0 = vqa_loss(&g, low, &Tensor::row(vec![0.0, 0.0]).unwrap()).unwrap();
        assert!(g.scalar(l0).unwrap() < 1e-8);

        // Linear tail for a confidently wrong logit.
        let high = g.input(Tensor::row(vec![20.0]).unwrap());
        let l20 = vqa_loss(&g, high, &Tensor::row(vec![0.0]).unwrap()).unwrap();
        assert!((g.scalar(l20).unwrap() - 20.0).abs() < 1e-6);
    }

    #[test]
    fn vqa_loss_is_non_negative_for_random_inputs() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..50 {
            let g: Graph<f64> = Graph::new();
            let n = 1 + rng.below(6);
            let scores = g.input(
                Tensor::row((0..n).map(|_| rng.uniform(-10.0, 10.0)).collect()).unwrap(),
            );
            let targets = Tensor::row((0..n).map(|_| rng.next_f64()).collect()).unwrap();
            let l = vqa_loss(&g, scores, &targets).unwrap();
            assert!(g.scalar(l).unwrap() >= 0.0);
        }
    }

    #[test]
    fn target_outside_unit_interval_rejected() {
        let g: Graph<f64> = Graph::new();
        let scores = g.input(Tensor::row(vec![0.0]).unwrap());
        let err = vqa_loss(&g, scores, &Tensor::row(vec![1.5]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn argmax_adding_constant_keeps_winner() {
        let scores = Tensor::row(vec![0.1f64, 0.9, 0.4]).unwrap();
        let winner = argmax(&scores);
        for c in [-5.0, 0.0, 3.5] {
            assert_eq!(argmax(&scores.map(|x| x + c)), winner);
        }
        // First-wins tie break.
        assert_eq!(argmax(&Tensor::row(vec![0.7f64, 0.7, 0.7]).unwrap()), 0);
    }

    #[test]
    fn total_loss_arithmetic() {
        let g: Graph<f64> = Graph::new();
        let vqa = g.input(Tensor::scalar(0.5));
        let cl = g.input(Tensor::scalar(0.7));

        let off = total_loss(&g, vqa, Some(cl), 0.0).unwrap();
        assert_eq!(g.scalar(off).unwrap(), 0.5);

        let on = total_loss(&g, vqa, Some(cl), 1.0).unwrap();
        assert!((g.scalar(on).unwrap() - 1.2).abs() < 1e-12);

        let none = total_loss(&g, vqa, None, 1.0).unwrap();
        assert_eq!(g.scalar(none).unwrap(), 0.5);
    }

    #[test]
    fn contrastive_branch_gradient_scales_with_lambda() {
        // d(total)/d(cl input) must scale linearly in λ.
        let grad_at = |lambda: f64| {
            let g: Graph<f64> = Graph::new();
            let vqa = g.input(Tensor::scalar(0.5));
            let cl_in = g.input(Tensor::scalar(0.7));
            let cl = g.mul(cl_in, cl_in).unwrap();
            let total = total_loss(&g, vqa, Some(cl), lambda).unwrap();
            let grads = g.backward(total).unwrap();
            grads.get(cl_in).unwrap().data()[0]
        };
        let g_half = grad_at(0.5);
        let g_one = grad_at(1.0);
        let g_two = grad_at(2.0);
        assert!((g_two / g_half - 4.0).abs() < 1e-12);
        assert!((g_half / g_one - 0.5).abs() < 1e-12);
    }

    #[test]
    fn total_loss_monotone_in_components() {
        let g: Graph<f64> = Graph::new();
        let eval = |v: f64, c: f64| {
            let vqa = g.input(Tensor::scalar(v));
            let cl = g.input(Tensor::scalar(c));
            g.scalar(total_loss(&g, vqa, Some(cl), 0.8).unwrap()).unwrap()
        };
        let base = eval(0.5, 0.7);
        assert!(eval(0.9, 0.7) > base);
        assert!(eval(0.5, 1.1) > base);
    }

    #[test]
    fn negative_lambda_rejected() {
        let spec = MlpSpec::new(vec![4, 2], Activation::Identity).unwrap();
        assert!(AnswerHeadParams::new(spec, -0.1).is_err());
    }
}
