//! Adaptive-moment gradient descent with decoupled weight decay.

use std::collections::BTreeMap;

use crate::params::ParameterStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct AdamW<T: Scalar> {
    pub learning_rate: T,
    pub weight_decay: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u32,
    first_moment: BTreeMap<String, Tensor<T>>,
    second_moment: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(learning_rate: f64, weight_decay: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamW {
            learning_rate: T::cast(learning_rate),
            weight_decay: T::cast(weight_decay),
            beta1: T::cast(beta1),
            beta2: T::cast(beta2),
            eps: T::cast(eps),
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    /// One update over every parameter from its accumulated gradient.
    /// Weight decay is applied directly to the parameter, outside the
    /// adaptive scaling.
    pub fn step(&mut self, params: &mut ParameterStore<T>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        let (lr, wd, eps) = (self.learning_rate, self.weight_decay, self.eps);
        let first = &mut self.first_moment;
        let second = &mut self.second_moment;

        params.update_values(|name, value, grad| {
            let m = first
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            let v = second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            let value_data = value.data_mut();
            for i in 0..value_data.len() {
                let g = grad.data()[i];
                let mi = b1 * m.data()[i] + (T::one() - b1) * g;
                let vi = b2 * v.data()[i] + (T::one() - b2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                value_data[i] =
                    value_data[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * value_data[i]);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_shrink_weights_by_decoupled_decay() {
        let mut store: ParameterStore<f64> = ParameterStore::new(0);
        store.set_value(
            "w",
            Tensor::new(vec![1, 4], vec![1.0, -2.0, 3.0, -4.0]).unwrap(),
        );
        let original = store.value("w").unwrap().clone();
        let mut opt = AdamW::new(0.001, 0.01, 0.9, 0.999, 1e-8);
        opt.step(&mut store);
        let updated = store.value("w").unwrap();
        for i in 0..4 {
            let expected = original.data()[i] * (1.0 - 0.001 * 0.01);
            assert!((updated.data()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_step_moves_against_gradient() {
        let mut store: ParameterStore<f64> = ParameterStore::new(0);
        store.set_value("w", Tensor::new(vec![1, 2], vec![0.5, -0.5]).unwrap());
        store
            .accumulate_grad("w", &Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap())
            .unwrap();
        let mut opt = AdamW::new(0.1, 0.0, 0.9, 0.999, 1e-8);
        opt.step(&mut store);
        let w = store.value("w").unwrap();
        assert!(w.data()[0] < 0.5);
        assert!(w.data()[1] > -0.5);
    }

    #[test]
    fn quadratic_converges_to_origin() {
        // Minimize ‖w‖² by hand-fed gradients 2w.
        let mut store: ParameterStore<f64> = ParameterStore::new(0);
        store.set_value("w", Tensor::new(vec![1, 3], vec![1.0, -0.7, 0.3]).unwrap());
        let mut opt = AdamW::new(0.05, 0.0, 0.9, 0.999, 1e-8);
        for _ in 0..400 {
            store.zero_grads();
            let g = store.value("w").unwrap().scale(2.0);
            store.accumulate_grad("w", &g).unwrap();
            opt.step(&mut store);
        }
        let w = store.value("w").unwrap();
        assert!(w.data().iter().all(|x| x.abs() < 1e-3), "{:?}", w.data());
    }

    #[test]
    fn moments_stay_finite() {
        let mut store: ParameterStore<f64> = ParameterStore::new(0);
        store.set_value("w", Tensor::new(vec![1, 2], vec![0.1, 0.2]).unwrap());
        store
            .accumulate_grad("w", &Tensor::new(vec![1, 2], vec![4.0, -3.0]).unwrap())
            .unwrap();
        let mut opt = AdamW::new(0.001, 0.01, 0.9, 0.999, 1e-8);
        opt.step(&mut store);
        assert!(opt.first_moment["w"].is_finite_all());
        assert!(opt.second_moment["w"].is_finite_all());
        assert!(opt.second_moment["w"].data().iter().all(|&v| v > 0.0));
    }
}
