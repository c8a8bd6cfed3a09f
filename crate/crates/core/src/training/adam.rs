use std::collections::BTreeMap;

use vaesr_autograd::{Float, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply weight decay directly to the parameters instead of adding it
    /// to the gradient.
    pub decoupled: bool,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, weight_decay: f64, decoupled: bool) -> Self {
        Self { lr, beta1, beta2: 0.999, eps: 1e-8, weight_decay, decoupled }
    }
}

/// First and second moments of one parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamSlot<T: Float> {
    pub step: u64,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// Per-array Adam state keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Float = f32> {
    pub slots: BTreeMap<String, AdamSlot<T>>,
}

impl<T: Float> Default for AdamState<T> {
    fn default() -> Self {
        Self { slots: BTreeMap::new() }
    }
}

impl<T: Float> AdamState<T> {
    /// Update `param` in place from `grad`. Arithmetic is carried out in
    /// `f64` and rounded back to `T`.
    pub fn step(&mut self, cfg: &AdamConfig, name: &str, param: &mut Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::DimensionMismatch(format!(
                "gradient of {name}: {:?} vs parameter {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| AdamSlot {
            step: 0,
            m: Tensor::zeros(param.shape().to_vec()),
            v: Tensor::zeros(param.shape().to_vec()),
        });
        slot.step += 1;
        let t = slot.step as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let params = param.data_mut();
        let (m, v) = (slot.m.data_mut(), slot.v.data_mut());
        for i in 0..params.len() {
            let p = params[i].as_f64();
            let mut g = grad.data()[i].as_f64();
            if !cfg.decoupled {
                g += cfg.weight_decay * p;
            }
            let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
            let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
            m[i] = T::from_f64(mi);
            v[i] = T::from_f64(vi);
            let mut update = (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            if cfg.decoupled {
                update += cfg.weight_decay * p;
            }
            params[i] = T::from_f64(p - cfg.lr * update);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamConfig::new(0.01, 0.9, 0.0, false);
        let mut state = AdamState::<f64>::default();
        let mut p = Tensor::new([2], vec![1.0, -2.0]);
        state.step(&cfg, "p", &mut p, &Tensor::new([2], vec![4.0, -0.5])).unwrap();
        assert!((p.data()[0] - (1.0 - 0.01 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
        assert!((p.data()[1] - (-2.0 + 0.01 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert_eq!(state.slots["p"].step, 1);
    }

    #[test]
    fn coupled_and_decoupled_decay_differ() {
        let grad = Tensor::new([1], vec![0.0]);
        let mut a = Tensor::new([1], vec![1.0f64]);
        let mut b = a.clone();
        AdamState::default().step(&AdamConfig::new(0.1, 0.9, 0.5, false), "w", &mut a, &grad).unwrap();
        AdamState::default().step(&AdamConfig::new(0.1, 0.9, 0.5, true), "w", &mut b, &grad).unwrap();
        // Coupled: the decay term is normalized away, a full lr step.
        assert!((a.data()[0] - 0.9).abs() < 1e-6);
        // Decoupled: zero gradient gives only lr * wd * p.
        assert!((b.data()[0] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::new([2], vec![0.0f32; 2]);
        let g = Tensor::new([3], vec![0.0f32; 3]);
        assert!(AdamState::default().step(&AdamConfig::new(0.1, 0.9, 0.0, false), "p", &mut p, &g).is_err());
    }
}
