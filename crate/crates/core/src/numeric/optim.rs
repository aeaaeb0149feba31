use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamSet, Scalar, ShapeError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Adam with decoupled weight decay. Parameters without a gradient in a
/// step are left untouched.
#[derive(Clone, Debug)]
pub struct AdamW<T: Scalar> {
    pub config: AdamWConfig,
    step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) -> Result<(), ShapeError> {
        for (name, g) in grads {
            if let Some(p) = params.get(name) {
                if p.len() != g.len() {
                    return Err(ShapeError::new("adamw", p.shape().to_vec(), g.shape().to_vec()));
                }
            }
        }
        self.step += 1;
        let c = &self.config;
        let f = T::from_f64_lossy;
        let (b1, b2) = (f(c.beta1), f(c.beta2));
        let bc1 = f(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = f(1.0 - c.beta2.powi(self.step as i32));
        let lr = f(c.lr);
        let decay = f(1.0 - c.lr * c.weight_decay);
        let eps = f(c.eps);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pi, &gi), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
            {
                *pi = *pi * decay;
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *pi = *pi - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
