use std::collections::BTreeMap;

use super::{Param, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    step: i32,
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Adam with decoupled weight decay. State is keyed by parameter name so
/// callers may step any subset of a model's parameters.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            state: BTreeMap::new(),
        }
    }

    /// Apply one update to `param` from its accumulated gradient.
    pub fn update<T: Real>(&mut self, name: &str, param: &mut Param<T>) {
        let c = self.config;
        let n = param.value.data().len();
        let m = self
            .state
            .entry(name.to_owned())
            .or_insert_with(|| Moments {
                step: 0,
                first: vec![0.0; n],
                second: vec![0.0; n],
            });
        m.step += 1;
        let bc1 = 1.0 - c.beta1.powi(m.step);
        let bc2 = 1.0 - c.beta2.powi(m.step);
        let lr = T::of(c.lr);
        let decay = T::of(c.lr * c.weight_decay);
        let grads = param.grad.data();
        for (i, p) in param.value.data_mut().iter_mut().enumerate() {
            let g = grads[i].f64();
            m.first[i] = c.beta1 * m.first[i] + (1.0 - c.beta1) * g;
            m.second[i] = c.beta2 * m.second[i] + (1.0 - c.beta2) * g * g;
            let mhat = m.first[i] / bc1;
            let vhat = m.second[i] / bc2;
            let step = T::of(mhat / (vhat.sqrt() + c.eps));
            *p = *p - decay * *p - lr * step;
        }
    }
}
