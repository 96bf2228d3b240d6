use std::collections::BTreeMap;

use mcfnet_tensor::{ParamId, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Adam with L2 weight decay added to the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    moments: BTreeMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

/// Serializable optimizer state keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, moments: BTreeMap::new() }
    }

    /// One update of every parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads {
            if !store.is_trainable(*id) {
                continue;
            }
            let p = store.get_mut(*id);
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let n = p.len();
            let (m, v) = self.moments.entry(*id).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g + self.weight_decay * *p;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn state(&self, store: &ParamStore) -> AdamState {
        AdamState {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            step: self.step,
            moments: self.moments.iter().map(|(id, (m, v))| (store.name(*id).to_string(), m.clone(), v.clone())).collect(),
        }
    }

    pub fn from_state(state: &AdamState, store: &ParamStore) -> Result<Self> {
        let mut moments = BTreeMap::new();
        for (name, m, v) in &state.moments {
            let id = store.find(name).ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown parameter {name}")))?;
            if m.len() != store.get(id).len() || v.len() != m.len() {
                return Err(Error::Checkpoint(format!("optimizer state size mismatch for {name}")));
            }
            moments.insert(id, (m.clone(), v.clone()));
        }
        Ok(Self {
            beta1: state.beta1,
            beta2: state.beta2,
            eps: state.eps,
            weight_decay: state.weight_decay,
            step: state.step,
            moments,
        })
    }
}
