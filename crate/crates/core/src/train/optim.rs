use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::UResNet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay, scaled by the learning rate.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u32,
}

/// Adam with decoupled weight decay. Moment estimates are keyed by
/// parameter name, so parameters that join the trainable set later (an
/// unfrozen encoder) start with their own bias correction.
#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamConfig,
    state: HashMap<String, Moments>,
}

impl AdamW {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            state: HashMap::new(),
        }
    }

    /// Applies one update with the accumulated gradients of every
    /// trainable parameter.
    pub fn step(&mut self, model: &mut UResNet<f32>, lr: f64) {
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.cfg;
        let state = &mut self.state;
        model.visit_trainable_mut(&mut |name, p| {
            let s = state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
                t: 0,
            });
            s.t += 1;
            let bc1 = 1.0 - beta1.powi(s.t as i32);
            let bc2 = 1.0 - beta2.powi(s.t as i32);
            let decay = (1.0 - lr * weight_decay) as f32;
            let grad = p.grad().into_owned();
            for i in 0..p.data.len() {
                let g = grad[i] as f64;
                let m = beta1 * s.m[i] as f64 + (1.0 - beta1) * g;
                let v = beta2 * s.v[i] as f64 + (1.0 - beta2) * g * g;
                s.m[i] = m as f32;
                s.v[i] = v as f32;
                let update = lr * (m / bc1) / ((v / bc2).sqrt() + epsilon);
                p.data[i] = p.data[i] * decay - update as f32;
            }
        });
    }
}
