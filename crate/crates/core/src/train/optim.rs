//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::nn::EncoderParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamConfig {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates live in flat vectors laid out in `EncoderParams::visit` order.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u32,
}

impl AdamW {
    pub fn new(config: AdamConfig, params: &EncoderParams) -> Self {
        let n = params.num_params();
        AdamW {
            config,
            first: vec![0.0; n],
            second: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// `p ← p − lr · (m̂ / (√v̂ + ε) + wd · p)`
    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams) {
        let AdamConfig {
            learning_rate: lr,
            weight_decay: wd,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let g = grads.flatten();
        let first = &mut self.first;
        let second = &mut self.second;
        let mut offset = 0;
        params.visit_mut(&mut |_, values| {
            for (k, p) in values.iter_mut().enumerate() {
                let idx = offset + k;
                let gi = g[idx];
                first[idx] = beta1 * first[idx] + (1.0 - beta1) * gi;
                second[idx] = beta2 * second[idx] + (1.0 - beta2) * gi * gi;
                let m_hat = first[idx] / c1;
                let v_hat = second[idx] / c2;
                *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
            }
            offset += values.len();
        });
    }
}
