use serde::{Deserialize, Serialize};

use super::model::Param;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    /// One bias-corrected update. Parameters without a gradient are left alone.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [Param],
        grads: &[(usize, &Tensor<f32>)],
    ) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for &(id, g) in grads {
            let p = params[id].value.data_mut();
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for i in 0..p.len() {
                let gi = f64::from(g.data()[i]);
                let mi = cfg.beta1 * f64::from(m[i]) + (1.0 - cfg.beta1) * gi;
                let vi = cfg.beta2 * f64::from(v[i]) + (1.0 - cfg.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = cfg.lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
                p[i] = (f64::from(p[i]) - update) as f32;
            }
        }
    }
}
