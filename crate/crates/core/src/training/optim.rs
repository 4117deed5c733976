use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with a global gradient-norm clip applied before each update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub clip: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, clip: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            lr,
            clip,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Scales `grads` in place so their joint L2 norm is at most `clip`.
    /// Returns the norm before clipping.
    pub fn clip_grads(grads: &mut [Vec<f64>], clip: f64) -> f64 {
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if clip > 0.0 && norm > clip {
            let k = clip / norm;
            grads.iter_mut().flatten().for_each(|g| *g *= k);
        }
        norm
    }

    /// One update. Returns the pre-clip gradient norm.
    pub fn update(&mut self, store: &mut ParamStore, mut grads: Vec<Vec<f64>>) -> Result<f64> {
        if grads.len() != store.len() || grads.iter().zip(store.tensors()).any(|(g, t)| g.len() != t.numel()) {
            return Err(Error::Shape("gradient list does not match the parameters".into()));
        }
        if self.m.len() != store.len() {
            return Err(Error::Shape("optimizer state does not match the parameters".into()));
        }
        let norm = Self::clip_grads(&mut grads, self.clip);
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("gradient norm {norm} at step {}", self.step + 1)));
        }
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (((p, g), m), v) in store.tensors_mut().iter_mut().zip(&grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                p.data[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
        Ok(norm)
    }
}
