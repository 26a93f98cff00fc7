use crate::error::{Error, Result};

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for a fixed, ordered list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        AdamState {
            config,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.second[i]
    }

    /// One bias-corrected Adam update using each tensor's `grad`; a missing
    /// gradient counts as zero.
    pub fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::shape("adam_step", &[self.first.len()], &[params.len()]));
        }
        for (i, p) in params.iter().enumerate() {
            if p.numel() != self.first[i].len() {
                return Err(Error::shape("adam_step", &[self.first[i].len()], p.shape()));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(grad) = p.grad().map(<[f32]>::to_vec) else {
                // m and v decay toward zero; with zero history the update is zero.
                self.first[i].iter_mut().for_each(|m| *m *= b1);
                self.second[i].iter_mut().for_each(|v| *v *= b2);
                continue;
            };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, w) in p.values_mut().iter_mut().enumerate() {
                let g = f64::from(grad[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w = (f64::from(*w) - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
            }
        }
        Ok(())
    }
}

/// Relative slack on the clipping threshold so that re-clipping an already
/// clipped set (whose `f32` norm may land a few ulps above the bound) is a
/// no-op.
const CLIP_SLACK: f64 = 1e-6;

/// Global L2 norm of all gradients, accumulated in `f64`.
pub fn grad_norm(params: &[Tensor]) -> f64 {
    params
        .iter()
        .filter_map(Tensor::grad)
        .flat_map(|g| g.iter())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `max_norm / norm` when their global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(params: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm * (1.0 + CLIP_SLACK) {
        let k = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|v| *v = (f64::from(*v) * k) as f32);
            }
        }
    }
    norm
}
