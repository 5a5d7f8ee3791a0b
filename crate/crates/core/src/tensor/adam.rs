//! Adam optimizer with bias correction.

use super::Tensor;
use crate::{PxfrError, Result};

/// Per-parameter moment buffers plus the optimizer constants.
pub struct AdamState {
    first_moment: Vec<Vec<f32>>,
    second_moment: Vec<Vec<f32>>,
    step_count: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamState {
    pub fn new(params: &[Tensor], lr: f32) -> AdamState {
        AdamState {
            first_moment: params.iter().map(|p| vec![0.0; p.shape().len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.shape().len()]).collect(),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One Adam update over `params`, reading each tensor's accumulated
    /// gradient. Missing gradients count as zero. A non-finite gradient
    /// aborts before touching any parameter.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(PxfrError::ShapeMismatch(format!(
                "adam_step: {} params but state tracks {}",
                params.len(),
                self.first_moment.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape().len() != self.first_moment[i].len() {
                return Err(PxfrError::ShapeMismatch(format!(
                    "adam_step: param {} has {} entries, moments have {}",
                    i,
                    p.shape().len(),
                    self.first_moment[i].len()
                )));
            }
            if let Some(g) = p.grad().as_ref() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(PxfrError::NonFinite(format!(
                        "adam_step: gradient of param {} is not finite",
                        i
                    )));
                }
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter().enumerate() {
            let guard = p.grad();
            let Some(g) = guard.as_ref() else { continue };
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let mut data = p.data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
