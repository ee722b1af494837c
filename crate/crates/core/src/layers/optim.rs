//! Adam with decoupled weight decay.
//!
//! Per step, for every parameter `θ` with gradient `g`:
//!
//! ```text
//! θ ← θ · (1 − lr · wd)
//! m ← β1 m + (1 − β1) g
//! v ← β2 v + (1 − β2) g²
//! θ ← θ − lr · (m / (1 − β1^t)) / (sqrt(v / (1 − β2^t)) + ε)
//! ```

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct OptimState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        OptimState {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn ensure_moments(&mut self, params: &[&mut Tensor]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
            return Ok(());
        }
        if self.first.len() != params.len()
            || self.first.iter().zip(params).any(|(m, p)| m.len() != p.numel())
        {
            return Err(Error::ShapeMismatch {
                op: "adam moments",
                expected: self.first.iter().map(Vec::len).collect(),
                actual: params.iter().map(|p| p.numel()).collect(),
            });
        }
        Ok(())
    }
}

/// One Adam update of every tensor in `params` from its `grad` slot.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut OptimState) -> Result<()> {
    if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
        return Err(Error::MissingGradient(i));
    }
    state.ensure_moments(params)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let decay = 1.0 - state.lr * state.weight_decay;
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad().expect("checked above").to_vec();
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *theta = *theta * decay - state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        p.check_finite("adam_step")?;
    }
    Ok(())
}
