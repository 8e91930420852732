//! AdamW with decoupled weight decay and per-parameter step counts.
//!
//! Moments live outside the `ParameterSet` so checkpoints stay plain weight
//! dumps. Each parameter tracks its own step count: when the unfreezing
//! controller re-enables a tensor, its moments and count are reset, so the
//! first post-unfreeze update is bit-identical to a fresh AdamW step (the
//! optimizer-state hygiene contract).
//!
//! All arithmetic runs in f64 and is rounded to f32 once per element per
//! step, which keeps update math identical across runs regardless of how
//! the f32 weights were produced.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

// Required in pure no_std graphs; once std is linked anywhere (tests, std
// consumers) f64's inherent methods shadow the trait and this goes unused.
#[allow(unused_imports)]
use num_traits::Float;

use crate::network::ParameterSet;

use super::TrainError;

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, weight_decay: 1e-4, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok_beta = |b: f64| (0.0..1.0).contains(&b);
        if !(ok_beta(self.beta1) && ok_beta(self.beta2)) {
            return Err(TrainError::InvalidConfig(String::from("betas must lie in [0, 1)")));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(TrainError::InvalidConfig(String::from("weight_decay must be >= 0")));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(TrainError::InvalidConfig(String::from("eps must be positive")));
        }
        Ok(())
    }
}

/// First/second moments and step count, one entry per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: Vec<u64>,
}

impl AdamState {
    /// Zero state shaped like `params`.
    pub fn new(params: &ParameterSet) -> Self {
        let m = params.params().iter().map(|p| alloc::vec![0.0; p.values.len()]).collect();
        let v = params.params().iter().map(|p| alloc::vec![0.0; p.values.len()]).collect();
        let t = alloc::vec![0u64; params.len()];
        Self { m, v, t }
    }

    /// Forget everything about one parameter (applied on unfreeze).
    pub fn reset(&mut self, index: usize) {
        self.m[index].fill(0.0);
        self.v[index].fill(0.0);
        self.t[index] = 0;
    }

    pub fn step_count(&self, index: usize) -> u64 {
        self.t[index]
    }
}

/// One AdamW update over every trainable parameter:
/// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
///
/// `grads` aligns with parameter order (as produced by
/// `Model::forward_with_bindings` leaves). Frozen parameters are skipped
/// entirely — values, moments, and step counts stay untouched — and their
/// gradient slot may be `None`.
pub fn adamw_step(
    params: &mut ParameterSet,
    grads: &[Option<Vec<f32>>],
    state: &mut AdamState,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<(), TrainError> {
    if grads.len() != params.len() {
        return Err(TrainError::InvalidConfig(format!(
            "gradient list has {} entries for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, p) in params.params_mut().iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let g = grads[i]
            .as_ref()
            .ok_or_else(|| TrainError::MissingGrad(p.name.clone()))?;
        if g.len() != p.values.len() {
            return Err(TrainError::InvalidConfig(format!(
                "gradient for {} has {} elements, parameter has {}",
                p.name,
                g.len(),
                p.values.len()
            )));
        }
        state.t[i] += 1;
        let bc1 = 1.0 - cfg.beta1.powi(state.t[i] as i32);
        let bc2 = 1.0 - cfg.beta2.powi(state.t[i] as i32);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.values.iter_mut().enumerate() {
            let gj = g[j] as f64;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            let theta = *w as f64;
            *w = (theta - lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta)) as f32;
        }
    }
    Ok(())
}
