//! AdamW with decoupled weight decay, linear warm-up and global-norm clipping.

use crate::config::OptimConfig;
use crate::error::{Error, Result};
use crate::params::{Grads, ParamStore};
use crate::tensor::Tensor;

/// Learning rate at `step` (1-based): a linear ramp from 0 over the first
/// `warmup_fraction * total_steps` steps, constant afterwards.
pub fn lr_schedule(step: u64, total_steps: u64, cfg: &OptimConfig) -> f64 {
    let warmup = cfg.warmup_fraction * total_steps as f64;
    let s = step as f64;
    if s < warmup {
        cfg.lr * s / warmup
    } else {
        cfg.lr
    }
}

/// Rescale `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_gradients(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// First and second moment estimates, one tensor per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect::<Vec<_>>();
        AdamState { t: 0, m: zeros(), v: zeros() }
    }
}

/// Fail on the first parameter whose gradient holds a NaN or infinity.
pub fn check_finite(store: &ParamStore, grads: &Grads) -> Result<()> {
    for (entry, g) in store.entries().iter().zip(&grads.0) {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(entry.name.clone()));
        }
    }
    Ok(())
}

/// One AdamW update of every trainable parameter:
///
/// ```text
/// m <- b1 m + (1 - b1) g          v <- b2 v + (1 - b2) g^2
/// p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
/// ```
///
/// with bias-corrected `m_hat = m / (1 - b1^t)` and `v_hat = v / (1 - b2^t)`.
pub fn adamw_step(store: &mut ParamStore, grads: &Grads, state: &mut AdamState, cfg: &OptimConfig, lr: f64) -> Result<()> {
    if grads.0.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer state covers {} parameters, gradients {}, store {}",
            state.m.len(),
            grads.0.len(),
            store.len()
        )));
    }
    check_finite(store, grads)?;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, entry) in store.entries_mut().iter_mut().enumerate() {
        if !entry.trainable {
            continue;
        }
        let g = grads.0[k].data();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, p) in entry.value.data_mut().iter_mut().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let step = (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            *p -= lr * (step + cfg.weight_decay * *p);
        }
    }
    Ok(())
}
