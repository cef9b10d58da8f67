//! Optimization, checkpointing, pre-training and fine-tuning loops, and
//! evaluation metrics.

mod checkpoint;
mod finetune;
mod heads;
mod metrics;
mod optim;
mod pretraining;

pub use checkpoint::{ensure_compatible, model_config_diff, Checkpoint, Manifest, TensorRecord, HEADS_BLOB, MANIFEST, OPTIMIZER_BLOB, PARAMS_BLOB};
pub use finetune::{FinetuneStepLog, Finetuner, Prediction, SeqReport};
pub use heads::{FinetuneHead, HeadLayers, Pooler, HEAD_PREFIX};
pub use metrics::{entity_spans, Metrics, Span, SpanCounts};
pub use optim::{adamw_step, check_finite, clip_gradients, lr_schedule, AdamState};
pub use pretraining::{run_pretrain, PretrainRun, PretrainStepLog, Pretrainer, PRETRAIN_LOG};

use crate::config::OptimConfig;
use crate::error::Result;
use crate::params::{Grads, ParamStore};
use crate::tensor::Rng;

/// Number of optimizer steps in one pass over `n` documents.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> u64 {
    n.div_ceil(batch_size) as u64
}

/// Epoch and document indices of the 0-based global `step`. Every epoch
/// visits the documents in a fresh order fixed by `(seed, epoch)`, so any
/// step can be reconstructed without replaying earlier ones.
pub fn batch_for_step(seed: u64, stream: u64, step: u64, n: usize, batch_size: usize) -> (u64, Vec<usize>) {
    let spe = steps_per_epoch(n, batch_size);
    let epoch = step / spe;
    let within = (step % spe) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).derive(stream.wrapping_add(epoch)).shuffle(&mut order);
    let end = ((within + 1) * batch_size).min(n);
    (epoch, order[within * batch_size..end].to_vec())
}

/// Check, clip and apply averaged gradients. Returns the pre-clip norm.
pub(crate) fn apply_update(
    store: &mut ParamStore,
    state: &mut AdamState,
    mut grads: Grads,
    cfg: &OptimConfig,
    lr: f64,
) -> Result<f64> {
    check_finite(store, &grads)?;
    let norm = clip_gradients(&mut grads, cfg.clip_norm);
    adamw_step(store, &grads, state, cfg, lr)?;
    Ok(norm)
}
