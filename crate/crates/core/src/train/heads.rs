//! Fine-tuning heads: per-token / per-document classifiers and the [CLS]
//! pooler.

use crate::config::HeadVariant;
use crate::encoder::LN_EPS;
use crate::error::Result;
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Rng, Tape, Var};

/// Name prefix of every fine-tuning parameter.
pub const HEAD_PREFIX: &str = "head.";

fn dense(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> (ParamId, ParamId) {
    let std = (1.0 / fan_in as f64).sqrt();
    let w = store.randn(format!("{HEAD_PREFIX}{name}.w"), &[fan_in, fan_out], std, rng);
    let b = store.zeros(format!("{HEAD_PREFIX}{name}.b"), &[fan_out]);
    (w, b)
}

#[derive(Clone, Debug)]
pub enum HeadLayers {
    Linear { out: (ParamId, ParamId) },
    Deeper { fc: (ParamId, ParamId), ln: (ParamId, ParamId), out: (ParamId, ParamId) },
}

/// Classifier mapping `[M, d]` features to `[M, n_classes]` logits.
#[derive(Clone, Debug)]
pub struct FinetuneHead {
    pub variant: HeadVariant,
    pub n_classes: usize,
    pub layers: HeadLayers,
}

impl FinetuneHead {
    pub fn init(store: &mut ParamStore, d: usize, n_classes: usize, variant: HeadVariant, rng: &mut Rng) -> Self {
        let layers = match variant {
            HeadVariant::Linear => HeadLayers::Linear { out: dense(store, "out", d, n_classes, rng) },
            HeadVariant::Deeper => {
                let fc = dense(store, "fc", d, d, rng);
                let ln = (store.ones(format!("{HEAD_PREFIX}ln.g"), &[d]), store.zeros(format!("{HEAD_PREFIX}ln.b"), &[d]));
                let out = dense(store, "out", d, n_classes, rng);
                HeadLayers::Deeper { fc, ln, out }
            }
        };
        FinetuneHead { variant, n_classes, layers }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Result<Var> {
        match &self.layers {
            HeadLayers::Linear { out } => tape.linear(x, b.var(out.0), Some(b.var(out.1))),
            HeadLayers::Deeper { fc, ln, out } => {
                let h = tape.linear(x, b.var(fc.0), Some(b.var(fc.1)))?;
                let h = tape.relu(h)?;
                let h = tape.layer_norm(h, b.var(ln.0), b.var(ln.1), LN_EPS)?;
                tape.linear(h, b.var(out.0), Some(b.var(out.1)))
            }
        }
    }
}

/// Document pooling over the `[CLS]` feature: fc, ReLU, fc (`d -> d -> d`).
#[derive(Clone, Debug)]
pub struct Pooler {
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
}

impl Pooler {
    pub fn init(store: &mut ParamStore, d: usize, rng: &mut Rng) -> Self {
        Pooler { fc1: dense(store, "pool.fc1", d, d, rng), fc2: dense(store, "pool.fc2", d, d, rng) }
    }

    /// `hidden [N, d]` to the pooled `[1, d]` document feature.
    pub fn forward(&self, tape: &mut Tape, b: &Binding, hidden: Var) -> Result<Var> {
        let cls = tape.slice(hidden, 0, 0, 1)?;
        let h = tape.linear(cls, b.var(self.fc1.0), Some(b.var(self.fc1.1)))?;
        let h = tape.relu(h)?;
        tape.linear(h, b.var(self.fc2.0), Some(b.var(self.fc2.1)))
    }
}
