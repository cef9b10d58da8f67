//! Backbone: feature branches plus encoder over one named parameter store.

use crate::config::ModelConfig;
use crate::encoder::{Branches, EncoderOutput, EncoderParams};
use crate::error::Result;
use crate::features::{DocInput, FeatureBundle, FeatureParams};
use crate::params::{Binding, ParamStore};
use crate::tensor::{Rng, Tape};

/// Parameter-name prefixes that make up the backbone; anything else in the
/// store belongs to a task head.
pub const BACKBONE_PREFIXES: [&str; 2] = ["features.", "encoder."];

pub fn is_backbone_param(name: &str) -> bool {
    BACKBONE_PREFIXES.iter().any(|p| name.starts_with(p))
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    /// Backbone parameters first, then any heads registered later.
    pub store: ParamStore,
    pub features: FeatureParams,
    pub encoder: EncoderParams,
}

/// Encoder output together with the inputs it was computed from.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub bundle: FeatureBundle,
    pub output: EncoderOutput,
}

impl Model {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let features = FeatureParams::init(&mut store, cfg, rng);
        let encoder = EncoderParams::init(&mut store, cfg, rng);
        let mut model = Model { cfg: cfg.clone(), store, features, encoder };
        if cfg.zero_visual_values {
            model.disable_visual_values();
        }
        Ok(model)
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        b: &Binding,
        input: &DocInput,
        branches: Branches,
        dropout: Option<&mut Rng>,
    ) -> Result<Encoded> {
        let bundle = self.features.bundle(tape, b, input)?;
        let output = self.encoder.forward_with(tape, b, &bundle, branches, dropout)?;
        Ok(Encoded { bundle, output })
    }

    /// Number of backbone scalars (heads excluded).
    pub fn backbone_scalars(&self) -> usize {
        self.store
            .entries()
            .iter()
            .filter(|e| is_backbone_param(&e.name))
            .map(|e| e.value.numel())
            .sum()
    }

    /// Freeze the visual value projections at zero in every layer, leaving a
    /// text + spatial model.
    pub fn disable_visual_values(&mut self) {
        for layer in &self.encoder.layers {
            self.store.get_mut(layer.visual.wv).data_mut().fill(0.0);
            self.store.set_trainable(layer.visual.wv, false);
        }
    }
}
