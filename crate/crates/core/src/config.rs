//! Model, optimizer and run configuration.
//!
//! [`RunConfig`] serializes to a flat JSON object with dotted keys
//! (`"model.d": 64`). Values resolve as command-line flag, then config file,
//! then built-in default.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    /// Sequence length N, including the leading `[CLS]`.
    pub seq_len: usize,
    pub layers: usize,
    pub heads: usize,
    /// Relative-position clipping distance.
    pub span: usize,
    pub num_bins: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub in_channels: usize,
    /// Output channels of the three stride-2 conv blocks.
    pub cnn_channels: [usize; 3],
    pub vocab_size: usize,
    pub inject_spatial_into_hidden: bool,
    pub share_spatial_weights: bool,
    /// Zero and freeze the visual value projections, leaving a
    /// text + spatial model.
    pub zero_visual_values: bool,
    pub dropout: f64,
}

/// Total spatial downsampling of the visual CNN.
pub const CNN_STRIDE: usize = 8;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            seq_len: 64,
            layers: 4,
            heads: 4,
            span: 8,
            num_bins: 128,
            image_height: 128,
            image_width: 128,
            in_channels: 1,
            cnn_channels: [16, 32, 64],
            vocab_size: 2000,
            inject_spatial_into_hidden: true,
            share_spatial_weights: true,
            zero_visual_values: false,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d / self.heads
    }

    /// Visual cells `h_l * w_l` after the CNN.
    pub fn visual_cells(&self) -> usize {
        (self.image_height / CNN_STRIDE) * (self.image_width / CNN_STRIDE)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return fail(format!("model.d ({}) must be a positive multiple of model.heads ({})", self.d, self.heads));
        }
        if self.seq_len < 2 {
            return fail(format!("model.seq_len must be >= 2, got {}", self.seq_len));
        }
        if self.num_bins < 2 {
            return fail(format!("model.num_bins must be >= 2, got {}", self.num_bins));
        }
        if self.image_height == 0
            || self.image_width == 0
            || self.image_height % CNN_STRIDE != 0
            || self.image_width % CNN_STRIDE != 0
        {
            return fail(format!(
                "image {}x{} must be a positive multiple of the CNN stride {CNN_STRIDE}",
                self.image_height, self.image_width
            ));
        }
        if self.in_channels == 0 || self.cnn_channels.contains(&0) {
            return fail("CNN channel counts must be positive".into());
        }
        if self.vocab_size < 5 {
            return fail(format!("model.vocab_size must be >= 5, got {}", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("model.dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimConfig {
    pub fn pretrain() -> Self {
        OptimConfig { lr: 5e-5, warmup_fraction: 0.1, clip_norm: 1.0, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }

    pub fn finetune() -> Self {
        OptimConfig { lr: 2.5e-5, warmup_fraction: 0.0, ..Self::pretrain() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!("warmup_fraction must lie in [0, 1), got {}", self.warmup_fraction)));
        }
        Ok(())
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self::pretrain()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mlm: f64,
    pub ltr: f64,
    pub tdi: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { mlm: 5.0, ltr: 1.0, tdi: 5.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadVariant {
    Linear,
    Deeper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneTask {
    /// Per-token labels.
    Seq,
    /// Whole-document class.
    Cls,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub pretrain_optim: OptimConfig,
    pub finetune_optim: OptimConfig,
    pub loss: LossWeights,
    pub mlm_prob: f64,
    pub tdi_mismatch_prob: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub task: FinetuneTask,
    pub head: HeadVariant,
    pub docs: usize,
    pub test_fraction: f64,
    pub corpus_dir: String,
    pub vocab_path: String,
    pub out_dir: String,
    pub checkpoint: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            model: ModelConfig::default(),
            pretrain_optim: OptimConfig::pretrain(),
            finetune_optim: OptimConfig::finetune(),
            loss: LossWeights::default(),
            mlm_prob: 0.15,
            tdi_mismatch_prob: 0.2,
            batch_size: 8,
            pretrain_epochs: 5,
            finetune_epochs: 5,
            task: FinetuneTask::Seq,
            head: HeadVariant::Linear,
            docs: 600,
            test_fraction: 1.0 / 6.0,
            corpus_dir: "corpus".into(),
            vocab_path: "vocab.txt".into(),
            out_dir: "run".into(),
            checkpoint: String::new(),
        }
    }
}

macro_rules! config_keys {
    ($( $key:literal => $($field:ident).+ , $help:literal ;)*) => {
        /// Every configuration key with its description.
        pub const CONFIG_KEYS: &[(&str, &str)] = &[$(($key, $help)),*];

        impl RunConfig {
            /// Flat dotted-key JSON object.
            pub fn to_map(&self) -> Map<String, Value> {
                let mut m = Map::new();
                $( m.insert($key.to_string(), serde_json::to_value(&self.$($field).+).expect("config value serializes")); )*
                m
            }

            /// Set one key from a JSON value.
            pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
                match key {
                    $( $key => {
                        self.$($field).+ = serde_json::from_value(value.clone()).map_err(|e| {
                            Error::Config(format!("bad value {value} for `{key}`: {e}"))
                        })?;
                    } )*
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }
        }
    };
}

config_keys! {
    "seed" => seed, "Master seed for data, initialization and sampling";
    "model.d" => model.d, "Model width d";
    "model.seq_len" => model.seq_len, "Sequence length N including [CLS]";
    "model.layers" => model.layers, "Number of encoder layers L";
    "model.heads" => model.heads, "Attention heads per branch";
    "model.span" => model.span, "Relative-attention clipping span";
    "model.num_bins" => model.num_bins, "Coordinate bins per spatial lookup table";
    "model.image_height" => model.image_height, "Model input image height (multiple of 8)";
    "model.image_width" => model.image_width, "Model input image width (multiple of 8)";
    "model.in_channels" => model.in_channels, "Image channels fed to the CNN";
    "model.cnn_channels" => model.cnn_channels, "Output channels of the three CNN blocks, e.g. 16,32,64";
    "model.vocab_size" => model.vocab_size, "Vocabulary cap including reserved tokens";
    "model.inject_spatial_into_hidden" => model.inject_spatial_into_hidden, "Add text spatial embedding to the first hidden state";
    "model.share_spatial_weights" => model.share_spatial_weights, "Share spatial query/key projections across modalities";
    "model.zero_visual_values" => model.zero_visual_values, "Zero and freeze visual value weights (text + spatial only)";
    "model.dropout" => model.dropout, "Dropout rate during training";
    "pretrain.lr" => pretrain_optim.lr, "Pre-training learning rate";
    "pretrain.warmup_fraction" => pretrain_optim.warmup_fraction, "Pre-training warmup fraction of total steps";
    "pretrain.epochs" => pretrain_epochs, "Pre-training epochs";
    "pretrain.mlm_prob" => mlm_prob, "Per-token masking probability";
    "pretrain.tdi_mismatch_prob" => tdi_mismatch_prob, "Probability of pairing text with a wrong image";
    "finetune.lr" => finetune_optim.lr, "Fine-tuning learning rate";
    "finetune.warmup_fraction" => finetune_optim.warmup_fraction, "Fine-tuning warmup fraction";
    "finetune.epochs" => finetune_epochs, "Fine-tuning epochs";
    "finetune.task" => task, "Fine-tuning task: seq or cls";
    "finetune.head" => head, "Head variant: linear or deeper";
    "optim.clip_norm" => pretrain_optim.clip_norm, "Global gradient-norm clip";
    "optim.beta1" => pretrain_optim.beta1, "AdamW first-moment decay";
    "optim.beta2" => pretrain_optim.beta2, "AdamW second-moment decay";
    "optim.eps" => pretrain_optim.eps, "AdamW epsilon";
    "optim.weight_decay" => pretrain_optim.weight_decay, "Decoupled weight decay";
    "loss.mlm" => loss.mlm, "Weight of the masked-token loss";
    "loss.ltr" => loss.ltr, "Weight of the image reconstruction loss";
    "loss.tdi" => loss.tdi, "Weight of the text-image match loss";
    "train.batch_size" => batch_size, "Documents per optimizer step";
    "data.docs" => docs, "Number of documents to generate";
    "data.test_fraction" => test_fraction, "Held-out fraction of generated documents";
    "data.corpus_dir" => corpus_dir, "Corpus directory holding manifest.json";
    "data.vocab_path" => vocab_path, "Vocabulary file";
    "run.out_dir" => out_dir, "Output directory for logs, checkpoints and metrics";
    "run.checkpoint" => checkpoint, "Checkpoint directory to start from";
}

impl RunConfig {
    /// Optimizer settings shared between phases are kept in sync here.
    fn sync_shared_optim(&mut self) {
        let p = &self.pretrain_optim;
        self.finetune_optim.clip_norm = p.clip_norm;
        self.finetune_optim.beta1 = p.beta1;
        self.finetune_optim.beta2 = p.beta2;
        self.finetune_optim.eps = p.eps;
        self.finetune_optim.weight_decay = p.weight_decay;
    }

    pub fn apply_map(&mut self, map: &Map<String, Value>) -> Result<()> {
        for (k, v) in map {
            self.set(k, v.clone())?;
        }
        self.sync_shared_optim();
        Ok(())
    }

    /// Set a key from command-line text. JSON literals are accepted as is,
    /// anything else is taken as a string; comma lists fill array keys.
    pub fn set_from_str(&mut self, key: &str, raw: &str) -> Result<()> {
        let current = self.to_map().get(key).cloned().ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        let value = match serde_json::from_str::<Value>(raw) {
            Ok(v) if !(current.is_string() && !v.is_string()) => v,
            _ if current.is_array() => Value::Array(
                raw.split(',')
                    .map(|p| serde_json::from_str(p.trim()).unwrap_or_else(|_| Value::String(p.trim().into())))
                    .collect(),
            ),
            _ => Value::String(raw.to_string()),
        };
        self.set(key, value)?;
        self.sync_shared_optim();
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: Map<String, Value> =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not a JSON object: {e}")))?;
        let mut cfg = RunConfig::default();
        cfg.apply_map(&map)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Value::Object(self.to_map())).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pretrain_optim.validate()?;
        self.finetune_optim.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        for (name, w) in [("loss.mlm", self.loss.mlm), ("loss.ltr", self.loss.ltr), ("loss.tdi", self.loss.tdi)] {
            if !(w >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {w}")));
            }
        }
        for (name, p) in [("pretrain.mlm_prob", self.mlm_prob), ("pretrain.tdi_mismatch_prob", self.tdi_mismatch_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(cfg.to_map().len(), CONFIG_KEYS.len());
    }

    #[test]
    fn modified_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set_from_str("model.d", "32").unwrap();
        cfg.set_from_str("model.cnn_channels", "8,16,32").unwrap();
        cfg.set_from_str("finetune.head", "deeper").unwrap();
        cfg.set_from_str("data.corpus_dir", "some/dir").unwrap();
        cfg.set_from_str("run.checkpoint", "123").unwrap();
        cfg.set_from_str("model.share_spatial_weights", "false").unwrap();
        assert_eq!(cfg.model.cnn_channels, [8, 16, 32]);
        assert_eq!(cfg.checkpoint, "123");
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_and_bad_value_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set_from_str("model.nope", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set_from_str("model.d", "wide"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json("[1]"), Err(Error::Config(_))));
    }

    #[test]
    fn defaults_validate_and_phase_learning_rates_differ() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.pretrain_optim.lr, 5e-5);
        assert_eq!(cfg.finetune_optim.lr, 2.5e-5);
        assert_eq!(cfg.finetune_optim.warmup_fraction, 0.0);
        let bad = ModelConfig { image_height: 60, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
    }
}
