//! Toy-scale experiments on the synthetic corpus: pre-training versus
//! training from scratch, multi-modal versus text + spatial only, and shared
//! versus per-modality spatial projections.

use std::time::Instant;

use serde::Serialize;

use crate::config::{ModelConfig, RunConfig};
use crate::docdata::{generate_synthetic_corpus, Document, Split, SynthConfig};
use crate::error::Result;
use crate::features::{DocInput, Vocab};
use crate::tensor::Rng;
use crate::train::{run_pretrain, Checkpoint, Finetuner, SeqReport};

/// Prepared train / test splits of a generated corpus.
#[derive(Clone, Debug)]
pub struct ToyData {
    pub vocab: Vocab,
    pub train_docs: Vec<Document>,
    pub test_docs: Vec<Document>,
    pub train: Vec<DocInput>,
    pub test: Vec<DocInput>,
}

impl ToyData {
    /// Generate `cfg.docs` pages with `cfg.seed`, build the vocabulary on the
    /// training split and set `cfg.model.vocab_size` to its size.
    pub fn generate(cfg: &mut RunConfig) -> Result<Self> {
        let synth = SynthConfig { test_fraction: cfg.test_fraction, ..SynthConfig::default() };
        let corpus = generate_synthetic_corpus(&Rng::new(cfg.seed), cfg.docs, &synth)?;
        let train_docs: Vec<Document> = corpus.split(Split::Train).into_iter().cloned().collect();
        let test_docs: Vec<Document> = corpus.split(Split::Test).into_iter().cloned().collect();
        let vocab = Vocab::build(&train_docs, cfg.model.vocab_size)?;
        cfg.model.vocab_size = vocab.len();
        let prep = |docs: &[Document]| docs.iter().map(|d| DocInput::prepare(&vocab, d, &cfg.model)).collect::<Result<Vec<_>>>();
        let train = prep(&train_docs)?;
        let test = prep(&test_docs)?;
        Ok(ToyData { vocab, train_docs, test_docs, train, test })
    }
}

/// A laptop-sized configuration: 600 pages (500 train / 100 test), a
/// two-layer width-32 encoder over 32 tokens and 64x64 images.
pub fn compact_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        model: ModelConfig {
            d: 32,
            seq_len: 32,
            layers: 2,
            heads: 2,
            num_bins: 64,
            image_height: 64,
            image_width: 64,
            cnn_channels: [8, 16, 32],
            vocab_size: 400,
            ..ModelConfig::default()
        },
        docs: 600,
        batch_size: 8,
        pretrain_epochs: 4,
        finetune_epochs: 3,
        ..RunConfig::default()
    };
    cfg.pretrain_optim.lr = 2e-3;
    cfg.finetune_optim.lr = 2e-3;
    cfg.finetune_optim.warmup_fraction = 0.2;
    cfg
}

/// Pre-train on the training split and return the final checkpoint.
pub fn pretrain_backbone(cfg: &RunConfig, data: &ToyData) -> Result<Checkpoint> {
    Ok(run_pretrain(cfg, &data.train, None)?.trainer.checkpoint())
}

/// Fine-tune for sequence labeling and evaluate on the test split.
pub fn finetune_and_evaluate(cfg: &RunConfig, base: Option<&Checkpoint>, data: &ToyData) -> Result<SeqReport> {
    let mut f = Finetuner::new(cfg, base, crate::docdata::Label::COUNT)?;
    f.fit(&data.train)?;
    let docs: Vec<&Document> = data.test_docs.iter().collect();
    f.evaluate_seq(&docs, &data.test)
}

/// Test-set results of every arm for one seed.
#[derive(Clone, Debug, Serialize)]
pub struct AblationSeed {
    pub seed: u64,
    pub pretrained: SeqReport,
    pub scratch: SeqReport,
    pub text_only: SeqReport,
    pub unshared: SeqReport,
    pub shared_params: usize,
    pub unshared_params: usize,
    pub seconds: f64,
}

/// Run every arm for one seed:
///
/// * `pretrained`: pre-train, then fine-tune;
/// * `scratch`: fine-tune the same architecture from initialization;
/// * `text_only`: pre-train and fine-tune with visual values zeroed;
/// * `unshared`: like `scratch` with per-modality spatial projections.
pub fn run_ablation_seed(base: &RunConfig) -> Result<AblationSeed> {
    let start = Instant::now();
    let mut cfg = base.clone();
    let data = ToyData::generate(&mut cfg)?;

    let ck = pretrain_backbone(&cfg, &data)?;
    let pretrained = finetune_and_evaluate(&cfg, Some(&ck), &data)?;
    let scratch = finetune_and_evaluate(&cfg, None, &data)?;

    let mut text_cfg = cfg.clone();
    text_cfg.model.zero_visual_values = true;
    let text_ck = pretrain_backbone(&text_cfg, &data)?;
    let text_only = finetune_and_evaluate(&text_cfg, Some(&text_ck), &data)?;

    let mut unshared_cfg = cfg.clone();
    unshared_cfg.model.share_spatial_weights = false;
    let unshared = finetune_and_evaluate(&unshared_cfg, None, &data)?;

    let count = |c: &RunConfig| -> Result<usize> { Ok(crate::model::Model::new(&c.model, &mut Rng::new(0))?.backbone_scalars()) };
    Ok(AblationSeed {
        seed: cfg.seed,
        pretrained,
        scratch,
        text_only,
        unshared,
        shared_params: count(&cfg)?,
        unshared_params: count(&unshared_cfg)?,
        seconds: start.elapsed().as_secs_f64(),
    })
}
