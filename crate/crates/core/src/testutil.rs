//! Small shared fixtures for unit tests.

use crate::config::ModelConfig;
use crate::docdata::{generate_synthetic_corpus, Document, SynthConfig};
use crate::features::{DocInput, Vocab};
use crate::model::Model;
use crate::tensor::Rng;

pub struct Tiny {
    pub docs: Vec<Document>,
    pub vocab: Vocab,
    pub cfg: ModelConfig,
    pub inputs: Vec<DocInput>,
}

pub fn tiny(n_docs: usize, seed: u64) -> Tiny {
    let corpus = generate_synthetic_corpus(&Rng::new(seed), n_docs, &SynthConfig::default()).unwrap();
    let docs: Vec<Document> = corpus.docs().cloned().collect();
    let vocab = Vocab::build(&docs, 200).unwrap();
    let cfg = ModelConfig {
        d: 8,
        seq_len: 16,
        layers: 1,
        heads: 2,
        num_bins: 32,
        image_height: 32,
        image_width: 32,
        cnn_channels: [4, 4, 8],
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let inputs = docs.iter().map(|d| DocInput::prepare(&vocab, d, &cfg).unwrap()).collect();
    Tiny { docs, vocab, cfg, inputs }
}

impl Tiny {
    pub fn model(&self, seed: u64) -> Model {
        Model::new(&self.cfg, &mut Rng::new(seed)).unwrap()
    }
}
