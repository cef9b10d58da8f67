//! Write a text-branch attention map of one page as an 8-bit PGM heatmap
//! (white = no attention, black = the strongest weight).
//!
//! `cargo run --release --example attention_heatmap -- [out.pgm]`

use docformer::cli::heatmap_pixels;
use docformer::config::ModelConfig;
use docformer::docdata::{generate_synthetic_corpus, GrayImage, SynthConfig};
use docformer::encoder::Branches;
use docformer::features::{DocInput, Vocab};
use docformer::model::Model;
use docformer::tensor::{Rng, Tape};

fn main() -> docformer::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/attention.pgm".into());
    let corpus = generate_synthetic_corpus(&Rng::new(4), 4, &SynthConfig::default())?;
    let vocab = Vocab::build(corpus.docs(), 300)?;
    let cfg = ModelConfig {
        d: 16,
        seq_len: 32,
        layers: 2,
        heads: 2,
        num_bins: 32,
        image_height: 32,
        image_width: 32,
        cnn_channels: [4, 8, 16],
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let input = DocInput::prepare(&vocab, corpus.docs().next().expect("document"), &cfg)?;
    let model = Model::new(&cfg, &mut Rng::new(9))?;

    let mut tape = Tape::new();
    let b = model.store.bind(&mut tape);
    let enc = model.encode(&mut tape, &b, &input, Branches::Both, None)?;
    let n = cfg.seq_len;
    let probs = tape.value(enc.output.layers[1].text_probs);
    let head0 = &probs.data()[..n * n];

    let pixels = heatmap_pixels(head0);
    let image = GrayImage { width: n, height: n, pixels };
    std::fs::write(&out, image.to_pgm()).map_err(|e| docformer::Error::Validation(format!("{out}: {e}")))?;

    let padded = input.tokens.mask.iter().filter(|m| !**m).count();
    println!("wrote {n}x{n} heatmap of layer 1 head 0 to {out}; {padded} padded key columns are white");
    Ok(())
}
