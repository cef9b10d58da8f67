//! Layout binning and the four encoder input streams of one document.
//!
//! `cargo run --example spatial_features`

use docformer::config::ModelConfig;
use docformer::docdata::{generate_synthetic_corpus, SynthConfig};
use docformer::features::{DocInput, Vocab};
use docformer::model::Model;
use docformer::tensor::{Rng, Tape};

fn main() -> docformer::Result<()> {
    let corpus = generate_synthetic_corpus(&Rng::new(11), 8, &SynthConfig::default())?;
    let vocab = Vocab::build(corpus.docs(), 300)?;
    let cfg = ModelConfig {
        d: 16,
        seq_len: 16,
        layers: 1,
        heads: 2,
        num_bins: 32,
        image_height: 32,
        image_width: 32,
        cnn_channels: [4, 8, 16],
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let doc = corpus.docs().next().expect("document");
    let input = DocInput::prepare(&vocab, doc, &cfg)?;

    println!("position  x1 y1 x3 y3  w  h  rel_x            rel_y");
    for (k, s) in input.spatial.iter().enumerate().take(8) {
        println!("{k:>8} {:>3}{:>3}{:>3}{:>3}{:>3}{:>3}  {:?} {:?}", s.x1, s.y1, s.x3, s.y3, s.w, s.h, s.rel_x, s.rel_y);
    }

    let model = Model::new(&cfg, &mut Rng::new(1))?;
    let mut tape = Tape::new();
    let b = model.store.bind(&mut tape);
    let bundle = model.features.bundle(&mut tape, &b, &input)?;
    for (name, v) in [
        ("visual", bundle.visual),
        ("text", bundle.text),
        ("visual spatial", bundle.visual_spatial),
        ("text spatial", bundle.text_spatial),
    ] {
        println!("{name:>15}: {:?}", tape.shape(v));
    }
    println!("{} real positions of {}", bundle.mask.iter().filter(|m| **m).count(), bundle.mask.len());
    Ok(())
}
