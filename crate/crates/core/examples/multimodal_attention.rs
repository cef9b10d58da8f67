//! Run the encoder on one page and compare shared and unshared spatial
//! projections.
//!
//! `cargo run --release --example multimodal_attention`

use docformer::config::ModelConfig;
use docformer::docdata::{generate_synthetic_corpus, SynthConfig};
use docformer::encoder::Branches;
use docformer::features::{DocInput, Vocab};
use docformer::model::Model;
use docformer::tensor::{Rng, Tape};

fn main() -> docformer::Result<()> {
    let corpus = generate_synthetic_corpus(&Rng::new(2), 4, &SynthConfig::default())?;
    let vocab = Vocab::build(corpus.docs(), 300)?;
    let cfg = ModelConfig {
        d: 16,
        seq_len: 24,
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

    let shared = Model::new(&cfg, &mut Rng::new(1))?;
    let unshared = Model::new(&ModelConfig { share_spatial_weights: false, ..cfg.clone() }, &mut Rng::new(1))?;
    let (a, b) = (shared.backbone_scalars(), unshared.backbone_scalars());
    println!("backbone parameters: shared {a}, unshared {b} (+{})", b - a);

    for (label, branches) in [("multi-modal", Branches::Both), ("text-only", Branches::TextOnly)] {
        let mut tape = Tape::new();
        let bind = shared.store.bind(&mut tape);
        let enc = shared.encode(&mut tape, &bind, &input, branches, None)?;
        let hidden = tape.value(enc.output.hidden);
        let rms = (hidden.data().iter().map(|x| x * x).sum::<f64>() / hidden.numel() as f64).sqrt();
        println!("{label:>12}: hidden {:?} rms {rms:.4}, attention flops {}", hidden.shape(), enc.output.attention_flops);

        let probs = tape.value(enc.output.layers[0].text_probs);
        let n = cfg.seq_len;
        let row: Vec<String> = (0..8).map(|j| format!("{:.3}", probs.data()[j])).collect();
        println!("{:>12}  layer 0 head 0 row [CLS]: [{} ...] over {n} keys", "", row.join(" "));
    }
    Ok(())
}
