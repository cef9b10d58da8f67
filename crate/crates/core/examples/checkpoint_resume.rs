//! Interrupt pre-training, save a checkpoint, resume from disk, and confirm
//! the result matches an uninterrupted run bit for bit.
//!
//! `cargo run --release --example checkpoint_resume`

use docformer::config::{ModelConfig, RunConfig};
use docformer::experiment::ToyData;
use docformer::train::{Checkpoint, Pretrainer};

fn main() -> docformer::Result<()> {
    let mut cfg = RunConfig {
        model: ModelConfig {
            d: 8,
            seq_len: 16,
            layers: 1,
            heads: 2,
            num_bins: 32,
            image_height: 32,
            image_width: 32,
            cnn_channels: [4, 4, 8],
            ..ModelConfig::default()
        },
        docs: 24,
        batch_size: 4,
        pretrain_epochs: 2,
        ..RunConfig::default()
    };
    let data = ToyData::generate(&mut cfg)?;

    let mut straight = Pretrainer::new(&cfg)?;
    let total = straight.total_steps(data.train.len());
    straight.run_until(&data.train, total, |_, _| Ok(()))?;

    let mut first = Pretrainer::new(&cfg)?;
    first.run_until(&data.train, total / 2, |_, _| Ok(()))?;
    let dir = std::path::PathBuf::from("target/example-checkpoint");
    first.checkpoint().save(&dir)?;
    println!("saved step {} to {}", first.step, dir.display());

    let mut resumed = Pretrainer::from_checkpoint(&Checkpoint::load(&dir)?)?;
    resumed.run_until(&data.train, total, |_, _| Ok(()))?;

    let identical = straight
        .model
        .store
        .entries()
        .iter()
        .zip(resumed.model.store.entries())
        .all(|(a, b)| a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    println!("resumed to step {}; parameters bit-identical: {identical}", resumed.step);
    Ok(())
}
