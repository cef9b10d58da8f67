//! Pre-train a small backbone with the masked-token, image-reconstruction
//! and text-image match objectives, and watch the losses.
//!
//! `cargo run --release --example pretraining`

use docformer::experiment::ToyData;
use docformer::train::run_pretrain;
use docformer::config::RunConfig;
use docformer::config::ModelConfig;

fn main() -> docformer::Result<()> {
    let mut cfg = RunConfig {
        model: ModelConfig {
            d: 16,
            seq_len: 32,
            layers: 1,
            heads: 2,
            num_bins: 32,
            image_height: 32,
            image_width: 32,
            cnn_channels: [4, 8, 16],
            ..ModelConfig::default()
        },
        docs: 96,
        batch_size: 4,
        pretrain_epochs: 3,
        ..RunConfig::default()
    };
    cfg.pretrain_optim.lr = 3e-3;
    let data = ToyData::generate(&mut cfg)?;
    println!("{} training documents, vocabulary {}", data.train.len(), data.vocab.len());

    let out = std::path::PathBuf::from("target/example-pretrain");
    let run = run_pretrain(&cfg, &data.train, Some(&out))?;
    for epoch in 0..cfg.pretrain_epochs as u64 {
        let logs: Vec<_> = run.logs.iter().filter(|l| l.epoch == epoch).collect();
        let mean = |f: fn(&docformer::train::PretrainStepLog) -> f64| logs.iter().map(|l| f(l)).sum::<f64>() / logs.len() as f64;
        println!(
            "epoch {epoch}: total {:.3}  mlm {:.3}  ltr {:.4}  tdi {:.3}",
            mean(|l| l.total),
            mean(|l| l.mlm),
            mean(|l| l.ltr),
            mean(|l| l.tdi)
        );
    }
    println!("checkpoints: {:?}", run.checkpoints);
    Ok(())
}
