//! Fine-tune for entity labeling, with and without a pre-trained backbone,
//! and report entity F1 on held-out forms.
//!
//! `cargo run --release --example finetune_labeling`

use docformer::config::{HeadVariant, ModelConfig, RunConfig};
use docformer::experiment::{finetune_and_evaluate, pretrain_backbone, ToyData};

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
        docs: 120,
        batch_size: 4,
        pretrain_epochs: 2,
        finetune_epochs: 4,
        ..RunConfig::default()
    };
    cfg.pretrain_optim.lr = 3e-3;
    cfg.finetune_optim.lr = 3e-3;
    let data = ToyData::generate(&mut cfg)?;
    let base = pretrain_backbone(&cfg, &data)?;

    for head in [HeadVariant::Linear, HeadVariant::Deeper] {
        let c = RunConfig { head, ..cfg.clone() };
        for (name, ck) in [("pre-trained", Some(&base)), ("scratch", None)] {
            let r = finetune_and_evaluate(&c, ck, &data)?;
            println!(
                "{head:?} head, {name:>11}: F1 {:.3} (P {:.3} R {:.3}), token accuracy {:.3}, vision-dependent F1 {:.3}",
                r.overall.f1, r.overall.precision, r.overall.recall, r.overall.accuracy, r.vision_dependent.f1
            );
        }
    }
    Ok(())
}
