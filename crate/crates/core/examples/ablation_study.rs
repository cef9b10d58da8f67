//! Toy ablations on the synthetic corpus, averaged over seeds.
//!
//! `cargo run --release --example ablation_study -- [n_seeds]`

use docformer::experiment::{compact_config, run_ablation_seed, AblationSeed};

fn mean(runs: &[AblationSeed], f: impl Fn(&AblationSeed) -> f64) -> f64 {
    runs.iter().map(f).sum::<f64>() / runs.len() as f64
}

fn main() -> docformer::Result<()> {
    let n_seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut runs = Vec::new();
    for seed in 1..=n_seeds {
        let r = run_ablation_seed(&compact_config(seed))?;
        println!(
            "seed {seed}: f1 pretrained {:.3} scratch {:.3} text-only {:.3} unshared {:.3} | vision-dependent f1 pretrained {:.3} text-only {:.3} | {:.0}s",
            r.pretrained.overall.f1,
            r.scratch.overall.f1,
            r.text_only.overall.f1,
            r.unshared.overall.f1,
            r.pretrained.vision_dependent.f1,
            r.text_only.vision_dependent.f1,
            r.seconds
        );
        runs.push(r);
    }
    println!("mean f1 pretrained   {:.4}", mean(&runs, |r| r.pretrained.overall.f1));
    println!("mean f1 scratch      {:.4}", mean(&runs, |r| r.scratch.overall.f1));
    println!("mean f1 unshared     {:.4}", mean(&runs, |r| r.unshared.overall.f1));
    println!("mean vision f1 multi-modal {:.4}", mean(&runs, |r| r.pretrained.vision_dependent.f1));
    println!("mean vision f1 text-only   {:.4}", mean(&runs, |r| r.text_only.vision_dependent.f1));
    println!("parameters shared {} unshared {}", runs[0].shared_params, runs[0].unshared_params);
    Ok(())
}
