//! The define-by-run tape: build a small computation, run backward, read
//! gradients back.
//!
//! `cargo run --example autodiff_basics`

use docformer::tensor::{Rng, Tape, Tensor};

fn main() -> docformer::Result<()> {
    let mut rng = Rng::new(7);
    let mut tape = Tape::new();

    // A two-layer perceptron over three examples.
    let x = tape.constant(Tensor::randn(&[3, 4], 1.0, &mut rng));
    let w1 = tape.param(Tensor::randn(&[4, 5], 0.5, &mut rng));
    let b1 = tape.param(Tensor::zeros(&[5]));
    let w2 = tape.param(Tensor::randn(&[5, 2], 0.5, &mut rng));

    let h = tape.linear(x, w1, Some(b1))?;
    let h = tape.gelu(h)?;
    let logits = tape.linear(h, w2, None)?;
    let loss = tape.cross_entropy_from_logits(logits, &[0, 1, 1])?;

    println!("loss = {:.6}", tape.value(loss).item());
    println!("tape nodes = {}, forward flops = {}", tape.len(), tape.flops());

    tape.backward(loss)?;
    for (name, v) in [("w1", w1), ("b1", b1), ("w2", w2)] {
        let g = tape.grad(v)?;
        let norm = g.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        println!("d loss / d {name}: shape {:?}, norm {norm:.6}", g.shape());
    }

    // Masked softmax: masked columns receive exactly zero probability.
    let mut tape = Tape::new();
    let scores = tape.constant(Tensor::randn(&[2, 4], 1.0, &mut rng));
    let probs = tape.softmax_rows(scores, Some(&[true, true, false, true]))?;
    let p = tape.value(probs);
    for r in 0..2 {
        let row: Vec<String> = (0..4).map(|c| format!("{:.3}", p.at2(r, c))).collect();
        println!("softmax row {r}: [{}]", row.join(", "));
    }
    Ok(())
}
