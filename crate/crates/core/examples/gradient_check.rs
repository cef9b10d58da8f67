//! Finite-difference verification of backward rules.
//!
//! `cargo run --example gradient_check`

use docformer::tensor::gradcheck::{check_gradients, probe};
use docformer::tensor::{Rng, Tensor};

fn main() -> docformer::Result<()> {
    let mut rng = Rng::new(3);
    let x = Tensor::randn(&[4, 6], 1.0, &mut rng);
    let g = Tensor::uniform(&[6], 0.5, 1.5, &mut rng);
    let b = Tensor::randn(&[6], 0.1, &mut rng);
    let w = Tensor::randn(&[4, 6], 1.0, &mut rng);

    let ln = check_gradients(&[x.clone(), g, b], 1e-5, |tape, v| {
        let y = tape.layer_norm(v[0], v[1], v[2], 1e-5)?;
        probe(tape, y, &w)
    })?;
    println!("layer_norm: {} elements, max relative error {:.2e}", ln.checked, ln.max_rel_error);

    let sm = check_gradients(&[x.clone()], 1e-5, |tape, v| {
        let y = tape.softmax_rows(v[0], Some(&[true, false, true, true, true, false]))?;
        probe(tape, y, &w)
    })?;
    println!("masked softmax: max relative error {:.2e}", sm.max_rel_error);

    let img = Tensor::randn(&[2, 8, 8], 1.0, &mut rng);
    let k = Tensor::randn(&[3, 2, 3, 3], 0.3, &mut rng);
    let kb = Tensor::randn(&[3], 0.1, &mut rng);
    let out_w = Tensor::randn(&[3, 4, 4], 1.0, &mut rng);
    let conv = check_gradients(&[img, k, kb], 1e-5, |tape, v| {
        let y = tape.conv2d(v[0], v[1], v[2], 2, 1)?;
        probe(tape, y, &out_w)
    })?;
    println!("conv2d stride 2: per-input errors {:?}", conv.per_input.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>());

    let worst = [ln.max_rel_error, sm.max_rel_error, conv.max_rel_error].into_iter().fold(0.0, f64::max);
    println!("{}", if worst < 1e-4 { "all gradients agree" } else { "gradient mismatch" });
    Ok(())
}
