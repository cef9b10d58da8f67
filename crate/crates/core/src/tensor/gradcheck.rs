//! Central finite-difference gradient checking.
//!
//! Only forward values are used to build the numeric estimate, so the check
//! is independent of every backward rule it verifies.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Denominator floor for relative errors, so exact zeros compare absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error per input tensor.
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compare the tape gradient of the scalar `f(inputs)` with central
/// differences of step `eps`, for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect::<Result<_>>()?;

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    let mut work = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for e in 0..inputs[k].numel() {
            let orig = inputs[k].data()[e];
            work[k].data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work[k].data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work[k].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[e], numeric));
            checked += 1;
        }
        per_input.push(worst);
    }
    let max_rel_error = per_input.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport { per_input, max_rel_error, checked })
}

/// Weighted sum `sum(w * y)` turning any tensor into a generic scalar probe.
pub fn probe(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(y, w)?;
    tape.sum(prod)
}
