//! Dense tensors, a define-by-run autodiff tape, seeded randomness and flop
//! accounting.

pub mod gradcheck;
mod rng;
mod tape;
mod value;

pub use rng::{Rng, RngState};
pub use tape::{rel_offset, RelSide, Tape, Var};
pub use value::Tensor;

#[cfg(test)]
mod tests;
