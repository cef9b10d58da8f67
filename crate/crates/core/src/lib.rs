//! Multi-modal document transformer at desk scale.
//!
//! The crate covers the whole pipeline: a small autodiff tensor library
//! ([`tensor`]), document ingestion and a synthetic form generator
//! ([`docdata`]), visual/text/spatial feature branches ([`features`]), the
//! discrete multi-modal self-attention encoder ([`encoder`]), the three
//! pre-training objectives ([`pretrain`]), optimization, checkpoints and
//! fine-tuning ([`train`]), and the command surface ([`cli`]).
//!
//! Runnable walkthroughs live in `examples/`; `cargo run --example <name>`.

pub mod cli;
pub mod config;
pub mod docdata;
pub mod encoder;
mod error;
pub mod experiment;
pub mod features;
pub mod model;
pub mod params;
pub mod pretrain;
pub mod tensor;
#[cfg(test)]
mod testutil;
pub mod train;

pub use error::{Error, Result};
