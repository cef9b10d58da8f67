//! Document model, OCR-JSON / PGM ingestion, layout binning and the
//! synthetic form corpus.

mod document;
mod image;
mod spatial;
pub mod synth;

pub use document::{load_document, save_document, Document, GrayImage, Label, Quad, WordBox};
pub use image::image_to_model_input;
pub use spatial::{bin_absolute, bin_boxes, bin_relative, normalize_and_bin, zero_delta_bin, SpatialRecord};
pub use synth::{generate_synthetic_corpus, Corpus, CorpusEntry, Split, SynthConfig};
