//! Text, visual and spatial embeddings plus the attention mask.

mod embed;
mod tokenize;
mod vocab;

pub use embed::{DocInput, FeatureBundle, FeatureParams, Modality, SpatialTables, EMBEDDING_STD, SPATIAL_SUBFEATURES};
pub use tokenize::{token_spatial, tokenize, Tokenized};
pub use vocab::{Vocab, CLS, CONTINUATION, MASK, PAD, RESERVED, UNK};

#[cfg(test)]
mod tests;
