use crate::docdata::{bin_boxes, Document, Quad, SpatialRecord};
use crate::error::Result;
use crate::features::vocab::{Vocab, CLS, PAD};

/// Fixed-length token sequence of one document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<usize>,
    /// Source word of each position; `None` at `[CLS]` and `[PAD]`.
    pub alignment: Vec<Option<usize>>,
    /// True at real tokens (including `[CLS]`), false at `[PAD]`.
    pub mask: Vec<bool>,
}

impl Tokenized {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of word-piece positions (excludes `[CLS]` and padding).
    pub fn num_word_tokens(&self) -> usize {
        self.alignment.iter().filter(|a| a.is_some()).count()
    }

    /// Per-position labels inherited from the source word.
    pub fn labels(&self, doc: &Document) -> Vec<Option<usize>> {
        self.alignment.iter().map(|a| a.and_then(|w| doc.words[w].label)).collect()
    }
}

/// `[CLS]` followed by the first `n - 1` word pieces, padded to `n`.
pub fn tokenize(vocab: &Vocab, doc: &Document, n: usize) -> Tokenized {
    assert!(n >= 1, "sequence length must be >= 1");
    let mut ids = vec![CLS];
    let mut alignment = vec![None];
    'words: for (w, word) in doc.words.iter().enumerate() {
        for piece in vocab.tokenize_word(&word.text) {
            if ids.len() == n {
                break 'words;
            }
            ids.push(piece);
            alignment.push(Some(w));
        }
    }
    let real = ids.len();
    ids.resize(n, PAD);
    alignment.resize(n, None);
    let mask = (0..n).map(|i| i < real).collect();
    Tokenized { ids, alignment, mask }
}

/// Spatial records for every position: the full page at `[CLS]`, the source
/// word's box at word pieces (deltas to the next piece), empty boxes at pads.
pub fn token_spatial(doc: &Document, tok: &Tokenized, num_bins: usize) -> Result<Vec<SpatialRecord>> {
    let boxes: Vec<Quad> = tok.alignment.iter().filter_map(|a| a.map(|w| doc.words[w].quad)).collect();
    let mut out = Vec::with_capacity(tok.len());
    out.push(SpatialRecord::full_page(num_bins, 0));
    out.extend(bin_boxes(&boxes, doc.width, doc.height, num_bins, 1)?);
    while out.len() < tok.len() {
        out.push(SpatialRecord::padding(num_bins, out.len()));
    }
    Ok(out)
}
