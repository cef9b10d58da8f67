use crate::docdata::{Document, Quad};
use crate::error::{Error, Result};

/// Binned layout features of one token.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialRecord {
    pub x1: usize,
    pub y1: usize,
    pub x3: usize,
    pub y3: usize,
    pub w: usize,
    pub h: usize,
    /// Binned deltas to the next token: x1, x2, x3, x4, centroid-x.
    pub rel_x: [usize; 5],
    pub rel_y: [usize; 5],
    /// Unbinned pixel deltas behind `rel_x` / `rel_y`.
    pub raw_rel_x: [f64; 5],
    pub raw_rel_y: [f64; 5],
    pub abs_pos: usize,
}

impl SpatialRecord {
    /// Record covering the whole page (the `[CLS]` position).
    pub fn full_page(num_bins: usize, abs_pos: usize) -> Self {
        let top = num_bins - 1;
        let zero = zero_delta_bin(num_bins);
        SpatialRecord {
            x1: 0,
            y1: 0,
            x3: top,
            y3: top,
            w: top,
            h: top,
            rel_x: [zero; 5],
            rel_y: [zero; 5],
            raw_rel_x: [0.0; 5],
            raw_rel_y: [0.0; 5],
            abs_pos,
        }
    }

    /// Record for a `[PAD]` position: empty box at the origin.
    pub fn padding(num_bins: usize, abs_pos: usize) -> Self {
        let zero = zero_delta_bin(num_bins);
        SpatialRecord {
            x1: 0,
            y1: 0,
            x3: 0,
            y3: 0,
            w: 0,
            h: 0,
            rel_x: [zero; 5],
            rel_y: [zero; 5],
            raw_rel_x: [0.0; 5],
            raw_rel_y: [0.0; 5],
            abs_pos,
        }
    }

    /// The 16 lookup indices in table order: x1, x3, w, rel_x[0..5], y1, y3, h, rel_y[0..5].
    pub fn lookup_indices(&self) -> [usize; 16] {
        let mut out = [0usize; 16];
        out[0] = self.x1;
        out[1] = self.x3;
        out[2] = self.w;
        out[3..8].copy_from_slice(&self.rel_x);
        out[8] = self.y1;
        out[9] = self.y3;
        out[10] = self.h;
        out[11..16].copy_from_slice(&self.rel_y);
        out
    }
}

/// Bin of a zero relative delta (the shift applied to every delta).
pub fn zero_delta_bin(num_bins: usize) -> usize {
    num_bins / 2
}

/// `floor(coord / extent * (num_bins - 1))`, clamped to the table.
pub fn bin_absolute(coord: f64, extent: f64, num_bins: usize) -> usize {
    let top = (num_bins - 1) as f64;
    ((coord / extent * top).floor().clamp(0.0, top)) as usize
}

/// Delta scaled like an absolute coordinate, shifted so zero sits mid-table,
/// then clamped into `[0, num_bins - 1]`.
pub fn bin_relative(delta: f64, extent: f64, num_bins: usize) -> usize {
    let top = (num_bins - 1) as f64;
    let shifted = (delta / extent * top).floor() + zero_delta_bin(num_bins) as f64;
    shifted.clamp(0.0, top) as usize
}

fn corner_deltas(cur: &Quad, next: &Quad, axis: usize) -> [f64; 5] {
    let c = |q: &Quad, k: usize| f64::from(q[2 * k + axis]);
    let centroid = |q: &Quad| (0..4).map(|k| c(q, k)).sum::<f64>() / 4.0;
    [
        c(next, 0) - c(cur, 0),
        c(next, 1) - c(cur, 1),
        c(next, 2) - c(cur, 2),
        c(next, 3) - c(cur, 3),
        centroid(next) - centroid(cur),
    ]
}

/// Bin a sequence of boxes; relative features point at the next box, and
/// the final box gets zero deltas. `first_pos` is the absolute position of
/// the first box.
pub fn bin_boxes(boxes: &[Quad], width: u32, height: u32, num_bins: usize, first_pos: usize) -> Result<Vec<SpatialRecord>> {
    if num_bins < 2 {
        return Err(Error::InvalidArgument(format!("num_bins must be >= 2, got {num_bins}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("page has zero extent".into()));
    }
    let (pw, ph) = (f64::from(width), f64::from(height));
    let records = boxes
        .iter()
        .enumerate()
        .map(|(k, q)| {
            let (raw_x, raw_y) = match boxes.get(k + 1) {
                Some(next) => (corner_deltas(q, next, 0), corner_deltas(q, next, 1)),
                None => ([0.0; 5], [0.0; 5]),
            };
            SpatialRecord {
                x1: bin_absolute(f64::from(q[0]), pw, num_bins),
                y1: bin_absolute(f64::from(q[1]), ph, num_bins),
                x3: bin_absolute(f64::from(q[4]), pw, num_bins),
                y3: bin_absolute(f64::from(q[5]), ph, num_bins),
                w: bin_absolute(f64::from(q[4] - q[0]), pw, num_bins),
                h: bin_absolute(f64::from(q[5] - q[1]), ph, num_bins),
                rel_x: raw_x.map(|d| bin_relative(d, pw, num_bins)),
                rel_y: raw_y.map(|d| bin_relative(d, ph, num_bins)),
                raw_rel_x: raw_x,
                raw_rel_y: raw_y,
                abs_pos: first_pos + k,
            }
        })
        .collect();
    Ok(records)
}

/// Per-word spatial records of a document, in OCR order.
pub fn normalize_and_bin(doc: &Document, num_bins: usize) -> Result<Vec<SpatialRecord>> {
    if doc.words.is_empty() {
        return Err(Error::InvalidArgument(format!("document {} has no words", doc.id)));
    }
    let boxes: Vec<Quad> = doc.words.iter().map(|w| w.quad).collect();
    bin_boxes(&boxes, doc.width, doc.height, num_bins, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docdata::{GrayImage, WordBox};
    use proptest::prelude::*;

    fn doc(words: Vec<WordBox>) -> Document {
        Document { id: "t".into(), width: 256, height: 256, words, image: GrayImage::new(256, 256, 255), doc_class: None }
    }

    #[test]
    fn full_page_word_hits_extreme_bins() {
        let d = doc(vec![WordBox::axis_aligned("a", 0, 0, 256, 256, None)]);
        let r = &normalize_and_bin(&d, 1000).unwrap()[0];
        assert_eq!((r.x1, r.x3, r.y1, r.y3), (0, 999, 0, 999));
        assert_eq!(r.rel_x, [500; 5], "last token has zero deltas");
    }

    #[test]
    fn identical_consecutive_boxes_encode_zero_delta() {
        let w = WordBox::axis_aligned("a", 10, 20, 40, 27, None);
        let recs = normalize_and_bin(&doc(vec![w.clone(), w]), 128).unwrap();
        assert_eq!(recs[0].rel_x, [zero_delta_bin(128); 5]);
        assert_eq!(recs[0].rel_y, [zero_delta_bin(128); 5]);
    }

    #[test]
    fn empty_document_and_tiny_table_are_errors() {
        assert!(normalize_and_bin(&doc(vec![]), 128).is_err());
        let d = doc(vec![WordBox::axis_aligned("a", 0, 0, 1, 1, None)]);
        assert!(normalize_and_bin(&d, 1).is_err());
    }

    proptest! {
        #[test]
        fn binning_is_monotone(a in 0u32..=256, b in 0u32..=256, bins in 2usize..2000) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(bin_absolute(lo.into(), 256.0, bins) <= bin_absolute(hi.into(), 256.0, bins));
            prop_assert!(bin_absolute(hi.into(), 256.0, bins) < bins);
            let (dl, dh) = (f64::from(lo) - 128.0, f64::from(hi) - 128.0);
            prop_assert!(bin_relative(dl, 256.0, bins) <= bin_relative(dh, 256.0, bins));
            prop_assert!(bin_relative(dh, 256.0, bins) < bins);
        }
    }
}
