//! Synthetic key/value form pages with per-word labels and a layout class.
//!
//! Layout of a page (pixel units, default 256x256):
//!
//! * a decoration drawn from the document class: a frame, a top band or a
//!   left band. Text never reveals the class, so classifying needs the image;
//! * a title block of two lines at fixed rows. With probability
//!   `title_underline_prob` the block is underlined and its words are
//!   headers, otherwise they are questions. The words themselves come from
//!   the same key vocabulary either way, so only the underline decides;
//! * body rows, each either `key value` pairs (question / answer) or filler
//!   text (other).
//!
//! Characters are drawn with a fixed 5x7 bitmap font whose glyphs always ink
//! their four corners, so the ink bounding box of a word equals its box.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::docdata::{load_document, save_document, Document, GrayImage, Label, WordBox};
use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const GLYPH_W: u32 = 5;
pub const GLYPH_H: u32 = 7;
/// Horizontal advance per character (glyph plus one blank column).
pub const ADVANCE: u32 = GLYPH_W + 1;
pub const MARGIN: u32 = 16;
pub const LINE_PITCH: u32 = 16;
pub const TITLE_LINES: u32 = 2;
/// First body row; everything above belongs to the title block.
pub const BODY_TOP: u32 = MARGIN + TITLE_LINES * LINE_PITCH + 8;
/// Underline sits this far below the glyph bottom, with this thickness.
pub const UNDERLINE_GAP: u32 = 2;
pub const UNDERLINE_THICKNESS: u32 = 4;
pub const NUM_CLASSES: usize = 3;

const INK: u8 = 0;
const PAPER: u8 = 255;

const KEYS: &[&str] = &[
    "name", "date", "address", "phone", "total", "amount", "invoice", "account", "city", "state", "zip", "email",
    "company", "title", "number", "code", "item", "price", "tax", "due", "order", "ship", "bill", "ref", "qty",
    "unit", "client", "agent", "region", "dept",
];
const VALUES: &[&str] = &[
    "smith", "jones", "paid", "open", "north", "south", "acme", "globex", "cash", "card", "yes", "no", "blue", "red",
    "main", "oak", "pine", "lake", "river", "hill", "alpha", "beta", "delta", "omega", "ltd", "inc", "corp", "west",
    "east", "park",
];
const FILLER: &[&str] = &[
    "page", "form", "rev", "copy", "note", "see", "attached", "confidential", "please", "sign", "here", "office",
    "use", "only", "thank", "you", "for", "the", "of", "and", "this", "is", "not", "valid", "without", "stamp",
    "internal", "draft", "final", "version",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub page_width: u32,
    pub page_height: u32,
    /// Fraction of documents (taken from the end) flagged as held-out.
    pub test_fraction: f64,
    pub title_underline_prob: f64,
    pub min_body_rows: usize,
    pub max_body_rows: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            page_width: 256,
            page_height: 256,
            test_fraction: 1.0 / 6.0,
            title_underline_prob: 0.5,
            min_body_rows: 4,
            max_body_rows: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub doc: Document,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    ocr_path: String,
    image_path: String,
    split: Split,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn docs(&self) -> impl Iterator<Item = &Document> {
        self.entries.iter().map(|e| &e.doc)
    }

    pub fn split(&self, split: Split) -> Vec<&Document> {
        self.entries.iter().filter(|e| e.split == split).map(|e| &e.doc).collect()
    }

    /// Write `docs/<id>.json`, `docs/<id>.pgm` and `manifest.json` under `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        let docs_dir = dir.join("docs");
        fs::create_dir_all(&docs_dir).map_err(|e| Error::io(&docs_dir, e))?;
        let mut manifest = Vec::with_capacity(self.entries.len());
        for entry in &self.entries {
            let ocr = format!("docs/{}.json", entry.doc.id);
            let img = format!("docs/{}.pgm", entry.doc.id);
            save_document(&entry.doc, &dir.join(&ocr), &dir.join(&img))?;
            manifest.push(ManifestEntry { ocr_path: ocr, image_path: img, split: entry.split });
        }
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Load every document listed in `dir/manifest.json`.
    pub fn read_from_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            offset: 0,
            message: e.to_string(),
        })?;
        let entries = manifest
            .into_iter()
            .map(|m| {
                let doc = load_document(&resolve(dir, &m.ocr_path), &resolve(dir, &m.image_path))?;
                Ok(CorpusEntry { doc, split: m.split })
            })
            .collect::<Result<_>>()?;
        Ok(Corpus { entries })
    }
}

fn resolve(dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

/// Whether a word's label can only be decided from the image: title-block
/// words are headers or questions depending solely on the underline.
pub fn is_vision_dependent(word: &WordBox) -> bool {
    word.y1() < BODY_TOP
}

/// 5x7 glyph rows (low 5 bits used, bit 4 = leftmost column).
pub fn glyph(c: char) -> [u8; 7] {
    // FNV-1a over the code point gives a fixed pseudo-random pattern.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in (c as u32).to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^= h >> 29;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 32;
    let mut rows = [0u8; 7];
    for (r, row) in rows.iter_mut().enumerate() {
        *row = ((h >> (5 * r)) & 0x1f) as u8;
    }
    rows[0] |= 0b10001;
    rows[6] |= 0b10001;
    rows
}

fn draw_word(img: &mut GrayImage, text: &str, x: u32, y: u32) {
    for (k, c) in text.chars().enumerate() {
        let gx = x + k as u32 * ADVANCE;
        for (r, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                    img.set((gx + col) as usize, (y + r as u32) as usize, INK);
                }
            }
        }
    }
}

fn word_width(text: &str) -> u32 {
    text.chars().count() as u32 * ADVANCE - 1
}

fn draw_decoration(img: &mut GrayImage, class: usize) {
    let (w, h) = (img.width, img.height);
    match class {
        0 => {
            img.fill_rect(4, 4, w - 4, 6, INK);
            img.fill_rect(4, h - 6, w - 4, h - 4, INK);
            img.fill_rect(4, 4, 6, h - 4, INK);
            img.fill_rect(w - 6, 4, w - 4, h - 4, INK);
        }
        1 => img.fill_rect(0, 2, w, 10, INK),
        _ => img.fill_rect(2, 0, 10, h, INK),
    }
}

struct LineBuilder<'a> {
    img: &'a mut GrayImage,
    words: &'a mut Vec<WordBox>,
    y: u32,
    x: u32,
    limit: u32,
}

impl LineBuilder<'_> {
    /// Place a word if it fits on the line; returns whether it was placed.
    fn push(&mut self, text: &str, label: Label) -> bool {
        let w = word_width(text);
        if self.x + w > self.limit {
            return false;
        }
        draw_word(self.img, text, self.x, self.y);
        self.words
            .push(WordBox::axis_aligned(text, self.x, self.y, self.x + w, self.y + GLYPH_H, Some(label.id())));
        self.x += w + 1 + ADVANCE;
        true
    }
}

fn value_word(rng: &mut Rng) -> String {
    if rng.bernoulli(0.25) {
        rng.range(10, 999).to_string()
    } else {
        (*rng.choose(VALUES)).to_string()
    }
}

/// One synthetic page from its own generator.
pub fn generate_document(rng: &mut Rng, id: String, cfg: &SynthConfig) -> Result<Document> {
    let min_height = BODY_TOP + LINE_PITCH * cfg.max_body_rows as u32 + MARGIN;
    if cfg.page_width < 160 || cfg.page_height < min_height {
        return Err(Error::InvalidArgument(format!(
            "page {}x{} too small for layout (need width >= 160, height >= {min_height})",
            cfg.page_width, cfg.page_height
        )));
    }
    if cfg.min_body_rows > cfg.max_body_rows {
        return Err(Error::InvalidArgument("min_body_rows exceeds max_body_rows".into()));
    }
    let class = rng.below(NUM_CLASSES);
    let mut img = GrayImage::new(cfg.page_width as usize, cfg.page_height as usize, PAPER);
    draw_decoration(&mut img, class);
    let mut words = Vec::new();
    let limit = cfg.page_width - MARGIN;

    let underlined = rng.bernoulli(cfg.title_underline_prob);
    let title_label = if underlined { Label::Header } else { Label::Question };
    for line in 0..TITLE_LINES {
        let y = MARGIN + line * LINE_PITCH;
        let mut lb = LineBuilder { img: &mut img, words: &mut words, y, x: MARGIN, limit };
        for _ in 0..rng.range(1, 3) {
            lb.push(rng.choose(KEYS), title_label);
        }
        let end = lb.x - ADVANCE - 1;
        if underlined {
            let uy = (y + GLYPH_H + UNDERLINE_GAP) as usize;
            img.fill_rect(MARGIN as usize, uy, end as usize, uy + UNDERLINE_THICKNESS as usize, INK);
        }
    }

    let rows = rng.range(cfg.min_body_rows, cfg.max_body_rows);
    for row in 0..rows {
        let y = BODY_TOP + row as u32 * LINE_PITCH;
        let mut lb = LineBuilder { img: &mut img, words: &mut words, y, x: MARGIN, limit };
        if rng.bernoulli(0.7) {
            for _ in 0..rng.range(1, 2) {
                lb.push(rng.choose(KEYS), Label::Question);
            }
            for _ in 0..rng.range(1, 2) {
                let v = value_word(rng);
                lb.push(&v, Label::Answer);
            }
        } else {
            for _ in 0..rng.range(2, 4) {
                lb.push(rng.choose(FILLER), Label::Other);
            }
        }
    }

    let doc = Document {
        id,
        width: cfg.page_width,
        height: cfg.page_height,
        words,
        image: img,
        doc_class: Some(class),
    };
    doc.validate()?;
    Ok(doc)
}

/// `n_docs` pages; document `i` draws from seed `corpus_seed ^ i`. The last
/// `round(n_docs * test_fraction)` documents are held out.
pub fn generate_synthetic_corpus(rng: &Rng, n_docs: usize, cfg: &SynthConfig) -> Result<Corpus> {
    if n_docs == 0 {
        return Err(Error::InvalidArgument("n_docs must be >= 1".into()));
    }
    let n_test = ((n_docs as f64) * cfg.test_fraction).round() as usize;
    let entries = (0..n_docs)
        .map(|i| {
            let mut doc_rng = rng.derive(i as u64);
            let doc = generate_document(&mut doc_rng, format!("doc_{i:05}"), cfg)?;
            let split = if i >= n_docs - n_test.min(n_docs) { Split::Test } else { Split::Train };
            Ok(CorpusEntry { doc, split })
        })
        .collect::<Result<_>>()?;
    Ok(Corpus { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(seed: u64, n: usize) -> Corpus {
        generate_synthetic_corpus(&Rng::new(seed), n, &SynthConfig::default()).unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(corpus(1, 1), corpus(1, 1));
        assert_ne!(corpus(1, 1), corpus(2, 1));
    }

    #[test]
    fn every_word_has_exactly_one_label() {
        for doc in corpus(3, 20).docs() {
            assert!(!doc.words.is_empty());
            for w in &doc.words {
                assert!(w.label.and_then(Label::from_id).is_some());
            }
            assert!(doc.doc_class.unwrap() < NUM_CLASSES);
        }
    }

    #[test]
    fn label_balance_over_hundred_docs() {
        let c = corpus(7, 100);
        let mut counts = [0usize; Label::COUNT];
        for w in c.docs().flat_map(|d| &d.words) {
            counts[w.label.unwrap()] += 1;
        }
        let total: usize = counts.iter().sum();
        for (k, &n) in counts.iter().enumerate() {
            assert!(n as f64 / total as f64 >= 0.05, "label {k}: {n}/{total}");
        }
    }

    /// Ink bounding box inside each box grown by one pixel reproduces the box.
    #[test]
    fn rendered_glyph_blocks_recover_word_boxes() {
        for doc in corpus(11, 10).docs() {
            for w in &doc.words {
                let (x0, y0) = (w.x1().saturating_sub(1), w.y1().saturating_sub(1));
                let (x1, y1) = (w.x3() + 1, w.y3() + 1);
                let (mut min_x, mut min_y, mut max_x, mut max_y) = (u32::MAX, u32::MAX, 0, 0);
                for y in y0..y1 {
                    for x in x0..x1 {
                        if doc.image.get(x as usize, y as usize) == INK {
                            min_x = min_x.min(x);
                            min_y = min_y.min(y);
                            max_x = max_x.max(x);
                            max_y = max_y.max(y);
                        }
                    }
                }
                assert_eq!((min_x, min_y, max_x + 1, max_y + 1), (w.x1(), w.y1(), w.x3(), w.y3()), "{}", w.text);
            }
        }
    }

    #[test]
    fn title_label_follows_underline() {
        for doc in corpus(5, 30).docs() {
            let title: Vec<_> = doc.words.iter().filter(|w| is_vision_dependent(w)).collect();
            assert!(!title.is_empty());
            let first = title[0];
            let uy = (first.y3() + UNDERLINE_GAP + 1) as usize;
            let underlined = doc.image.get(first.x1() as usize, uy) == INK;
            let expected = if underlined { Label::Header } else { Label::Question };
            assert!(title.iter().all(|w| w.label == Some(expected.id())));
        }
    }

    #[test]
    fn page_too_small_is_an_error() {
        let cfg = SynthConfig { page_height: 64, ..SynthConfig::default() };
        assert!(generate_synthetic_corpus(&Rng::new(1), 1, &cfg).is_err());
    }

    #[test]
    fn glyph_corners_always_inked() {
        for c in "abcxyz0189".chars() {
            let g = glyph(c);
            assert_eq!(g[0] & 0b10001, 0b10001);
            assert_eq!(g[6] & 0b10001, 0b10001);
        }
    }
}
