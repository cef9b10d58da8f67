use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token label ids used by the synthetic corpus and the sequence-labeling head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Other = 0,
    Header = 1,
    Question = 2,
    Answer = 3,
}

impl Label {
    pub const COUNT: usize = 4;
    pub const ALL: [Label; 4] = [Label::Other, Label::Header, Label::Question, Label::Answer];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Label> {
        Label::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Other => "other",
            Label::Header => "header",
            Label::Question => "question",
            Label::Answer => "answer",
        }
    }
}

/// Quadrilateral corners in pixels: top-left, top-right, bottom-right, bottom-left.
pub type Quad = [u32; 8];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordBox {
    pub text: String,
    pub quad: Quad,
    pub label: Option<usize>,
}

impl WordBox {
    /// Axis-aligned box `(x1, y1)`-`(x3, y3)` as a quadrilateral.
    pub fn axis_aligned(text: impl Into<String>, x1: u32, y1: u32, x3: u32, y3: u32, label: Option<usize>) -> Self {
        WordBox {
            text: text.into(),
            quad: [x1, y1, x3, y1, x3, y3, x1, y3],
            label,
        }
    }

    pub fn x1(&self) -> u32 {
        self.quad[0]
    }
    pub fn y1(&self) -> u32 {
        self.quad[1]
    }
    pub fn x3(&self) -> u32 {
        self.quad[4]
    }
    pub fn y3(&self) -> u32 {
        self.quad[5]
    }
}

/// 8-bit grayscale raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        GrayImage { width, height, pixels: vec![fill; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        if x < self.width && y < self.height {
            self.pixels[y * self.width + x] = v;
        }
    }

    /// Fill the half-open rectangle `[x0, x1) x [y0, y1)`, clipped to the page.
    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, v: u8) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                self.pixels[y * self.width + x] = v;
            }
        }
    }

    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Validation("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(Error::Validation(format!("expected PGM magic P5, found {:?}", fields[0])));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Validation(format!("bad PGM header field {s:?}")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Validation(format!("PGM maxval must be 255, got {maxval}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Validation("PGM has zero extent".into()));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let need = width * height;
        if bytes.len() < pos + need {
            return Err(Error::Validation(format!(
                "PGM raster truncated: need {need} bytes, have {}",
                bytes.len().saturating_sub(pos)
            )));
        }
        Ok(GrayImage { width, height, pixels: bytes[pos..pos + need].to_vec() })
    }
}

/// One page: OCR words in emission order plus the page raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub words: Vec<WordBox>,
    pub image: GrayImage,
    pub doc_class: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct OcrJson {
    id: String,
    width: u32,
    height: u32,
    class: Option<usize>,
    words: Vec<OcrWord>,
}

#[derive(Serialize, Deserialize)]
struct OcrWord {
    text: String,
    #[serde(rename = "box")]
    quad: [i64; 8],
    label: Option<usize>,
}

impl Document {
    /// Check coordinate and raster invariants.
    pub fn validate(&self) -> Result<()> {
        if self.image.width != self.width as usize || self.image.height != self.height as usize {
            return Err(Error::Validation(format!(
                "document {}: image is {}x{} but page is {}x{}",
                self.id, self.image.width, self.image.height, self.width, self.height
            )));
        }
        for (i, w) in self.words.iter().enumerate() {
            check_quad(i, &w.quad.map(i64::from), self.width, self.height)?;
        }
        Ok(())
    }

    /// Serialize the OCR JSON (compact, schema field order).
    pub fn to_ocr_json(&self) -> String {
        let doc = OcrJson {
            id: self.id.clone(),
            width: self.width,
            height: self.height,
            class: self.doc_class,
            words: self
                .words
                .iter()
                .map(|w| OcrWord { text: w.text.clone(), quad: w.quad.map(i64::from), label: w.label })
                .collect(),
        };
        serde_json::to_string(&doc).expect("OCR JSON serialization is infallible")
    }

    /// Parse OCR JSON and attach `image`.
    pub fn from_ocr_json(json: &str, image: GrayImage, source: &str) -> Result<Self> {
        let parsed: OcrJson = serde_json::from_str(json).map_err(|e| Error::Parse {
            path: source.to_string(),
            offset: byte_offset(json, e.line(), e.column()),
            message: e.to_string(),
        })?;
        let mut words = Vec::with_capacity(parsed.words.len());
        for (i, w) in parsed.words.into_iter().enumerate() {
            check_quad(i, &w.quad, parsed.width, parsed.height)?;
            words.push(WordBox { text: w.text, quad: w.quad.map(|c| c as u32), label: w.label });
        }
        let doc = Document {
            id: parsed.id,
            width: parsed.width,
            height: parsed.height,
            words,
            image,
            doc_class: parsed.class,
        };
        doc.validate()?;
        Ok(doc)
    }
}

fn check_quad(index: usize, q: &[i64; 8], width: u32, height: u32) -> Result<()> {
    for (c, &v) in q.iter().enumerate() {
        let extent = if c % 2 == 0 { width } else { height };
        if v < 0 || v > i64::from(extent) {
            return Err(Error::Validation(format!(
                "word {index}: coordinate {v} outside page extent {extent}"
            )));
        }
    }
    if q[0] > q[4] || q[1] > q[5] {
        return Err(Error::Validation(format!(
            "word {index}: top-left ({}, {}) is not above-left of bottom-right ({}, {})",
            q[0], q[1], q[4], q[5]
        )));
    }
    Ok(())
}

/// serde_json reports 1-based line and column; convert to a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn load_document(ocr_json_path: &Path, image_path: &Path) -> Result<Document> {
    let json = fs::read_to_string(ocr_json_path).map_err(|e| Error::io(ocr_json_path, e))?;
    let bytes = fs::read(image_path).map_err(|e| Error::io(image_path, e))?;
    let image = GrayImage::from_pgm(&bytes)?;
    Document::from_ocr_json(&json, image, &ocr_json_path.display().to_string())
}

pub fn save_document(doc: &Document, ocr_json_path: &Path, image_path: &Path) -> Result<()> {
    fs::write(ocr_json_path, doc.to_ocr_json()).map_err(|e| Error::io(ocr_json_path, e))?;
    fs::write(image_path, doc.image.to_pgm()).map_err(|e| Error::io(image_path, e))?;
    Ok(())
}
