use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::docdata::Document;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const MASK: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[CLS]", "[MASK]", "[UNK]"];
pub const CONTINUATION: &str = "##";

/// Subword inventory with greedy longest-match tokenization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Build from whole words and single characters seen in `docs`.
    ///
    /// Every character appears as a word-initial piece and as a `##`
    /// continuation, so any word made of seen characters tokenizes without
    /// `[UNK]`. Whole words fill the remaining room by descending frequency
    /// (ties broken lexicographically). Ids follow lexicographic order.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>, cap: usize) -> Result<Self> {
        if cap <= RESERVED.len() {
            return Err(Error::InvalidArgument(format!("vocab cap {cap} leaves no room past the reserved tokens")));
        }
        let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut chars: BTreeSet<char> = BTreeSet::new();
        for doc in docs {
            for w in &doc.words {
                if w.text.is_empty() {
                    continue;
                }
                *word_counts.entry(w.text.as_str()).or_default() += 1;
                chars.extend(w.text.chars());
            }
        }
        let room = cap - RESERVED.len();
        let mut chosen: BTreeSet<String> = BTreeSet::new();
        for c in &chars {
            if chosen.len() + 2 > room {
                break;
            }
            chosen.insert(c.to_string());
            chosen.insert(format!("{CONTINUATION}{c}"));
        }
        let mut by_freq: Vec<(&str, usize)> = word_counts.into_iter().filter(|(w, _)| w.chars().count() > 1).collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        for (w, _) in by_freq {
            if chosen.len() >= room {
                break;
            }
            chosen.insert(w.to_string());
        }
        Ok(Self::from_tokens(chosen.into_iter().collect()))
    }

    fn from_tokens(body: Vec<String>) -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(body).collect();
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Greedy longest-match pieces of one word; a word with an unmatched
    /// remainder becomes a single `[UNK]`.
    pub fn tokenize_word(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let found = (start + 1..=chars.len()).rev().find_map(|end| {
                let piece: String = chars[start..end].iter().collect();
                let key = if start == 0 { piece } else { format!("{CONTINUATION}{piece}") };
                self.id(&key).map(|id| (id, end))
            });
            match found {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => return vec![UNK],
            }
        }
        out
    }

    /// Text of a piece with any continuation marker removed.
    pub fn surface(&self, id: usize) -> &str {
        let t = self.token(id).unwrap_or("");
        t.strip_prefix(CONTINUATION).unwrap_or(t)
    }

    /// One non-reserved token per line; line `k` is id `4 + k`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens[RESERVED.len()..] {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let body: Vec<String> = text.lines().map(str::to_string).collect();
        let mut seen = BTreeSet::new();
        for (k, t) in body.iter().enumerate() {
            if t.is_empty() || RESERVED.contains(&t.as_str()) || !seen.insert(t) {
                return Err(Error::Validation(format!("vocab line {}: empty, reserved or duplicate token {t:?}", k + 1)));
            }
        }
        Ok(Self::from_tokens(body))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text)
    }
}
