//! Token accuracy, entity-level precision / recall / F1 and document accuracy.

use serde::{Deserialize, Serialize};

/// Maximal run `[start, end)` of one non-other label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

pub fn entity_spans(labels: &[usize], other: usize) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let class = labels[i];
        let start = i;
        while i < labels.len() && labels[i] == class {
            i += 1;
        }
        if class != other {
            spans.push(Span { start, end: i, class });
        }
    }
    spans
}

/// Running counts behind precision / recall.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpanCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
    pub tokens_correct: usize,
    pub tokens: usize,
}

impl SpanCounts {
    /// Add one sequence. A predicted span counts only on an exact span and
    /// class match with a gold span.
    pub fn add(&mut self, pred: &[usize], gold: &[usize], other: usize) {
        assert_eq!(pred.len(), gold.len(), "prediction and gold lengths differ");
        let p = entity_spans(pred, other);
        let g = entity_spans(gold, other);
        self.correct += p.iter().filter(|s| g.contains(s)).count();
        self.predicted += p.len();
        self.gold += g.len();
        self.tokens_correct += pred.iter().zip(gold).filter(|(a, b)| a == b).count();
        self.tokens += gold.len();
    }

    /// 0 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    /// 0 when precision + recall is 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn token_accuracy(&self) -> f64 {
        ratio(self.tokens_correct, self.tokens)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Metrics report written by evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub n_docs: usize,
}

impl Metrics {
    pub fn from_counts(c: &SpanCounts, n_docs: usize) -> Self {
        Metrics { precision: c.precision(), recall: c.recall(), f1: c.f1(), accuracy: c.token_accuracy(), n_docs }
    }

    /// Document classification: only accuracy is meaningful, the span fields
    /// stay at 0.
    pub fn classification(pred: &[usize], gold: &[usize]) -> Self {
        let correct = pred.iter().zip(gold).filter(|(a, b)| a == b).count();
        Metrics { precision: 0.0, recall: 0.0, f1: 0.0, accuracy: ratio(correct, gold.len()), n_docs: gold.len() }
    }
}
