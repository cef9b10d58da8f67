//! Fine-tuning for sequence labeling and document classification, plus
//! prediction and evaluation.

use serde::{Deserialize, Serialize};

use crate::config::{FinetuneTask, RunConfig};
use crate::docdata::synth::is_vision_dependent;
use crate::docdata::{Document, Label};
use crate::encoder::Branches;
use crate::error::{Error, Result};
use crate::features::DocInput;
use crate::model::{is_backbone_param, Model};
use crate::params::{Binding, Grads, ParamStore};
use crate::tensor::{Rng, Tape, Var};
use crate::train::checkpoint::{ensure_compatible, Checkpoint};
use crate::train::heads::{FinetuneHead, Pooler, HEAD_PREFIX};
use crate::train::metrics::{Metrics, SpanCounts};
use crate::train::optim::{lr_schedule, AdamState};
use crate::train::{apply_update, batch_for_step, steps_per_epoch};

const ORDER_STREAM: u64 = 0x6669_6e65_0000_0000;
const SAMPLE_STREAM: u64 = 0x6669_6e65_7361_6d70;
const HEAD_STREAM: u64 = 0x6669_6e65_6865_6164;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneStepLog {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Prediction {
    /// Arg-max class at every sequence position.
    Tokens(Vec<usize>),
    Document(usize),
}

/// Sequence-labeling evaluation over all labeled tokens and over the tokens
/// of vision-dependent words only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqReport {
    pub overall: Metrics,
    pub vision_dependent: Metrics,
}

#[derive(Clone, Debug)]
pub struct Finetuner {
    pub cfg: RunConfig,
    pub model: Model,
    pub head: FinetuneHead,
    /// Present for document classification.
    pub pooler: Option<Pooler>,
    pub optim: AdamState,
    pub rng: Rng,
    pub step: u64,
}

impl Finetuner {
    /// Fresh backbone (or the backbone of `base`, heads discarded) with a new
    /// task head of `n_classes` outputs.
    pub fn new(cfg: &RunConfig, base: Option<&Checkpoint>, n_classes: usize) -> Result<Self> {
        cfg.validate()?;
        if n_classes < 1 {
            return Err(Error::Config("fine-tuning needs at least one class".into()));
        }
        let mut model = Model::new(&cfg.model, &mut Rng::new(cfg.seed))?;
        if let Some(ck) = base {
            ensure_compatible(&ck.config, cfg)?;
            model.store.load_where(&ck.store, is_backbone_param)?;
            if cfg.model.zero_visual_values {
                model.disable_visual_values();
            }
        }
        let mut rng = Rng::new(cfg.seed).derive(HEAD_STREAM);
        let pooler = match cfg.task {
            FinetuneTask::Cls => Some(Pooler::init(&mut model.store, cfg.model.d, &mut rng)),
            FinetuneTask::Seq => None,
        };
        let head = FinetuneHead::init(&mut model.store, cfg.model.d, n_classes, cfg.head, &mut rng);
        let optim = AdamState::new(&model.store);
        Ok(Finetuner { cfg: cfg.clone(), model, head, pooler, optim, rng: Rng::new(cfg.seed).derive(SAMPLE_STREAM), step: 0 })
    }

    /// Restore a fine-tuned model, including frozen flags and optimizer state.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.phase != "finetune" {
            return Err(Error::Incompatible(format!("expected a fine-tuned checkpoint, found phase `{}`", ck.phase)));
        }
        let out_b = format!("{HEAD_PREFIX}out.b");
        let n_classes = ck
            .store
            .id(&out_b)
            .map(|id| ck.store.get(id).numel())
            .ok_or_else(|| Error::Incompatible(format!("checkpoint has no `{out_b}`")))?;
        let mut f = Self::new(&ck.config, None, n_classes)?;
        f.model.store.load_from(&ck.store)?;
        copy_trainable(&mut f.model.store, &ck.store);
        if let Some(o) = &ck.optim {
            f.optim = o.clone();
        }
        f.rng = Rng::from_state(&ck.rng).ok_or_else(|| Error::Validation("unreadable RNG state in checkpoint".into()))?;
        f.step = ck.step;
        Ok(f)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            phase: "finetune".into(),
            step: self.step,
            rng: self.rng.state(),
            store: self.model.store.clone(),
            optim: Some(self.optim.clone()),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_classes
    }

    pub fn total_steps(&self, n_docs: usize) -> u64 {
        self.cfg.finetune_epochs as u64 * steps_per_epoch(n_docs, self.cfg.batch_size)
    }

    /// Task logits: `[N, C]` for sequence labeling, `[1, C]` for classification.
    pub fn logits(&self, tape: &mut Tape, b: &Binding, input: &DocInput, dropout: Option<&mut Rng>) -> Result<Var> {
        let enc = self.model.encode(tape, b, input, Branches::Both, dropout)?;
        let features = match &self.pooler {
            Some(p) => p.forward(tape, b, enc.output.hidden)?,
            None => enc.output.hidden,
        };
        self.head.forward(tape, b, features)
    }

    /// Rows and targets the loss is taken over.
    fn targets(&self, input: &DocInput) -> Result<(Vec<usize>, Vec<usize>)> {
        let c = self.n_classes();
        let check = |label: usize| {
            if label >= c {
                Err(Error::Validation(format!("label id {label} is out of range for {c} classes")))
            } else {
                Ok(label)
            }
        };
        match self.cfg.task {
            FinetuneTask::Seq => {
                let mut rows = Vec::new();
                let mut labels = Vec::new();
                for (k, l) in input.labels.iter().enumerate() {
                    if let Some(l) = *l {
                        rows.push(k);
                        labels.push(check(l)?);
                    }
                }
                Ok((rows, labels))
            }
            FinetuneTask::Cls => {
                let class = input.doc_class.ok_or_else(|| Error::MissingLabel("document has no class".into()))?;
                Ok((vec![0], vec![check(class)?]))
            }
        }
    }

    /// Cross-entropy of one document; `None` when it has no labeled token.
    pub fn loss(&self, tape: &mut Tape, b: &Binding, input: &DocInput, dropout: Option<&mut Rng>) -> Result<Option<Var>> {
        let (rows, labels) = self.targets(input)?;
        if rows.is_empty() {
            return Ok(None);
        }
        let logits = self.logits(tape, b, input, dropout)?;
        let picked = match self.cfg.task {
            FinetuneTask::Seq => tape.embedding_lookup(logits, &rows)?,
            FinetuneTask::Cls => logits,
        };
        Ok(Some(tape.cross_entropy_from_logits(picked, &labels)?))
    }

    pub fn train_step(&mut self, data: &[DocInput]) -> Result<FinetuneStepLog> {
        if data.is_empty() {
            return Err(Error::Validation("fine-tuning corpus is empty".into()));
        }
        let (epoch, idx) = batch_for_step(self.cfg.seed, ORDER_STREAM, self.step, data.len(), self.cfg.batch_size);
        let mut rng = self.rng.clone();
        let mut grads = Grads::zeros_like(&self.model.store);
        let mut sum = 0.0;
        for &i in &idx {
            let mut tape = Tape::new();
            let b = self.model.store.bind(&mut tape);
            let Some(loss) = self.loss(&mut tape, &b, &data[i], Some(&mut rng))? else { continue };
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { step: self.step + 1, message: format!("fine-tuning loss {value}") });
            }
            tape.backward(loss)?;
            grads.accumulate(&b.grads(&tape)?);
            sum += value;
        }
        let scale = 1.0 / idx.len() as f64;
        grads.scale(scale);
        let lr = lr_schedule(self.step + 1, self.total_steps(data.len()), &self.cfg.finetune_optim);
        let grad_norm = apply_update(&mut self.model.store, &mut self.optim, grads, &self.cfg.finetune_optim, lr)?;
        self.rng = rng;
        self.step += 1;
        Ok(FinetuneStepLog { step: self.step, epoch, lr, loss: sum * scale, grad_norm })
    }

    /// Train until `end_step` completed steps.
    pub fn run_until(
        &mut self,
        data: &[DocInput],
        end_step: u64,
        mut on_step: impl FnMut(&Self, &FinetuneStepLog) -> Result<()>,
    ) -> Result<Vec<FinetuneStepLog>> {
        let mut logs = Vec::new();
        while self.step < end_step {
            let log = self.train_step(data)?;
            on_step(self, &log)?;
            logs.push(log);
        }
        Ok(logs)
    }

    /// Run all configured fine-tuning epochs.
    pub fn fit(&mut self, data: &[DocInput]) -> Result<Vec<FinetuneStepLog>> {
        let total = self.total_steps(data.len());
        self.run_until(data, total, |_, _| Ok(()))
    }

    pub fn predict(&self, input: &DocInput) -> Result<Prediction> {
        let mut tape = Tape::new();
        let b = self.model.store.bind(&mut tape);
        let logits = self.logits(&mut tape, &b, input, None)?;
        let value = tape.value(logits);
        let c = self.n_classes();
        let argmax = |row: &[f64]| (0..c).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        let rows: Vec<usize> = value.data().chunks(c).map(argmax).collect();
        Ok(match self.cfg.task {
            FinetuneTask::Seq => Prediction::Tokens(rows),
            FinetuneTask::Cls => Prediction::Document(rows[0]),
        })
    }

    /// Entity and token metrics over every labeled token position, and
    /// separately over positions of vision-dependent words.
    pub fn evaluate_seq(&self, docs: &[&Document], inputs: &[DocInput]) -> Result<SeqReport> {
        if self.cfg.task != FinetuneTask::Seq {
            return Err(Error::Config("sequence evaluation needs finetune.task = seq".into()));
        }
        let other = Label::Other.id();
        let (mut all, mut vision) = (SpanCounts::default(), SpanCounts::default());
        for (doc, input) in docs.iter().zip(inputs) {
            require_word_labels(doc)?;
            let Prediction::Tokens(pred) = self.predict(input)? else { unreachable!() };
            let (mut p_all, mut g_all, mut p_vis, mut g_vis) = (vec![], vec![], vec![], vec![]);
            for (k, label) in input.labels.iter().enumerate() {
                let (Some(gold), Some(w)) = (*label, input.tokens.alignment[k]) else { continue };
                p_all.push(pred[k]);
                g_all.push(gold);
                if is_vision_dependent(&doc.words[w]) {
                    p_vis.push(pred[k]);
                    g_vis.push(gold);
                }
            }
            all.add(&p_all, &g_all, other);
            vision.add(&p_vis, &g_vis, other);
        }
        Ok(SeqReport {
            overall: Metrics::from_counts(&all, inputs.len()),
            vision_dependent: Metrics::from_counts(&vision, inputs.len()),
        })
    }

    /// Document accuracy.
    pub fn evaluate_cls(&self, inputs: &[DocInput]) -> Result<Metrics> {
        let mut pred = Vec::with_capacity(inputs.len());
        let mut gold = Vec::with_capacity(inputs.len());
        for input in inputs {
            gold.push(input.doc_class.ok_or_else(|| Error::MissingLabel("document has no class".into()))?);
            let Prediction::Document(p) = self.predict(input)? else {
                return Err(Error::Config("classification evaluation needs finetune.task = cls".into()));
            };
            pred.push(p);
        }
        Ok(Metrics::classification(&pred, &gold))
    }
}

/// Every word must carry a label for sequence evaluation.
pub(crate) fn require_word_labels(doc: &Document) -> Result<()> {
    match doc.words.iter().position(|w| w.label.is_none()) {
        Some(i) => Err(Error::MissingLabel(format!("document `{}`, word {i} (`{}`) has no label", doc.id, doc.words[i].text))),
        None => Ok(()),
    }
}

fn copy_trainable(dst: &mut ParamStore, src: &ParamStore) {
    for entry in dst.entries_mut() {
        if let Some(id) = src.id(&entry.name) {
            entry.trainable = src.entries()[id.index()].trainable;
        }
    }
}
