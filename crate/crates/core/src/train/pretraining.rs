//! The pre-training loop.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::DocInput;
use crate::model::Model;
use crate::params::Grads;
use crate::pretrain::{build_batch, pretrain_loss, PretrainHeads, SamplingConfig};
use crate::tensor::{Rng, Tape};
use crate::train::checkpoint::Checkpoint;
use crate::train::optim::{lr_schedule, AdamState};
use crate::train::{apply_update, batch_for_step, steps_per_epoch};

/// Per-step log file written next to the checkpoints.
pub const PRETRAIN_LOG: &str = "pretrain_log.jsonl";
const ORDER_STREAM: u64 = 0x7072_6574_0000_0000;
const SAMPLE_STREAM: u64 = 0x7072_6574_7361_6d70;

/// One optimizer step. Lines of the on-disk log also carry `seconds`, the
/// wall-clock time since the run started.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainStepLog {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub total: f64,
    pub mlm: f64,
    pub ltr: f64,
    pub tdi: f64,
    pub grad_norm: f64,
}

/// Backbone, pre-training heads and optimizer state of one run.
#[derive(Clone, Debug)]
pub struct Pretrainer {
    pub cfg: RunConfig,
    pub model: Model,
    pub heads: PretrainHeads,
    pub optim: AdamState,
    /// Drives masking, image pairing and dropout.
    pub rng: Rng,
    /// Completed optimizer steps.
    pub step: u64,
}

impl Pretrainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = Rng::new(cfg.seed);
        let mut model = Model::new(&cfg.model, &mut init)?;
        let heads = PretrainHeads::init(&mut model.store, &cfg.model, &mut init)?;
        let optim = AdamState::new(&model.store);
        Ok(Pretrainer { cfg: cfg.clone(), model, heads, optim, rng: Rng::new(cfg.seed).derive(SAMPLE_STREAM), step: 0 })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.phase != "pretrain" {
            return Err(Error::Incompatible(format!("expected a pre-training checkpoint, found phase `{}`", ck.phase)));
        }
        let mut p = Self::new(&ck.config)?;
        p.model.store.load_from(&ck.store)?;
        if let Some(o) = &ck.optim {
            p.optim = o.clone();
        }
        p.rng = Rng::from_state(&ck.rng).ok_or_else(|| Error::Validation("unreadable RNG state in checkpoint".into()))?;
        p.step = ck.step;
        Ok(p)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            phase: "pretrain".into(),
            step: self.step,
            rng: self.rng.state(),
            store: self.model.store.clone(),
            optim: Some(self.optim.clone()),
        }
    }

    pub fn total_steps(&self, n_docs: usize) -> u64 {
        self.cfg.pretrain_epochs as u64 * steps_per_epoch(n_docs, self.cfg.batch_size)
    }

    /// One optimizer step on the next batch. On a non-finite loss nothing is
    /// modified and a divergence error is returned.
    pub fn train_step(&mut self, data: &[DocInput]) -> Result<PretrainStepLog> {
        if data.is_empty() {
            return Err(Error::Validation("pre-training corpus is empty".into()));
        }
        let cfg = &self.cfg;
        let (epoch, idx) = batch_for_step(cfg.seed, ORDER_STREAM, self.step, data.len(), cfg.batch_size);
        let docs: Vec<&DocInput> = idx.iter().map(|&i| &data[i]).collect();
        let sampling = SamplingConfig {
            mlm_prob: cfg.mlm_prob,
            mismatch_prob: cfg.tdi_mismatch_prob,
            vocab_size: cfg.model.vocab_size,
        };
        let mut rng = self.rng.clone();
        let items = build_batch(&docs, &sampling, &mut rng);

        let mut grads = Grads::zeros_like(&self.model.store);
        let mut sums = [0.0; 4];
        for item in &items {
            let mut tape = Tape::new();
            let b = self.model.store.bind(&mut tape);
            let parts = pretrain_loss(&mut tape, &b, &self.model, &self.heads, item, &cfg.loss, Some(&mut rng))?;
            let values = [parts.total, parts.mlm, parts.ltr, parts.tdi].map(|v| tape.value(v).item());
            if !values[0].is_finite() {
                return Err(Error::Divergence {
                    step: self.step + 1,
                    message: format!("total loss {} (mlm {}, ltr {}, tdi {})", values[0], values[1], values[2], values[3]),
                });
            }
            tape.backward(parts.total)?;
            grads.accumulate(&b.grads(&tape)?);
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
        }
        let scale = 1.0 / items.len() as f64;
        grads.scale(scale);
        let lr = lr_schedule(self.step + 1, self.total_steps(data.len()), &cfg.pretrain_optim);
        let w = cfg.loss;
        let grad_norm = if w.mlm == 0.0 && w.ltr == 0.0 && w.tdi == 0.0 {
            0.0
        } else {
            apply_update(&mut self.model.store, &mut self.optim, grads, &self.cfg.pretrain_optim, lr)?
        };
        self.rng = rng;
        self.step += 1;
        let [total, mlm, ltr, tdi] = sums.map(|s| s * scale);
        Ok(PretrainStepLog { step: self.step, epoch, lr, total, mlm, ltr, tdi, grad_norm })
    }

    /// Train until `end_step` completed steps, calling `on_step` after each.
    pub fn run_until(
        &mut self,
        data: &[DocInput],
        end_step: u64,
        mut on_step: impl FnMut(&Self, &PretrainStepLog) -> Result<()>,
    ) -> Result<Vec<PretrainStepLog>> {
        let mut logs = Vec::new();
        while self.step < end_step {
            let log = self.train_step(data)?;
            on_step(self, &log)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Result of a full pre-training run.
#[derive(Debug)]
pub struct PretrainRun {
    pub trainer: Pretrainer,
    pub logs: Vec<PretrainStepLog>,
    /// One checkpoint directory per completed epoch.
    pub checkpoints: Vec<PathBuf>,
}

/// Pre-train for `cfg.pretrain_epochs` epochs. With `out_dir`, every step is
/// appended to the JSON-lines log and a checkpoint is written after each
/// epoch; on divergence the last good state is saved under `last-good`.
pub fn run_pretrain(cfg: &RunConfig, data: &[DocInput], out_dir: Option<&Path>) -> Result<PretrainRun> {
    let mut trainer = Pretrainer::new(cfg)?;
    let spe = steps_per_epoch(data.len(), cfg.batch_size);
    let total = trainer.total_steps(data.len());
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(PRETRAIN_LOG);
            Some((File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };
    let mut checkpoints = Vec::new();
    let started = Instant::now();
    let result = trainer.run_until(data, total, |t, log| {
        if let Some((file, path)) = log_file.as_mut() {
            let mut line = serde_json::to_value(log).expect("log serializes");
            line["seconds"] = started.elapsed().as_secs_f64().into();
            writeln!(file, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        if let Some(dir) = out_dir {
            if t.step % spe == 0 {
                let ck_dir = dir.join(format!("epoch-{}", t.step / spe));
                t.checkpoint().save(&ck_dir)?;
                checkpoints.push(ck_dir);
            }
        }
        Ok(())
    });
    match result {
        Ok(logs) => Ok(PretrainRun { trainer, logs, checkpoints }),
        Err(e @ (Error::Divergence { .. } | Error::NonFiniteGradient(_))) => {
            if let Some(dir) = out_dir {
                trainer.checkpoint().save(&dir.join("last-good"))?;
            }
            Err(e)
        }
        Err(e) => Err(e),
    }
}
