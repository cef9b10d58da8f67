//! Pre-training objectives: multi-modal masked language modeling, image
//! reconstruction from the encoder output, and text/image match detection.

use crate::config::{LossWeights, ModelConfig};
use crate::encoder::Branches;
use crate::error::{Error, Result};
use crate::features::{DocInput, CLS, MASK, PAD, RESERVED};
use crate::model::Model;
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Rng, Tape, Tensor, Var};

/// Target sentinel at positions that were not selected for masking.
pub const IGNORE: i64 = -1;
/// Channels of the reconstruction decoder's intermediate maps.
pub const DECODER_CHANNELS: usize = 8;

/// Select each real token with probability `p`; of those, 80% become
/// `[MASK]`, 10% a random non-reserved token and 10% stay unchanged.
/// `[CLS]` and `[PAD]` are never selected.
pub fn apply_mlm_corruption(
    ids: &[usize],
    mask: &[bool],
    vocab_size: usize,
    p: f64,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<i64>) {
    let mut corrupted = ids.to_vec();
    let mut targets = vec![IGNORE; ids.len()];
    for (k, &id) in ids.iter().enumerate() {
        if !mask[k] || id == CLS || id == PAD || !rng.bernoulli(p) {
            continue;
        }
        targets[k] = id as i64;
        let r = rng.uniform();
        if r < 0.8 {
            corrupted[k] = MASK;
        } else if r < 0.9 && vocab_size > RESERVED.len() {
            corrupted[k] = RESERVED.len() + rng.below(vocab_size - RESERVED.len());
        }
    }
    (corrupted, targets)
}

/// Image source of one batch item after pairing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pairing {
    pub image_from: usize,
    pub matched: bool,
}

/// Independently mismatch each item with probability `p` by taking another
/// item's image. A batch of one always stays matched.
pub fn sample_tdi_pairing(n: usize, p: f64, rng: &mut Rng) -> Vec<Pairing> {
    (0..n)
        .map(|i| {
            if n >= 2 && rng.bernoulli(p) {
                let j = rng.below(n - 1);
                Pairing { image_from: if j >= i { j + 1 } else { j }, matched: false }
            } else {
                Pairing { image_from: i, matched: true }
            }
        })
        .collect()
}

/// One corrupted, possibly mismatched pre-training example.
#[derive(Clone, Debug)]
pub struct PretrainItem {
    pub input: DocInput,
    pub mlm_targets: Vec<i64>,
    pub matched: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingConfig {
    pub mlm_prob: f64,
    pub mismatch_prob: f64,
    pub vocab_size: usize,
}

/// Corrupt token ids and pair images for a batch. Images are copied
/// untouched; only token ids change.
pub fn build_batch(docs: &[&DocInput], s: &SamplingConfig, rng: &mut Rng) -> Vec<PretrainItem> {
    let pairing = sample_tdi_pairing(docs.len(), s.mismatch_prob, rng);
    docs.iter()
        .zip(&pairing)
        .map(|(doc, pair)| {
            let (ids, mlm_targets) = apply_mlm_corruption(&doc.tokens.ids, &doc.tokens.mask, s.vocab_size, s.mlm_prob, rng);
            let mut input = (*doc).clone();
            input.tokens.ids = ids;
            if !pair.matched {
                input.image = docs[pair.image_from].image.clone();
            }
            PretrainItem { input, mlm_targets, matched: pair.matched }
        })
        .collect()
}

/// Token-grid arrangement for the reconstruction decoder: token `t` owns the
/// patch at grid cell `(t / grid_w, t % grid_w)` of a map at quarter
/// resolution, which two stride-2 transposed convolutions bring to full size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderLayout {
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch_h: usize,
    pub patch_w: usize,
}

impl DecoderLayout {
    pub fn for_config(cfg: &ModelConfig) -> Result<Self> {
        let (h4, w4) = (cfg.image_height / 4, cfg.image_width / 4);
        let n = cfg.seq_len;
        let target = h4 as f64 / w4 as f64;
        (1..=n)
            .filter(|gh| n % gh == 0 && h4 % gh == 0 && w4 % (n / gh) == 0)
            .map(|gh| DecoderLayout { grid_h: gh, grid_w: n / gh, patch_h: h4 / gh, patch_w: w4 / (n / gh) })
            .min_by(|a, b| {
                let da = (a.grid_h as f64 / a.grid_w as f64 - target).abs();
                let db = (b.grid_h as f64 / b.grid_w as f64 - target).abs();
                da.total_cmp(&db)
            })
            .ok_or_else(|| {
                Error::Config(format!(
                    "cannot tile a {h4}x{w4} quarter-resolution map with {n} token patches; choose model.seq_len dividing it"
                ))
            })
    }
}

#[derive(Clone, Debug)]
pub struct PretrainHeads {
    pub mlm_w: ParamId,
    pub mlm_b: ParamId,
    pub ltr_w: ParamId,
    pub ltr_b: ParamId,
    pub ltr_up1_w: ParamId,
    pub ltr_up1_b: ParamId,
    pub ltr_up2_w: ParamId,
    pub ltr_up2_b: ParamId,
    pub tdi_w: ParamId,
    pub tdi_b: ParamId,
    pub layout: DecoderLayout,
}

pub const HEAD_PREFIX: &str = "pretrain.";

impl PretrainHeads {
    pub fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let layout = DecoderLayout::for_config(cfg)?;
        let d = cfg.d;
        let c = DECODER_CHANNELS;
        let patch = c * layout.patch_h * layout.patch_w;
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        Ok(PretrainHeads {
            mlm_w: store.randn("pretrain.mlm.w", &[d, cfg.vocab_size], inv(d), rng),
            mlm_b: store.zeros("pretrain.mlm.b", &[cfg.vocab_size]),
            ltr_w: store.randn("pretrain.ltr.w", &[d, patch], inv(d), rng),
            ltr_b: store.zeros("pretrain.ltr.b", &[patch]),
            ltr_up1_w: store.randn("pretrain.ltr.up1.w", &[c, c, 4, 4], inv(c * 4), rng),
            ltr_up1_b: store.zeros("pretrain.ltr.up1.b", &[c]),
            ltr_up2_w: store.randn("pretrain.ltr.up2.w", &[c, cfg.in_channels, 4, 4], inv(c * 4), rng),
            ltr_up2_b: store.zeros("pretrain.ltr.up2.b", &[cfg.in_channels]),
            tdi_w: store.randn("pretrain.tdi.w", &[d, 1], inv(d), rng),
            tdi_b: store.zeros("pretrain.tdi.b", &[1]),
            layout,
        })
    }

    /// Decoder parameters, for isolation checks.
    pub fn decoder_params(&self) -> [ParamId; 6] {
        [self.ltr_w, self.ltr_b, self.ltr_up1_w, self.ltr_up1_b, self.ltr_up2_w, self.ltr_up2_b]
    }

    /// Reconstructed image `[C, H, W]` from the final hidden states.
    pub fn reconstruct(&self, tape: &mut Tape, b: &Binding, hidden: Var) -> Result<Var> {
        let l = self.layout;
        let c = DECODER_CHANNELS;
        let patches = tape.linear(hidden, b.var(self.ltr_w), Some(b.var(self.ltr_b)))?;
        let grid = tape.reshape(patches, &[l.grid_h, l.grid_w, c, l.patch_h, l.patch_w])?;
        let g = tape.transpose(grid, 0, 2)?; // [c, gw, gh, ph, pw]
        let g = tape.transpose(g, 1, 2)?; // [c, gh, gw, ph, pw]
        let g = tape.transpose(g, 2, 3)?; // [c, gh, ph, gw, pw]
        let map = tape.reshape(g, &[c, l.grid_h * l.patch_h, l.grid_w * l.patch_w])?;
        let up = tape.conv_transpose2d(map, b.var(self.ltr_up1_w), b.var(self.ltr_up1_b), 2, 1)?;
        let up = tape.relu(up)?;
        tape.conv_transpose2d(up, b.var(self.ltr_up2_w), b.var(self.ltr_up2_b), 2, 1)
    }

    /// Match logit from the `[CLS]` row.
    pub fn tdi_logit(&self, tape: &mut Tape, b: &Binding, hidden: Var) -> Result<Var> {
        let cls = tape.slice(hidden, 0, 0, 1)?;
        tape.linear(cls, b.var(self.tdi_w), Some(b.var(self.tdi_b)))
    }
}

/// Mean cross-entropy over positions whose target is not [`IGNORE`]; exactly
/// zero, with no gradient path, when there are none.
pub fn mm_mlm_loss(tape: &mut Tape, b: &Binding, heads: &PretrainHeads, hidden: Var, targets: &[i64]) -> Result<Var> {
    let (positions, classes): (Vec<usize>, Vec<usize>) = targets
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != IGNORE)
        .map(|(k, &t)| (k, t as usize))
        .unzip();
    if positions.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let rows = tape.embedding_lookup(hidden, &positions)?;
    let logits = tape.linear(rows, b.var(heads.mlm_w), Some(b.var(heads.mlm_b)))?;
    tape.cross_entropy_from_logits(logits, &classes)
}

/// Mean smooth-L1 between the reconstruction and `image`; exactly zero, with
/// the decoder left off the tape, for mismatched pairs.
pub fn ltr_loss(tape: &mut Tape, b: &Binding, heads: &PretrainHeads, hidden: Var, image: &Tensor, matched: bool) -> Result<Var> {
    if !matched {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let recon = heads.reconstruct(tape, b, hidden)?;
    if tape.shape(recon) != image.shape() {
        return Err(Error::shape("ltr_loss", tape.shape(recon), image.shape()));
    }
    tape.smooth_l1(recon, image)
}

pub fn tdi_loss(tape: &mut Tape, b: &Binding, heads: &PretrainHeads, hidden: Var, matched: bool) -> Result<Var> {
    let logit = heads.tdi_logit(tape, b, hidden)?;
    tape.binary_cross_entropy_from_logit(logit, if matched { 1.0 } else { 0.0 })
}

/// `mlm_weight * mlm + ltr_weight * ltr + tdi_weight * tdi`.
pub fn weighted_total(w: &LossWeights, mlm: f64, ltr: f64, tdi: f64) -> f64 {
    w.mlm * mlm + w.ltr * ltr + w.tdi * tdi
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub mlm: Var,
    pub ltr: Var,
    pub tdi: Var,
}

pub fn combine_losses(tape: &mut Tape, w: &LossWeights, mlm: Var, ltr: Var, tdi: Var) -> Result<LossParts> {
    let a = tape.scale(mlm, w.mlm)?;
    let l = tape.scale(ltr, w.ltr)?;
    let t = tape.scale(tdi, w.tdi)?;
    let s = tape.add(a, l)?;
    let total = tape.add(s, t)?;
    Ok(LossParts { total, mlm, ltr, tdi })
}

/// Full joint loss of one item through the backbone and the three heads.
pub fn pretrain_loss(
    tape: &mut Tape,
    b: &Binding,
    model: &Model,
    heads: &PretrainHeads,
    item: &PretrainItem,
    weights: &LossWeights,
    dropout: Option<&mut Rng>,
) -> Result<LossParts> {
    let enc = model.encode(tape, b, &item.input, Branches::Both, dropout)?;
    let hidden = enc.output.hidden;
    let mlm = mm_mlm_loss(tape, b, heads, hidden, &item.mlm_targets)?;
    let ltr = ltr_loss(tape, b, heads, hidden, &item.input.image, item.matched)?;
    let tdi = tdi_loss(tape, b, heads, hidden, item.matched)?;
    combine_losses(tape, weights, mlm, ltr, tdi)
}

#[cfg(test)]
mod tests;
