//! Multi-modal self-attention encoder.
//!
//! Each layer runs two attention branches. The text branch attends over the
//! evolving hidden stream, the visual branch over the visual embedding that
//! is fed unchanged to every layer. Both add a query-relative and a
//! key-relative 1-D position term and a spatial term whose query/key
//! projections are one shared pair per layer. The two context outputs are
//! summed, projected, and passed through a post-norm feed-forward block.

pub mod reference;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::FeatureBundle;
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{RelSide, Rng, Tape, Var};

pub const LN_EPS: f64 = 1e-5;

/// Which attention branches a forward pass runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branches {
    Both,
    /// Single-modality stack: the visual branch is skipped entirely.
    TextOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Text,
    Visual,
}

/// Query/key/value projections of one branch, `[d, d]` each.
#[derive(Clone, Debug)]
pub struct BranchParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    /// `[2 * span + 1, d_head]`, shared by the branch's heads.
    pub rel: ParamId,
    pub spatial_q: ParamId,
    pub spatial_k: ParamId,
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub text: BranchParams,
    pub visual: BranchParams,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub ffn1_w: ParamId,
    pub ffn1_b: ParamId,
    pub ffn2_w: ParamId,
    pub ffn2_b: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
}

impl LayerParams {
    pub fn init(store: &mut ParamStore, cfg: &ModelConfig, layer: usize, rng: &mut Rng) -> Self {
        let d = cfg.d;
        let std = 1.0 / (d as f64).sqrt();
        let p = |n: &str| format!("encoder.{layer}.{n}");
        let dense = |store: &mut ParamStore, n: &str, rows: usize, cols: usize, rng: &mut Rng| {
            store.randn(p(n), &[rows, cols], 1.0 / (rows as f64).sqrt(), rng)
        };
        let (shared_q, shared_k) = if cfg.share_spatial_weights {
            (Some(dense(store, "spatial.wq", d, d, rng)), Some(dense(store, "spatial.wk", d, d, rng)))
        } else {
            (None, None)
        };
        let branch = |store: &mut ParamStore, tag: &str, rng: &mut Rng| {
            let wq = dense(store, &format!("{tag}.wq"), d, d, rng);
            let wk = dense(store, &format!("{tag}.wk"), d, d, rng);
            let wv = dense(store, &format!("{tag}.wv"), d, d, rng);
            let rel = store.randn(p(&format!("{tag}.rel")), &[2 * cfg.span + 1, cfg.d_head()], std, rng);
            let spatial_q = shared_q.unwrap_or_else(|| dense(store, &format!("{tag}.spatial.wq"), d, d, rng));
            let spatial_k = shared_k.unwrap_or_else(|| dense(store, &format!("{tag}.spatial.wk"), d, d, rng));
            BranchParams { wq, wk, wv, rel, spatial_q, spatial_k }
        };
        let text = branch(store, "text", rng);
        let visual = branch(store, "visual", rng);
        LayerParams {
            text,
            visual,
            out_w: dense(store, "out.w", d, d, rng),
            out_b: store.zeros(p("out.b"), &[d]),
            ln1_g: store.ones(p("ln1.g"), &[d]),
            ln1_b: store.zeros(p("ln1.b"), &[d]),
            ffn1_w: dense(store, "ffn1.w", d, 4 * d, rng),
            ffn1_b: store.zeros(p("ffn1.b"), &[4 * d]),
            ffn2_w: dense(store, "ffn2.w", 4 * d, d, rng),
            ffn2_b: store.zeros(p("ffn2.b"), &[d]),
            ln2_g: store.ones(p("ln2.g"), &[d]),
            ln2_b: store.zeros(p("ln2.b"), &[d]),
        }
    }

    pub fn branch(&self, branch: Branch) -> &BranchParams {
        match branch {
            Branch::Text => &self.text,
            Branch::Visual => &self.visual,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub layers: Vec<LayerParams>,
    cfg: ModelConfig,
}

/// Per-layer attention probabilities `[heads, N, N]` of both branches.
#[derive(Clone, Copy, Debug)]
pub struct LayerTrace {
    pub text_probs: Var,
    pub visual_probs: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub hidden: Var,
    pub layers: Vec<LayerTrace>,
    /// Flops spent on scores, softmax inputs and context products, excluding
    /// the per-token projections.
    pub attention_flops: u64,
}

/// Reshape `[N, d]` into per-head `[H, N, d_head]`.
pub fn split_heads(tape: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 || shape[1] % heads != 0 {
        return Err(Error::shape("split_heads", &shape, &[heads]));
    }
    let r = tape.reshape(x, &[shape[0], heads, shape[1] / heads])?;
    tape.transpose(r, 0, 1)
}

/// Inverse of [`split_heads`].
pub fn merge_heads(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let t = tape.transpose(x, 0, 1)?;
    tape.reshape(t, &[shape[1], shape[0] * shape[2]])
}

impl EncoderParams {
    pub fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let layers = (0..cfg.layers).map(|l| LayerParams::init(store, cfg, l, rng)).collect();
        EncoderParams { layers, cfg: cfg.clone() }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Pre-softmax scores `[H, N, N]` of one branch: scaled key-query term,
    /// query- and key-relative position terms, and the scaled spatial term.
    pub fn modality_attention_scores(
        &self,
        tape: &mut Tape,
        b: &Binding,
        x: Var,
        spatial: Var,
        layer: &LayerParams,
        branch: Branch,
    ) -> Result<Var> {
        let bp = layer.branch(branch);
        let h = self.cfg.heads;
        let xq = tape.matmul(x, b.var(bp.wq))?;
        let q = split_heads(tape, xq, h)?;
        let xk = tape.matmul(x, b.var(bp.wk))?;
        let k = split_heads(tape, xk, h)?;
        let sq = tape.matmul(spatial, b.var(bp.spatial_q))?;
        let sq = split_heads(tape, sq, h)?;
        let sk = tape.matmul(spatial, b.var(bp.spatial_k))?;
        let sk = split_heads(tape, sk, h)?;
        self.scores_from_heads(tape, b, q, k, sq, sk, bp)
    }

    #[allow(clippy::too_many_arguments)]
    fn scores_from_heads(
        &self,
        tape: &mut Tape,
        b: &Binding,
        q: Var,
        k: Var,
        sq: Var,
        sk: Var,
        bp: &BranchParams,
    ) -> Result<Var> {
        let scale = 1.0 / (self.cfg.d_head() as f64).sqrt();
        let kt = tape.t(k)?;
        let qk = tape.matmul(q, kt)?;
        let qk = tape.scale(qk, scale)?;
        let rel_q = tape.relative_bias(q, b.var(bp.rel), self.cfg.span, RelSide::Query)?;
        let rel_k = tape.relative_bias(k, b.var(bp.rel), self.cfg.span, RelSide::Key)?;
        let skt = tape.t(sk)?;
        let sp = tape.matmul(sq, skt)?;
        let sp = tape.scale(sp, scale)?;
        let s = tape.add(qk, rel_q)?;
        let s = tape.add(s, rel_k)?;
        tape.add(s, sp)
    }

    /// Attention of one branch; returns `(context [N, d], probs [H, N, N], core flops)`.
    #[allow(clippy::too_many_arguments)]
    fn branch_attention(
        &self,
        tape: &mut Tape,
        b: &Binding,
        x: Var,
        spatial: Var,
        layer: &LayerParams,
        branch: Branch,
        key_mask: Option<&[bool]>,
    ) -> Result<(Var, Var, u64)> {
        let bp = layer.branch(branch);
        let h = self.cfg.heads;
        let proj = |tape: &mut Tape, input: Var, w: ParamId| -> Result<Var> {
            let y = tape.matmul(input, b.var(w))?;
            split_heads(tape, y, h)
        };
        let q = proj(tape, x, bp.wq)?;
        let k = proj(tape, x, bp.wk)?;
        let v = proj(tape, x, bp.wv)?;
        let sq = proj(tape, spatial, bp.spatial_q)?;
        let sk = proj(tape, spatial, bp.spatial_k)?;
        let before = tape.flops();
        let scores = self.scores_from_heads(tape, b, q, k, sq, sk, bp)?;
        let probs = tape.softmax_rows(scores, key_mask)?;
        let ctx = tape.matmul(probs, v)?;
        let core = tape.flops() - before;
        Ok((merge_heads(tape, ctx)?, probs, core))
    }

    /// One layer: both branches, summed contexts, output projection,
    /// residual + norm, GELU feed-forward, residual + norm.
    #[allow(clippy::too_many_arguments)]
    pub fn layer_forward(
        &self,
        tape: &mut Tape,
        b: &Binding,
        layer: &LayerParams,
        hidden: Var,
        bundle: &FeatureBundle,
        branches: Branches,
        mut dropout: Option<&mut Rng>,
    ) -> Result<(Var, LayerTrace, u64)> {
        let (text_ctx, text_probs, f_text) =
            self.branch_attention(tape, b, hidden, bundle.text_spatial, layer, Branch::Text, Some(&bundle.mask))?;
        let (ctx, visual_probs, f_vis) = match branches {
            Branches::Both => {
                let (vis_ctx, probs, f) =
                    self.branch_attention(tape, b, bundle.visual, bundle.visual_spatial, layer, Branch::Visual, None)?;
                (tape.add(text_ctx, vis_ctx)?, Some(probs), f)
            }
            Branches::TextOnly => (text_ctx, None, 0),
        };
        let mut attn = tape.linear(ctx, b.var(layer.out_w), Some(b.var(layer.out_b)))?;
        if let Some(rng) = dropout.as_deref_mut() {
            attn = tape.dropout(attn, self.cfg.dropout, rng)?;
        }
        let res = tape.add(hidden, attn)?;
        let h1 = tape.layer_norm(res, b.var(layer.ln1_g), b.var(layer.ln1_b), LN_EPS)?;
        let f = tape.linear(h1, b.var(layer.ffn1_w), Some(b.var(layer.ffn1_b)))?;
        let f = tape.gelu(f)?;
        let mut f = tape.linear(f, b.var(layer.ffn2_w), Some(b.var(layer.ffn2_b)))?;
        if let Some(rng) = dropout.as_deref_mut() {
            f = tape.dropout(f, self.cfg.dropout, rng)?;
        }
        let res2 = tape.add(h1, f)?;
        let out = tape.layer_norm(res2, b.var(layer.ln2_g), b.var(layer.ln2_b), LN_EPS)?;
        Ok((out, LayerTrace { text_probs, visual_probs }, f_text + f_vis))
    }

    /// First hidden state: `T + T_s`, or `T` alone when spatial injection is off.
    pub fn initial_hidden(&self, tape: &mut Tape, bundle: &FeatureBundle) -> Result<Var> {
        if self.cfg.inject_spatial_into_hidden {
            tape.add(bundle.text, bundle.text_spatial)
        } else {
            Ok(bundle.text)
        }
    }

    /// Run every layer. `dropout` enables training-mode dropout.
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Binding,
        bundle: &FeatureBundle,
        dropout: Option<&mut Rng>,
    ) -> Result<EncoderOutput> {
        self.forward_with(tape, b, bundle, Branches::Both, dropout)
    }

    pub fn forward_with(
        &self,
        tape: &mut Tape,
        b: &Binding,
        bundle: &FeatureBundle,
        branches: Branches,
        mut dropout: Option<&mut Rng>,
    ) -> Result<EncoderOutput> {
        let n = self.cfg.seq_len;
        for v in [bundle.visual, bundle.text, bundle.visual_spatial, bundle.text_spatial] {
            if tape.shape(v) != [n, self.cfg.d] {
                return Err(Error::shape("encoder input", tape.shape(v), &[n, self.cfg.d]));
            }
        }
        if bundle.mask.len() != n {
            return Err(Error::shape("encoder mask", &[bundle.mask.len()], &[n]));
        }
        let mut hidden = self.initial_hidden(tape, bundle)?;
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut attention_flops = 0;
        let rate = self.cfg.dropout;
        for layer in &self.layers {
            let drop = if rate > 0.0 { dropout.as_deref_mut() } else { None };
            let (h, trace, f) = self.layer_forward(tape, b, layer, hidden, bundle, branches, drop)?;
            hidden = h;
            traces.push(trace);
            attention_flops += f;
        }
        Ok(EncoderOutput { hidden, layers: traces, attention_flops })
    }
}

#[cfg(test)]
mod tests;
