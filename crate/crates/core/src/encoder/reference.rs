//! Loop-only reference encoder over plain `f64` slices.
//!
//! Shares no code with the tape implementation beyond reading parameter
//! values from the store; used as a test oracle.

use crate::config::ModelConfig;
use crate::encoder::{BranchParams, LayerParams};
use crate::params::{ParamId, ParamStore};

fn mat(store: &ParamStore, id: ParamId) -> &[f64] {
    store.get(id).data()
}

/// `x [rows, k] @ w [k, cols]`.
pub fn matmul(x: &[f64], w: &[f64], rows: usize, k: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for p in 0..k {
                acc += x[r * k + p] * w[p * cols + c];
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

fn clamp_offset(i: usize, j: usize, span: usize) -> usize {
    let off = j as i64 - i as i64;
    let s = span as i64;
    (if off < -s { -s } else if off > s { s } else { off } + s) as usize
}

/// Scores `[H, N, N]`: for head `h`, query `i`, key `j`,
/// `q_i.k_j / sqrt(dh) + q_i.a_ij + k_j.a_ij + (s W_sQ)_i.(s W_sK)_j / sqrt(dh)`.
pub fn branch_scores(store: &ParamStore, cfg: &ModelConfig, bp: &BranchParams, x: &[f64], spatial: &[f64]) -> Vec<f64> {
    let (n, d, heads, dh) = (cfg.seq_len, cfg.d, cfg.heads, cfg.d_head());
    let q = matmul(x, mat(store, bp.wq), n, d, d);
    let k = matmul(x, mat(store, bp.wk), n, d, d);
    let sq = matmul(spatial, mat(store, bp.spatial_q), n, d, d);
    let sk = matmul(spatial, mat(store, bp.spatial_k), n, d, d);
    let rel = mat(store, bp.rel);
    let root = (dh as f64).sqrt();
    let mut out = vec![0.0; heads * n * n];
    for h in 0..heads {
        for i in 0..n {
            for j in 0..n {
                let a = clamp_offset(i, j, cfg.span);
                let (mut key_query, mut query_rel, mut key_rel, mut spatial_term) = (0.0, 0.0, 0.0, 0.0);
                for c in 0..dh {
                    let col = h * dh + c;
                    key_query += q[i * d + col] * k[j * d + col];
                    query_rel += q[i * d + col] * rel[a * dh + c];
                    key_rel += k[j * d + col] * rel[a * dh + c];
                    spatial_term += sq[i * d + col] * sk[j * d + col];
                }
                out[(h * n + i) * n + j] = key_query / root + query_rel + key_rel + spatial_term / root;
            }
        }
    }
    out
}

/// Row softmax over `[rows, n]` with an optional per-column keep mask.
pub fn softmax(scores: &[f64], n: usize, keep: Option<&[bool]>) -> Vec<f64> {
    let mut out = vec![0.0; scores.len()];
    for (r, row) in scores.chunks(n).enumerate() {
        let live = |c: usize| keep.map_or(true, |m| m[c]);
        let mut max = f64::NEG_INFINITY;
        for (c, &v) in row.iter().enumerate() {
            if live(c) && v > max {
                max = v;
            }
        }
        let mut z = 0.0;
        for (c, &v) in row.iter().enumerate() {
            if live(c) {
                z += (v - max).exp();
            }
        }
        for (c, &v) in row.iter().enumerate() {
            if live(c) {
                out[r * n + c] = (v - max).exp() / z;
            }
        }
    }
    out
}

/// Context `[N, d]` of one branch: per head, probabilities times values.
pub fn branch_context(
    store: &ParamStore,
    cfg: &ModelConfig,
    bp: &BranchParams,
    x: &[f64],
    spatial: &[f64],
    keep: Option<&[bool]>,
) -> (Vec<f64>, Vec<f64>) {
    let (n, d, heads, dh) = (cfg.seq_len, cfg.d, cfg.heads, cfg.d_head());
    let probs = softmax(&branch_scores(store, cfg, bp, x, spatial), n, keep);
    let v = matmul(x, mat(store, bp.wv), n, d, d);
    let mut ctx = vec![0.0; n * d];
    for h in 0..heads {
        for i in 0..n {
            for c in 0..dh {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += probs[(h * n + i) * n + j] * v[j * d + h * dh + c];
                }
                ctx[i * d + h * dh + c] = acc;
            }
        }
    }
    (ctx, probs)
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (r, row) in x.chunks(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for c in 0..d {
            out[r * d + c] = (row[c] - mean) * inv * g[c] + b[c];
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    let inner = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    let d = b.len();
    for (i, v) in x.iter_mut().enumerate() {
        *v += b[i % d];
    }
}

/// Fixed per-forward inputs, each `[N, d]` row-major.
pub struct Inputs<'a> {
    pub visual: &'a [f64],
    pub visual_spatial: &'a [f64],
    pub text_spatial: &'a [f64],
    pub mask: &'a [bool],
}

/// One encoder layer. `visual` set to false drops the visual branch.
pub fn layer_forward(
    store: &ParamStore,
    cfg: &ModelConfig,
    layer: &LayerParams,
    hidden: &[f64],
    inputs: &Inputs<'_>,
    visual: bool,
) -> Vec<f64> {
    let (n, d) = (cfg.seq_len, cfg.d);
    let (mut ctx, _) = branch_context(store, cfg, &layer.text, hidden, inputs.text_spatial, Some(inputs.mask));
    if visual {
        let (vctx, _) = branch_context(store, cfg, &layer.visual, inputs.visual, inputs.visual_spatial, None);
        for (a, b) in ctx.iter_mut().zip(vctx) {
            *a += b;
        }
    }
    let mut attn = matmul(&ctx, mat(store, layer.out_w), n, d, d);
    add_bias(&mut attn, mat(store, layer.out_b));
    let res: Vec<f64> = hidden.iter().zip(&attn).map(|(a, b)| a + b).collect();
    let h1 = layer_norm(&res, mat(store, layer.ln1_g), mat(store, layer.ln1_b), d);
    let mut f = matmul(&h1, mat(store, layer.ffn1_w), n, d, 4 * d);
    add_bias(&mut f, mat(store, layer.ffn1_b));
    let f: Vec<f64> = f.into_iter().map(gelu).collect();
    let mut f2 = matmul(&f, mat(store, layer.ffn2_w), n, 4 * d, d);
    add_bias(&mut f2, mat(store, layer.ffn2_b));
    let res2: Vec<f64> = h1.iter().zip(&f2).map(|(a, b)| a + b).collect();
    layer_norm(&res2, mat(store, layer.ln2_g), mat(store, layer.ln2_b), d)
}

/// Whole stack from the text embedding.
pub fn encoder_forward(
    store: &ParamStore,
    cfg: &ModelConfig,
    layers: &[LayerParams],
    text: &[f64],
    inputs: &Inputs<'_>,
) -> Vec<f64> {
    let mut hidden: Vec<f64> = if cfg.inject_spatial_into_hidden {
        text.iter().zip(inputs.text_spatial).map(|(a, b)| a + b).collect()
    } else {
        text.to_vec()
    };
    for layer in layers {
        hidden = layer_forward(store, cfg, layer, &hidden, inputs, true);
    }
    hidden
}
