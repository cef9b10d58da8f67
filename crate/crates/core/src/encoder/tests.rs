use super::reference::{self, Inputs};
use super::*;
use crate::features::FeatureBundle;
use crate::tensor::gradcheck::{check_gradients, probe};
use crate::tensor::{rel_offset, Tensor};

fn cfg(n: usize, d: usize, heads: usize, layers: usize) -> ModelConfig {
    ModelConfig { d, seq_len: n, heads, layers, span: 2, ..ModelConfig::default() }
}

struct Fixture {
    cfg: ModelConfig,
    store: ParamStore,
    enc: EncoderParams,
    text: Tensor,
    visual: Tensor,
    vs: Tensor,
    ts: Tensor,
    mask: Vec<bool>,
}

impl Fixture {
    fn new(cfg: ModelConfig, seed: u64, pads: usize) -> Self {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let enc = EncoderParams::init(&mut store, &cfg, &mut rng);
        let shape = [cfg.seq_len, cfg.d];
        let mask = (0..cfg.seq_len).map(|i| i < cfg.seq_len - pads).collect();
        Fixture {
            text: Tensor::randn(&shape, 1.0, &mut rng),
            visual: Tensor::randn(&shape, 1.0, &mut rng),
            vs: Tensor::randn(&shape, 1.0, &mut rng),
            ts: Tensor::randn(&shape, 1.0, &mut rng),
            cfg,
            store,
            enc,
            mask,
        }
    }

    fn bundle(&self, tape: &mut Tape) -> FeatureBundle {
        FeatureBundle {
            visual: tape.constant(self.visual.clone()),
            text: tape.constant(self.text.clone()),
            visual_spatial: tape.constant(self.vs.clone()),
            text_spatial: tape.constant(self.ts.clone()),
            mask: self.mask.clone(),
        }
    }

    fn inputs(&self) -> Inputs<'_> {
        Inputs { visual: self.visual.data(), visual_spatial: self.vs.data(), text_spatial: self.ts.data(), mask: &self.mask }
    }

    fn zero(&mut self, id: ParamId) {
        self.store.get_mut(id).data_mut().fill(0.0);
    }
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "element {k}: {x} vs {y}");
    }
}

#[test]
fn relative_bias_zero_table_and_clamping() {
    let mut rng = Rng::new(1);
    let mut tape = Tape::new();
    let vecs = tape.constant(Tensor::randn(&[1, 101, 3], 1.0, &mut rng));
    let zero = tape.constant(Tensor::zeros(&[17, 3]));
    let z = tape.relative_bias(vecs, zero, 8, RelSide::Query).unwrap();
    assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    let table = tape.constant(Tensor::randn(&[17, 3], 1.0, &mut rng));
    let bq = tape.relative_bias(vecs, table, 8, RelSide::Query).unwrap();
    assert_eq!(rel_offset(0, 100, 8), rel_offset(0, 9, 8));
    let bq = tape.value(bq).clone().reshaped(&[101, 101]).unwrap();
    assert_eq!(bq.at2(0, 100), bq.at2(0, 9));
}

#[test]
fn relative_bias_matches_double_loop() {
    let (h, n, dh, span) = (2, 7, 3, 2);
    let mut rng = Rng::new(2);
    let v = Tensor::randn(&[h, n, dh], 1.0, &mut rng);
    let table = Tensor::randn(&[2 * span + 1, dh], 1.0, &mut rng);
    for side in [RelSide::Query, RelSide::Key] {
        let mut tape = Tape::new();
        let (vv, tv) = (tape.constant(v.clone()), tape.constant(table.clone()));
        let out = tape.relative_bias(vv, tv, span, side).unwrap();
        for hh in 0..h {
            for i in 0..n {
                for j in 0..n {
                    let off = (j as i64 - i as i64).clamp(-(span as i64), span as i64) + span as i64;
                    let src = if side == RelSide::Query { i } else { j };
                    let want: f64 = (0..dh)
                        .map(|c| v.data()[(hh * n + src) * dh + c] * table.data()[off as usize * dh + c])
                        .sum();
                    let got = tape.value(out).data()[(hh * n + i) * n + j];
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }
}

/// Swapping two keys that are both beyond the span on the same side of a
/// query swaps their key-relative terms and leaves the rest untouched.
#[test]
fn clipping_law_for_far_keys() {
    let (n, dh, span) = (20, 4, 8);
    let mut rng = Rng::new(3);
    let v = Tensor::randn(&[1, n, dh], 1.0, &mut rng);
    let table = Tensor::randn(&[2 * span + 1, dh], 1.0, &mut rng);
    let mut swapped = v.clone();
    let (a, b) = (12, 17);
    for c in 0..dh {
        swapped.data_mut().swap(a * dh + c, b * dh + c);
    }
    let bias = |vecs: &Tensor, side| {
        let mut tape = Tape::new();
        let (vv, tv) = (tape.constant(vecs.clone()), tape.constant(table.clone()));
        let out = tape.relative_bias(vv, tv, span, side).unwrap();
        tape.value(out).clone().reshaped(&[n, n]).unwrap()
    };
    let (k0, k1) = (bias(&v, RelSide::Key), bias(&swapped, RelSide::Key));
    for i in 0..=2 {
        assert_eq!(k0.at2(i, a), k1.at2(i, b));
        assert_eq!(k0.at2(i, b), k1.at2(i, a));
        for j in 0..=i + span {
            assert_eq!(k0.at2(i, j), k1.at2(i, j));
        }
    }
    let q0 = bias(&v, RelSide::Query);
    for i in 0..3 {
        assert_eq!(q0.at2(i, a), q0.at2(i, b), "query-relative term is constant beyond the span");
    }
}

#[test]
fn zero_weights_give_zero_scores_and_uniform_attention() {
    let mut fx = Fixture::new(cfg(5, 4, 2, 1), 4, 2);
    let ids: Vec<ParamId> = fx.store.ids().collect();
    for id in ids {
        fx.zero(id);
    }
    let mut tape = Tape::new();
    let b = fx.store.bind(&mut tape);
    let bundle = fx.bundle(&mut tape);
    let layer = &fx.enc.layers[0];
    let s = fx.enc.modality_attention_scores(&mut tape, &b, bundle.text, bundle.text_spatial, layer, Branch::Text).unwrap();
    assert!(tape.value(s).data().iter().all(|&v| v == 0.0));
    let p = tape.softmax_rows(s, Some(&fx.mask)).unwrap();
    for row in tape.value(p).data().chunks(5) {
        assert_close(row, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0], 1e-15);
    }
}

#[test]
fn without_relative_and_spatial_terms_scores_are_scaled_dot_product() {
    let mut fx = Fixture::new(cfg(4, 4, 1, 1), 5, 0);
    let layer = fx.enc.layers[0].clone();
    fx.zero(layer.text.rel);
    fx.zero(layer.text.spatial_q);
    let mut tape = Tape::new();
    let b = fx.store.bind(&mut tape);
    let bundle = fx.bundle(&mut tape);
    let s = fx.enc.modality_attention_scores(&mut tape, &b, bundle.text, bundle.text_spatial, &layer, Branch::Text).unwrap();
    let q = reference::matmul(fx.text.data(), fx.store.get(layer.text.wq).data(), 4, 4, 4);
    let k = reference::matmul(fx.text.data(), fx.store.get(layer.text.wk).data(), 4, 4, 4);
    for i in 0..4 {
        for j in 0..4 {
            let dot: f64 = (0..4).map(|c| q[i * 4 + c] * k[j * 4 + c]).sum();
            assert!((tape.value(s).data()[i * 4 + j] - dot / 2.0).abs() < 1e-12);
        }
    }
}

#[test]
fn scores_match_term_by_term_reference() {
    for seed in 0..10 {
        let fx = Fixture::new(cfg(4, 4, 1, 1), 10 + seed, 1);
        let mut tape = Tape::new();
        let b = fx.store.bind(&mut tape);
        let bundle = fx.bundle(&mut tape);
        let layer = &fx.enc.layers[0];
        for (branch, x, sp, xs, sps) in [
            (Branch::Text, bundle.text, bundle.text_spatial, &fx.text, &fx.ts),
            (Branch::Visual, bundle.visual, bundle.visual_spatial, &fx.visual, &fx.vs),
        ] {
            let s = fx.enc.modality_attention_scores(&mut tape, &b, x, sp, layer, branch).unwrap();
            let want = reference::branch_scores(&fx.store, &fx.cfg, layer.branch(branch), xs.data(), sps.data());
            assert_close(tape.value(s).data(), &want, 1e-10);
        }
    }
}

#[test]
fn shared_spatial_term_is_equal_across_branches() {
    let mut fx = Fixture::new(cfg(5, 4, 2, 1), 6, 0);
    let layer = fx.enc.layers[0].clone();
    assert_eq!(layer.text.spatial_q, layer.visual.spatial_q);
    assert_eq!(layer.text.spatial_k, layer.visual.spatial_k);
    for id in [layer.text.wq, layer.text.wk, layer.visual.wq, layer.visual.wk] {
        fx.zero(id);
    }
    fx.vs = fx.ts.clone();
    let mut tape = Tape::new();
    let b = fx.store.bind(&mut tape);
    let bundle = fx.bundle(&mut tape);
    let st = fx.enc.modality_attention_scores(&mut tape, &b, bundle.text, bundle.text_spatial, &layer, Branch::Text).unwrap();
    let sv = fx.enc.modality_attention_scores(&mut tape, &b, bundle.visual, bundle.visual_spatial, &layer, Branch::Visual).unwrap();
    assert!(tape.value(st).data().iter().any(|&v| v != 0.0));
    assert_eq!(tape.value(st), tape.value(sv));
}

#[test]
fn unsharing_adds_two_d_squared_per_layer() {
    for (d, layers) in [(8, 1), (8, 3), (16, 2)] {
        let shared = cfg(6, d, 2, layers);
        let unshared = ModelConfig { share_spatial_weights: false, ..shared.clone() };
        let count = |c: &ModelConfig| {
            let mut s = ParamStore::new();
            EncoderParams::init(&mut s, c, &mut Rng::new(0));
            s.num_scalars()
        };
        assert_eq!(count(&unshared) - count(&shared), 2 * d * d * layers);
    }
}

#[test]
fn layer_matches_naive_reference() {
    for seed in 0..10 {
        let fx = Fixture::new(cfg(4, 8, 2, 1), 20 + seed, 1);
        let mut tape = Tape::new();
        let b = fx.store.bind(&mut tape);
        let bundle = fx.bundle(&mut tape);
        let layer = &fx.enc.layers[0];
        let (h, _, _) = fx.enc.layer_forward(&mut tape, &b, layer, bundle.text, &bundle, Branches::Both, None).unwrap();
        let want = reference::layer_forward(&fx.store, &fx.cfg, layer, fx.text.data(), &fx.inputs(), true);
        assert_close(tape.value(h).data(), &want, 1e-10);
    }
}

#[test]
fn zero_visual_values_reduce_to_text_only_layer() {
    let mut fx = Fixture::new(cfg(6, 8, 2, 2), 7, 2);
    for l in 0..2 {
        let id = fx.enc.layers[l].visual.wv;
        fx.zero(id);
    }
    let run = |branches| {
        let mut tape = Tape::new();
        let b = fx.store.bind(&mut tape);
        let bundle = fx.bundle(&mut tape);
        let out = fx.enc.forward_with(&mut tape, &b, &bundle, branches, None).unwrap();
        tape.value(out.hidden).clone()
    };
    assert_eq!(run(Branches::Both), run(Branches::TextOnly));
}

#[test]
fn padded_keys_get_zero_probability_and_rows_sum_to_one() {
    let fx = Fixture::new(cfg(7, 8, 2, 2), 8, 3);
    let mut tape = Tape::new();
    let b = fx.store.bind(&mut tape);
    let bundle = fx.bundle(&mut tape);
    let out = fx.enc.forward(&mut tape, &b, &bundle, None).unwrap();
    for trace in &out.layers {
        for row in tape.value(trace.text_probs).data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row[4..].iter().all(|&p| p == 0.0));
            assert!(row[..4].iter().all(|&p| p > 0.0));
        }
        for row in tape.value(trace.visual_probs.unwrap()).data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn empty_stack_returns_initial_hidden() {
    for inject in [true, false] {
        let mut c = cfg(4, 4, 1, 0);
        c.inject_spatial_into_hidden = inject;
        let fx = Fixture::new(c, 9, 0);
        let mut tape = Tape::new();
        let b = fx.store.bind(&mut tape);
        let bundle = fx.bundle(&mut tape);
        let out = fx.enc.forward(&mut tape, &b, &bundle, None).unwrap();
        let want: Vec<f64> = if inject {
            fx.text.data().iter().zip(fx.ts.data()).map(|(a, b)| a + b).collect()
        } else {
            fx.text.data().to_vec()
        };
        assert_eq!(tape.value(out.hidden).data(), want.as_slice());
    }
}

#[test]
fn stack_is_deterministic_and_matches_reference() {
    let fx = Fixture::new(cfg(5, 8, 2, 2), 11, 1);
    let run = || {
        let mut tape = Tape::new();
        let b = fx.store.bind(&mut tape);
        let bundle = fx.bundle(&mut tape);
        let out = fx.enc.forward(&mut tape, &b, &bundle, None).unwrap();
        tape.value(out.hidden).clone()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let want = reference::encoder_forward(&fx.store, &fx.cfg, &fx.enc.layers, fx.text.data(), &fx.inputs());
    assert_close(a.data(), &want, 1e-10);
}

/// Every encoder parameter and input tensor against central differences.
#[test]
fn full_stack_gradients_match_finite_differences() {
    let fx = Fixture::new(cfg(8, 8, 2, 2), 12, 2);
    let mut inputs: Vec<Tensor> = fx.store.entries().iter().map(|e| e.value.clone()).collect();
    let np = inputs.len();
    inputs.extend([fx.visual.clone(), fx.text.clone(), fx.vs.clone(), fx.ts.clone()]);
    let w = Tensor::randn(&[8, 8], 1.0, &mut Rng::new(99));
    let report = check_gradients(&inputs, 1e-5, |tape: &mut Tape, v: &[Var]| {
        let b = Binding::from_vars(v[..np].to_vec());
        let bundle = FeatureBundle {
            visual: v[np],
            text: v[np + 1],
            visual_spatial: v[np + 2],
            text_spatial: v[np + 3],
            mask: fx.mask.clone(),
        };
        let out = fx.enc.forward(tape, &b, &bundle, None)?;
        probe(tape, out.hidden, &w)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn attention_flops_scale_quadratically_and_double_with_visual_branch() {
    let flops = |n: usize, d: usize, branches| {
        let fx = Fixture::new(cfg(n, d, 2, 1), 13, 0);
        let mut tape = Tape::new();
        let b = fx.store.bind(&mut tape);
        let bundle = fx.bundle(&mut tape);
        fx.enc.forward_with(&mut tape, &b, &bundle, branches, None).unwrap().attention_flops as f64
    };
    let ratio_n = flops(32, 8, Branches::Both) / flops(16, 8, Branches::Both);
    assert!((3.6..=4.4).contains(&ratio_n), "{ratio_n}");
    let ratio_d = flops(16, 16, Branches::Both) / flops(16, 8, Branches::Both);
    assert!((1.8..=2.2).contains(&ratio_d), "{ratio_d}");
    let mm = flops(16, 8, Branches::Both) / flops(16, 8, Branches::TextOnly);
    assert!((1.8..=2.8).contains(&mm), "{mm}");
}
