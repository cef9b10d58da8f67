use super::*;
use crate::features::UNK;
use crate::testutil::tiny;

fn stats_tokens(n: usize) -> (Vec<usize>, Vec<bool>) {
    let mut rng = Rng::new(77);
    let ids = (0..n).map(|_| 4 + rng.below(96)).collect();
    (ids, vec![true; n])
}

#[test]
fn zero_probability_corrupts_nothing() {
    let (ids, mask) = stats_tokens(500);
    let (out, targets) = apply_mlm_corruption(&ids, &mask, 100, 0.0, &mut Rng::new(1));
    assert_eq!(out, ids);
    assert!(targets.iter().all(|&t| t == IGNORE));
}

#[test]
fn selection_and_replacement_fractions() {
    let (ids, mask) = stats_tokens(10_000);
    let (out, targets) = apply_mlm_corruption(&ids, &mask, 100, 0.15, &mut Rng::new(2));
    let selected: Vec<usize> = (0..ids.len()).filter(|&k| targets[k] != IGNORE).collect();
    let frac = selected.len() as f64 / ids.len() as f64;
    assert!((0.13..=0.17).contains(&frac), "{frac}");
    let masked = selected.iter().filter(|&&k| out[k] == MASK).count() as f64 / selected.len() as f64;
    let kept = selected.iter().filter(|&&k| out[k] == ids[k]).count() as f64 / selected.len() as f64;
    let random = 1.0 - masked - kept;
    assert!((masked - 0.8).abs() <= 0.03, "{masked}");
    assert!((kept - 0.1).abs() <= 0.03, "{kept}");
    assert!((random - 0.1).abs() <= 0.03, "{random}");
    for &k in &selected {
        assert_eq!(targets[k], ids[k] as i64);
    }
}

#[test]
fn cls_and_padding_are_never_selected() {
    let ids = [CLS, 5, 6, PAD, PAD];
    let mask = [true, true, true, false, false];
    for seed in 0..50 {
        let (out, t) = apply_mlm_corruption(&ids, &mask, 10, 1.0, &mut Rng::new(seed));
        assert_eq!((out[0], out[3], out[4]), (CLS, PAD, PAD));
        assert_eq!((t[0], t[3], t[4]), (IGNORE, IGNORE, IGNORE));
        assert_eq!((t[1], t[2]), (5, 6));
    }
}

#[test]
fn pairing_fractions_and_construction() {
    assert!(sample_tdi_pairing(10, 0.0, &mut Rng::new(1)).iter().all(|p| p.matched));
    assert!(sample_tdi_pairing(1, 1.0, &mut Rng::new(1))[0].matched);
    let pairs = sample_tdi_pairing(10_000, 0.2, &mut Rng::new(3));
    let frac = pairs.iter().filter(|p| !p.matched).count() as f64 / 1e4;
    assert!((0.18..=0.22).contains(&frac), "{frac}");
    for (i, p) in pairs.iter().enumerate() {
        assert_eq!(p.matched, p.image_from == i);
    }
}

#[test]
fn batch_keeps_images_bit_identical_and_mismatches_differ() {
    let t = tiny(8, 1);
    let refs: Vec<&DocInput> = t.inputs.iter().collect();
    let s = SamplingConfig { mlm_prob: 0.5, mismatch_prob: 0.5, vocab_size: t.vocab.len() };
    let items = build_batch(&refs, &s, &mut Rng::new(4));
    assert!(items.iter().any(|i| !i.matched));
    for (item, src) in items.iter().zip(&t.inputs) {
        if item.matched {
            let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&item.input.image), bits(&src.image));
        } else {
            assert_ne!(item.input.image, src.image);
        }
        assert_eq!(item.input.spatial, src.spatial);
    }
}

#[test]
fn decoder_layout_tiles_quarter_map() {
    let cfg = ModelConfig::default();
    let l = DecoderLayout::for_config(&cfg).unwrap();
    assert_eq!((l.grid_h, l.grid_w, l.patch_h, l.patch_w), (8, 8, 4, 4));
    let odd = ModelConfig { seq_len: 7, ..cfg };
    assert!(matches!(DecoderLayout::for_config(&odd), Err(Error::Config(_))));
}

struct HeadFixture {
    model: Model,
    heads: PretrainHeads,
}

fn head_fixture(seed: u64) -> (crate::testutil::Tiny, HeadFixture) {
    let t = tiny(4, seed);
    let mut model = t.model(seed);
    let heads = PretrainHeads::init(&mut model.store, &t.cfg, &mut Rng::new(seed + 100)).unwrap();
    (t, HeadFixture { model, heads })
}

#[test]
fn mlm_loss_examples() {
    let (t, mut f) = head_fixture(1);
    f.model.store.get_mut(f.heads.mlm_w).data_mut().fill(0.0);
    let v = t.vocab.len() as f64;
    let mut tape = Tape::new();
    let b = f.model.store.bind(&mut tape);
    let hidden = tape.constant(Tensor::randn(&[16, 8], 1.0, &mut Rng::new(1)));
    let mut targets = vec![IGNORE; 16];
    targets[3] = UNK as i64;
    let l = mm_mlm_loss(&mut tape, &b, &f.heads, hidden, &targets).unwrap();
    assert!((tape.value(l).item() - v.ln()).abs() < 1e-12);

    f.model.store.get_mut(f.heads.mlm_b).data_mut()[UNK] = 60.0;
    let mut tape = Tape::new();
    let b = f.model.store.bind(&mut tape);
    let hidden = tape.constant(Tensor::zeros(&[16, 8]));
    let l = mm_mlm_loss(&mut tape, &b, &f.heads, hidden, &targets).unwrap();
    assert!(tape.value(l).item() < 1e-20);

    let none = vec![IGNORE; 16];
    let l = mm_mlm_loss(&mut tape, &b, &f.heads, hidden, &none).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
}

#[test]
fn mlm_loss_matches_direct_softmax_loop() {
    let (t, f) = head_fixture(2);
    let hidden_t = Tensor::randn(&[16, 8], 1.0, &mut Rng::new(5));
    let targets: Vec<i64> = (0..16).map(|k| if k % 3 == 1 { (4 + k) as i64 } else { IGNORE }).collect();
    let mut tape = Tape::new();
    let b = f.model.store.bind(&mut tape);
    let hidden = tape.constant(hidden_t.clone());
    let l = mm_mlm_loss(&mut tape, &b, &f.heads, hidden, &targets).unwrap();
    let (w, bias) = (f.model.store.get(f.heads.mlm_w), f.model.store.get(f.heads.mlm_b));
    let v = t.vocab.len();
    let mut total = 0.0;
    let mut count = 0.0;
    for (k, &tgt) in targets.iter().enumerate() {
        if tgt == IGNORE {
            continue;
        }
        let logits: Vec<f64> =
            (0..v).map(|c| bias.data()[c] + (0..8).map(|i| hidden_t.at2(k, i) * w.at2(i, c)).sum::<f64>()).collect();
        let z: f64 = logits.iter().map(|x| x.exp()).sum();
        total += z.ln() - logits[tgt as usize];
        count += 1.0;
    }
    assert!((tape.value(l).item() - total / count).abs() < 1e-10);
}

#[test]
fn ltr_loss_examples() {
    let (_, mut f) = head_fixture(3);
    let mut tape = Tape::new();
    let b = f.model.store.bind(&mut tape);
    let hidden = tape.constant(Tensor::randn(&[16, 8], 1.0, &mut Rng::new(2)));
    let recon = f.heads.reconstruct(&mut tape, &b, hidden).unwrap();
    assert_eq!(tape.shape(recon), &[1, 32, 32]);
    let same = tape.value(recon).clone();
    let l = ltr_loss(&mut tape, &b, &f.heads, hidden, &same, true).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
    let l = ltr_loss(&mut tape, &b, &f.heads, hidden, &Tensor::zeros(&[1, 32, 32]), false).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
    assert!(ltr_loss(&mut tape, &b, &f.heads, hidden, &Tensor::zeros(&[1, 16, 16]), true).is_err());

    for id in f.heads.decoder_params() {
        f.model.store.get_mut(id).data_mut().fill(0.0);
    }
    let mut tape = Tape::new();
    let b = f.model.store.bind(&mut tape);
    let hidden = tape.constant(Tensor::randn(&[16, 8], 1.0, &mut Rng::new(2)));
    let l = ltr_loss(&mut tape, &b, &f.heads, hidden, &Tensor::full(&[1, 32, 32], 0.5), true).unwrap();
    assert!((tape.value(l).item() - 0.125).abs() < 1e-15);
}

#[test]
fn tdi_loss_examples() {
    let (_, mut f) = head_fixture(4);
    f.model.store.get_mut(f.heads.tdi_w).data_mut().fill(0.0);
    let mut tape = Tape::new();
    let b = f.model.store.bind(&mut tape);
    let hidden = tape.constant(Tensor::randn(&[16, 8], 1.0, &mut Rng::new(3)));
    for matched in [true, false] {
        let l = tdi_loss(&mut tape, &b, &f.heads, hidden, matched).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }
    f.model.store.get_mut(f.heads.tdi_b).data_mut()[0] = 20.0;
    let mut tape = Tape::new();
    let b = f.model.store.bind(&mut tape);
    let hidden = tape.constant(Tensor::randn(&[16, 8], 1.0, &mut Rng::new(3)));
    let l = tdi_loss(&mut tape, &b, &f.heads, hidden, true).unwrap();
    assert!(tape.value(l).item() < 1e-8);
}

#[test]
fn tdi_loss_matches_bce_formula() {
    let (_, f) = head_fixture(5);
    let h = Tensor::randn(&[16, 8], 1.0, &mut Rng::new(6));
    let w = f.model.store.get(f.heads.tdi_w);
    let z: f64 = (0..8).map(|i| h.at2(0, i) * w.data()[i]).sum::<f64>() + f.model.store.get(f.heads.tdi_b).data()[0];
    let sig = 1.0 / (1.0 + (-z).exp());
    for (matched, want) in [(true, -sig.ln()), (false, -(1.0 - sig).ln())] {
        let mut tape = Tape::new();
        let b = f.model.store.bind(&mut tape);
        let hidden = tape.constant(h.clone());
        let l = tdi_loss(&mut tape, &b, &f.heads, hidden, matched).unwrap();
        assert!((tape.value(l).item() - want).abs() < 1e-12);
    }
}

#[test]
fn loss_composition() {
    let w = LossWeights::default();
    assert_eq!((w.mlm, w.ltr, w.tdi), (5.0, 1.0, 5.0));
    assert_eq!(weighted_total(&w, 1.0, 2.0, 0.5), 9.5);
    assert_eq!(weighted_total(&w, 0.0, 0.0, 0.0), 0.0);
    let only_tdi = LossWeights { mlm: 0.0, ltr: 0.0, tdi: 1.0 };
    assert_eq!(weighted_total(&only_tdi, 3.0, 4.0, 0.7), 0.7);
    let mut tape = Tape::new();
    let [a, b, c] = [1.0, 2.0, 0.5].map(|x| tape.constant(Tensor::scalar(x)));
    let parts = combine_losses(&mut tape, &w, a, b, c).unwrap();
    assert_eq!(tape.value(parts.total).item(), 9.5);
}

fn item_with_mask(t: &crate::testutil::Tiny, k: usize, matched: bool, other: usize) -> PretrainItem {
    let mut input = t.inputs[k].clone();
    let mut targets = vec![IGNORE; input.tokens.len()];
    targets[2] = input.tokens.ids[2] as i64;
    input.tokens.ids[2] = MASK;
    if !matched {
        input.image = t.inputs[other].image.clone();
    }
    PretrainItem { input, mlm_targets: targets, matched }
}

#[test]
fn mismatched_item_leaves_decoder_gradients_exactly_zero() {
    let (t, f) = head_fixture(6);
    let item = item_with_mask(&t, 0, false, 1);
    let mut tape = Tape::new();
    let b = f.model.store.bind(&mut tape);
    let parts = pretrain_loss(&mut tape, &b, &f.model, &f.heads, &item, &LossWeights::default(), None).unwrap();
    assert_eq!(tape.value(parts.ltr).item(), 0.0);
    tape.backward(parts.total).unwrap();
    let grads = b.grads(&tape).unwrap();
    for id in f.heads.decoder_params() {
        assert!(grads.get(id).data().iter().all(|&g| g == 0.0));
    }
}

#[test]
fn every_encoder_parameter_receives_gradient() {
    for seed in 0..5 {
        let (t, f) = head_fixture(10 + seed);
        let item = item_with_mask(&t, 1, true, 0);
        let mut tape = Tape::new();
        let b = f.model.store.bind(&mut tape);
        let parts = pretrain_loss(&mut tape, &b, &f.model, &f.heads, &item, &LossWeights::default(), None).unwrap();
        for v in [parts.mlm, parts.ltr, parts.tdi, parts.total] {
            assert!(tape.value(v).item() >= 0.0);
        }
        tape.backward(parts.total).unwrap();
        let grads = b.grads(&tape).unwrap();
        for id in f.model.store.ids() {
            let name = f.model.store.name(id);
            if name.starts_with("encoder.") {
                assert!(grads.get(id).data().iter().any(|&g| g != 0.0), "seed {seed}: {name}");
            }
        }
    }
}
