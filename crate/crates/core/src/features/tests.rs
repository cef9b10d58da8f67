use super::*;
use crate::config::ModelConfig;
use crate::docdata::{generate_synthetic_corpus, SpatialRecord, SynthConfig};
use crate::params::{Binding, ParamStore};
use crate::tensor::gradcheck::{check_gradients, probe};
use crate::tensor::{Rng, Tape, Tensor, Var};

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        d: 4,
        seq_len: 5,
        layers: 1,
        heads: 1,
        num_bins: 8,
        image_height: 16,
        image_width: 16,
        cnn_channels: [2, 3, 4],
        vocab_size: 12,
        ..ModelConfig::default()
    }
}

fn setup(cfg: &ModelConfig, seed: u64) -> (ParamStore, FeatureParams) {
    let mut store = ParamStore::new();
    let fp = FeatureParams::init(&mut store, cfg, &mut Rng::new(seed));
    (store, fp)
}

fn random_records(cfg: &ModelConfig, rng: &mut Rng) -> Vec<SpatialRecord> {
    (0..cfg.seq_len)
        .map(|p| {
            let mut r = SpatialRecord::padding(cfg.num_bins, p);
            let mut b = || rng.below(cfg.num_bins);
            r.x1 = b();
            r.y1 = b();
            r.x3 = b();
            r.y3 = b();
            r.w = b();
            r.h = b();
            r.rel_x = [b(), b(), b(), b(), b()];
            r.rel_y = [b(), b(), b(), b(), b()];
            r
        })
        .collect()
}

#[test]
fn all_pad_ids_repeat_row_zero_and_gather_matches_table() {
    let cfg = tiny_cfg();
    let (store, fp) = setup(&cfg, 1);
    let table = store.get(fp.word_embedding).clone();
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let t = fp.embed_text(&mut tape, &b, &[PAD; 5]).unwrap();
    for row in tape.value(t).data().chunks(cfg.d) {
        assert_eq!(row, &table.data()[..cfg.d]);
    }
    let ids = [1, 7, 3, 11, 0];
    let t = fp.embed_text(&mut tape, &b, &ids).unwrap();
    for (i, row) in tape.value(t).data().chunks(cfg.d).enumerate() {
        assert_eq!(row, &table.data()[ids[i] * cfg.d..(ids[i] + 1) * cfg.d]);
    }
    assert!(fp.embed_text(&mut tape, &b, &[12]).is_err());
}

#[test]
fn zero_image_with_zero_biases_gives_zero_visual_embedding() {
    let cfg = tiny_cfg();
    let (store, fp) = setup(&cfg, 2);
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let v = fp.embed_visual(&mut tape, &b, &Tensor::zeros(&[1, 16, 16])).unwrap();
    assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
    assert_eq!(tape.shape(v), &[cfg.seq_len, cfg.d]);
}

#[test]
fn visual_embedding_shape_is_independent_of_cell_count() {
    for (h, w) in [(16, 16), (32, 24), (8, 8)] {
        let cfg = ModelConfig { image_height: h, image_width: w, ..tiny_cfg() };
        let (store, fp) = setup(&cfg, 3);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let img = Tensor::randn(&[1, h, w], 0.3, &mut Rng::new(9));
        let v = fp.embed_visual(&mut tape, &b, &img).unwrap();
        assert_eq!(tape.shape(v), &[cfg.seq_len, cfg.d]);
        assert!(fp.embed_visual(&mut tape, &b, &Tensor::zeros(&[1, h + 8, w])).is_err());
    }
}

#[test]
fn spatial_with_only_absolute_table_returns_its_rows() {
    let cfg = tiny_cfg();
    let (mut store, fp) = setup(&cfg, 4);
    for &id in &fp.text_spatial.sub {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let abs = store.get(fp.text_spatial.abs).clone();
    let recs = random_records(&cfg, &mut Rng::new(5));
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let s = fp.embed_spatial(&mut tape, &b, &recs, Modality::Text).unwrap();
    assert_eq!(tape.value(s).data(), abs.data());
}

#[test]
fn identical_records_give_identical_rows() {
    let cfg = tiny_cfg();
    let (store, fp) = setup(&cfg, 6);
    let mut recs = random_records(&cfg, &mut Rng::new(7));
    recs[2] = recs[1].clone();
    recs[2].abs_pos = 1;
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let s = fp.embed_spatial(&mut tape, &b, &recs, Modality::Visual).unwrap();
    let d = cfg.d;
    let data = tape.value(s).data();
    assert_eq!(data[d..2 * d], data[2 * d..3 * d]);
}

/// Independent loop over the stored tables, term by term.
#[test]
fn spatial_embedding_equals_explicit_term_sum() {
    let cfg = tiny_cfg();
    for seed in 0..5 {
        let (store, fp) = setup(&cfg, seed);
        let recs = random_records(&cfg, &mut Rng::new(100 + seed));
        for m in [Modality::Visual, Modality::Text] {
            let tables = fp.spatial_tables(m);
            let mut tape = Tape::new();
            let b = store.bind(&mut tape);
            let s = fp.embed_spatial(&mut tape, &b, &recs, m).unwrap();
            for (i, r) in recs.iter().enumerate() {
                let scalars = [
                    r.x1, r.x3, r.w, r.rel_x[0], r.rel_x[1], r.rel_x[2], r.rel_x[3], r.rel_x[4], r.y1, r.y3, r.h,
                    r.rel_y[0], r.rel_y[1], r.rel_y[2], r.rel_y[3], r.rel_y[4],
                ];
                for c in 0..cfg.d {
                    let mut want = store.get(tables.abs).at2(r.abs_pos, c);
                    for (k, &bin) in scalars.iter().enumerate() {
                        want += store.get(tables.sub[k]).at2(bin, c);
                    }
                    let got = tape.value(s).at2(i, c);
                    assert!((got - want).abs() < 1e-12, "row {i} col {c}");
                }
            }
        }
    }
}

#[test]
fn spatial_bin_out_of_range_is_an_error() {
    let cfg = tiny_cfg();
    let (store, fp) = setup(&cfg, 1);
    let mut recs = random_records(&cfg, &mut Rng::new(1));
    recs[0].rel_y[3] = cfg.num_bins;
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    assert!(fp.embed_spatial(&mut tape, &b, &recs, Modality::Text).is_err());
}

#[test]
fn modality_tables_are_independent() {
    let cfg = tiny_cfg();
    let (mut store, fp) = setup(&cfg, 8);
    let recs = random_records(&cfg, &mut Rng::new(8));
    let eval = |store: &ParamStore| {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let v = fp.embed_spatial(&mut tape, &b, &recs, Modality::Visual).unwrap();
        let t = fp.embed_spatial(&mut tape, &b, &recs, Modality::Text).unwrap();
        (tape.value(v).clone(), tape.value(t).clone())
    };
    let (v0, t0) = eval(&store);
    for &id in fp.visual_spatial.x_group() {
        store.get_mut(id).data_mut().iter_mut().for_each(|x| *x += 1.0);
    }
    let (v1, t1) = eval(&store);
    assert_ne!(v0, v1);
    assert_eq!(t0, t1);
    for &id in fp.text_spatial.x_group() {
        store.get_mut(id).data_mut().iter_mut().for_each(|x| *x -= 3.0);
    }
    let (v2, t2) = eval(&store);
    assert_eq!(v1, v2);
    assert_ne!(t1, t2);
}

#[test]
fn visual_ignores_tokens_and_text_ignores_image() {
    let cfg = tiny_cfg();
    let (store, fp) = setup(&cfg, 10);
    let run = |ids: &[usize], img: &Tensor| {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let v = fp.embed_visual(&mut tape, &b, img).unwrap();
        let t = fp.embed_text(&mut tape, &b, ids).unwrap();
        (tape.value(v).clone(), tape.value(t).clone())
    };
    let img_a = Tensor::randn(&[1, 16, 16], 0.5, &mut Rng::new(1));
    let img_b = Tensor::randn(&[1, 16, 16], 0.5, &mut Rng::new(2));
    let (va, ta) = run(&[1, 4, 5, 0, 0], &img_a);
    let (vb, tb) = run(&[1, 9, 2, 6, 0], &img_a);
    let (vc, tc) = run(&[1, 4, 5, 0, 0], &img_b);
    assert_eq!(va, vb);
    assert_ne!(ta, tb);
    assert_eq!(ta, tc);
    assert_ne!(va, vc);
}

/// Finite differences through every feature parameter at once.
#[test]
fn feature_pipeline_gradients_match_finite_differences() {
    let cfg = tiny_cfg();
    for seed in 0..2 {
        let (store, fp) = setup(&cfg, seed);
        let mut rng = Rng::new(50 + seed);
        let recs = random_records(&cfg, &mut rng);
        let img = Tensor::randn(&[1, 16, 16], 0.5, &mut rng);
        let ids = [1, 5, 5, 9, 0];
        let w = Tensor::randn(&[cfg.seq_len, cfg.d], 1.0, &mut rng);
        let inputs: Vec<Tensor> = store.entries().iter().map(|e| e.value.clone()).collect();
        let report = check_gradients(&inputs, 1e-5, |tape: &mut Tape, v: &[Var]| {
            let b = Binding::from_vars(v.to_vec());
            let vis = fp.embed_visual(tape, &b, &img)?;
            let txt = fp.embed_text(tape, &b, &ids)?;
            let vs = fp.embed_spatial(tape, &b, &recs, Modality::Visual)?;
            let ts = fp.embed_spatial(tape, &b, &recs, Modality::Text)?;
            let a = tape.add(vis, txt)?;
            let a = tape.add(a, vs)?;
            let a = tape.add(a, ts)?;
            let sq = tape.mul(a, a)?;
            probe(tape, sq, &w)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn bundle_from_generated_document() {
    let corpus = generate_synthetic_corpus(&Rng::new(3), 3, &SynthConfig::default()).unwrap();
    let docs: Vec<_> = corpus.docs().cloned().collect();
    let vocab = Vocab::build(&docs, 300).unwrap();
    let cfg = ModelConfig { vocab_size: vocab.len(), seq_len: 16, d: 8, heads: 2, image_height: 32, image_width: 32, ..tiny_cfg() };
    let (store, fp) = setup(&cfg, 1);
    let input = DocInput::prepare(&vocab, &docs[0], &cfg).unwrap();
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let bundle = fp.bundle(&mut tape, &b, &input).unwrap();
    for v in [bundle.visual, bundle.text, bundle.visual_spatial, bundle.text_spatial] {
        assert_eq!(tape.shape(v), &[16, 8]);
    }
    assert_eq!(input.tokens.ids[0], CLS);
    assert_eq!(input.spatial[0], SpatialRecord::full_page(cfg.num_bins, 0));
    for (k, &m) in bundle.mask.iter().enumerate() {
        assert_eq!(m, input.tokens.ids[k] != PAD);
    }
}
