use super::gradcheck::{check_gradients, probe};
use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    out
}

#[test]
fn matmul_identity_and_dot() {
    let mut tape = Tape::new();
    let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
    let p = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(p).data(), &[3.0, 4.0, 5.0, 6.0]);

    let row = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let col = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    let d = tape.matmul(row, col).unwrap();
    assert_eq!(tape.value(d).data(), &[11.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = Rng::new(11);
    let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    for (x, y) in tape.value(c).data().iter().zip(naive_matmul(&a, &b)) {
        assert!((x - y).abs() < 1e-12);
    }
    assert_eq!(tape.flops(), 2 * 3 * 4 * 2);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
}

#[test]
fn matmul_broadcasts_batch_axes() {
    let mut rng = Rng::new(5);
    let a = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
    let b = Tensor::randn(&[4, 5], 1.0, &mut rng);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    assert_eq!(tape.shape(c), &[2, 3, 5]);
    let second = t(&[3, 4], &a.data()[12..24]);
    assert_eq!(&tape.value(c).data()[15..30], naive_matmul(&second, &b).as_slice());
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[3]));
    let y = tape.softmax_rows(x, None).unwrap();
    for v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let x = tape.constant(t(&[3], &[10.0, 10.0, 1e6]));
    let y = tape.softmax_rows(x, Some(&[true, true, false])).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5, 0.0]);

    let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
    let y = tape.softmax_rows(x, None).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (k, v) in tape.value(y).data().iter().enumerate() {
        assert!((v - ((k + 1) as f64).exp() / z).abs() < 1e-12);
    }
}

#[test]
fn softmax_fully_masked_row_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 2]));
    let err = tape
        .softmax_rows(x, Some(&[true, true, false, false]))
        .unwrap_err();
    assert!(matches!(err, crate::Error::FullyMasked { row: 1 }));
}

#[test]
fn backward_simple_cases() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    assert!(tape.backward(loss).is_err(), "second backward must fail");

    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let c = tape.constant(Tensor::scalar(3.0));
    tape.backward(c).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn backward_errors() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2]));
    assert!(tape.backward(x).is_err(), "non-scalar");
    let mut other = Tape::new();
    let y = other.param(Tensor::scalar(1.0));
    assert!(tape.backward(y).is_err(), "detached");
}

#[test]
fn smooth_l1_and_bce_values() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::full(&[4], 0.5));
    let l = tape.smooth_l1(p, &Tensor::zeros(&[4])).unwrap();
    assert!((tape.value(l).item() - 0.125).abs() < 1e-15);

    let z = tape.constant(Tensor::scalar(0.0));
    for label in [0.0, 1.0] {
        let l = tape.binary_cross_entropy_from_logit(z, label).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }
    let z = tape.constant(Tensor::scalar(20.0));
    let l = tape.binary_cross_entropy_from_logit(z, 1.0).unwrap();
    assert!(tape.value(l).item() < 1e-8);
}

#[test]
fn conv_output_extents() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 16, 16]));
    let w = tape.constant(Tensor::zeros(&[4, 1, 3, 3]));
    let b = tape.constant(Tensor::zeros(&[4]));
    let y = tape.conv2d(x, w, b, 2, 1).unwrap();
    assert_eq!(tape.shape(y), &[4, 8, 8]);
    let wt = tape.constant(Tensor::zeros(&[4, 2, 4, 4]));
    let bt = tape.constant(Tensor::zeros(&[2]));
    let z = tape.conv_transpose2d(y, wt, bt, 2, 1).unwrap();
    assert_eq!(tape.shape(z), &[2, 16, 16]);
}

#[test]
fn seeded_graph_is_bit_identical() {
    let run = || {
        let mut rng = Rng::new(99);
        let mut tape = Tape::new();
        let a = tape.param(Tensor::randn(&[4, 4], 1.0, &mut rng));
        let h = tape.gelu(a).unwrap();
        let d = tape.dropout(h, 0.3, &mut rng).unwrap();
        let s = tape.softmax_rows(d, None).unwrap();
        let l = tape.sum(s).unwrap();
        tape.backward(l).unwrap();
        (tape.value(s).clone(), tape.grad(a).unwrap(), tape.flops())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
               b.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

/// Finite-difference check over several seeds for each primitive op.
#[test]
fn primitive_ops_pass_finite_differences() {
    type Case = (&'static str, Vec<Vec<usize>>, fn(&mut Tape, &[Var]) -> crate::Result<Var>);
    let cases: Vec<Case> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| t.matmul(v[0], v[1])),
        ("layer_norm", vec![vec![3, 5], vec![5], vec![5]], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)),
        ("softmax", vec![vec![3, 4]], |t, v| t.softmax_rows(v[0], Some(&[true, false, true, true]))),
        ("gelu", vec![vec![6]], |t, v| t.gelu(v[0])),
        ("rel_bias", vec![vec![2, 5, 3], vec![5, 3]], |t, v| t.relative_bias(v[0], v[1], 2, RelSide::Key)),
    ];
    for (name, shapes, f) in cases {
        for seed in 0..3u64 {
            let mut rng = Rng::new(seed);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect();
            let mut probe_rng = Rng::new(1000 + seed);
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
            let out = f(&mut tape, &vars).unwrap();
            let out_shape = tape.shape(out).to_vec();
            let w = Tensor::randn(&out_shape, 1.0, &mut probe_rng);
            let report = check_gradients(&inputs, 1e-5, |tape, v| {
                let y = f(tape, v)?;
                probe(tape, y, &w)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{name} seed {seed}: {report:?}");
        }
    }
}
