mod common;

use proptest::prelude::*;
use rand::Rng;
use rhia_core::diff::{grad_check, Gradients, OpKind, ParamStore, Tape, Tensor};
use rhia_core::{Error, Result};

fn store(entries: &[(&str, &[usize], Vec<f64>)]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (name, shape, v) in entries {
        s.add(name, Tensor::from_values(shape, v.clone()).unwrap());
    }
    s
}

fn affine_value(x: [f64; 2], w: [f64; 4], b: [f64; 2]) -> Vec<f64> {
    let s = store(&[]);
    let mut t = Tape::new(&s);
    let x = t.input(1, 2, x.to_vec()).unwrap();
    let w = t.input(2, 2, w.to_vec()).unwrap();
    let b = t.input(1, 2, b.to_vec()).unwrap();
    let y = t.affine(x, w, b).unwrap();
    t.value(y).to_vec()
}

#[test]
fn affine_examples() {
    assert_eq!(affine_value([1.0, 2.0], [1.0, 0.0, 0.0, 1.0], [0.0, 0.0]), [1.0, 2.0]);
    assert_eq!(affine_value([1.0, 2.0], [0.0; 4], [3.0, 4.0]), [3.0, 4.0]);
    assert_eq!(affine_value([1.0, -1.0], [2.0, 1.0, 1.0, 2.0], [0.5, 0.5]), [1.5, -0.5]);
}

#[test]
fn affine_shape_error_names_both_shapes() {
    let s = store(&[]);
    let mut t = Tape::<f64>::new(&s);
    let x = t.input(1, 3, vec![0.0; 3]).unwrap();
    let w = t.input(2, 2, vec![0.0; 4]).unwrap();
    let b = t.input(1, 2, vec![0.0; 2]).unwrap();
    let err = t.affine(x, w, b).unwrap_err();
    assert_eq!(
        err,
        Error::Shape {
            op: "matmul",
            left: (1, 3),
            right: (2, 2)
        }
    );
    assert!(err.to_string().contains("(1, 3)") && err.to_string().contains("(2, 2)"));
}

fn softmax_of(v: &[f64]) -> Result<Vec<f64>> {
    let s = store(&[]);
    let mut t = Tape::new(&s);
    let x = t.input(1, v.len(), v.to_vec())?;
    let y = t.softmax(x)?;
    Ok(t.value(y).to_vec())
}

#[test]
fn softmax_examples() {
    assert_eq!(softmax_of(&[0.0, 0.0]).unwrap(), [0.5, 0.5]);
    // direct exponentiation: e^k / (e + e² + e³)
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    let expected = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
    let got = softmax_of(&[1.0, 2.0, 3.0]).unwrap();
    for (g, e) in got.iter().zip(expected) {
        assert!((g - e).abs() < 1e-12);
    }
    assert!((got[0] - 0.09003057).abs() < 1e-8);
    assert!((got[1] - 0.24472847).abs() < 1e-8);
    assert!((got[2] - 0.66524096).abs() < 1e-8);
    let big = softmax_of(&[5.0, 1005.0]).unwrap();
    assert!(big[0] < 1e-300 && (big[1] - 1.0).abs() < 1e-15);
    assert!(big.iter().all(|v| v.is_finite()));
    assert_eq!(softmax_of(&[1.0, f64::NAN]), Err(Error::NonFinite("softmax")));
}

proptest! {
    #[test]
    fn softmax_normalized_and_shift_invariant(v in prop::collection::vec(-30.0f64..30.0, 1..12), c in -100.0f64..100.0) {
        let p = softmax_of(&v).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| x > 0.0));
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let q = softmax_of(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_zero_mean(v in prop::collection::vec(-50.0f64..50.0, 2..16)) {
        let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-3);
        let y = layer_norm_of(&v, 1e-5);
        prop_assert!((y.iter().sum::<f64>() / y.len() as f64).abs() < 1e-9);
    }
}

fn layer_norm_of(v: &[f64], eps: f64) -> Vec<f64> {
    let n = v.len();
    let s = store(&[]);
    let mut t = Tape::new(&s);
    let x = t.input(1, n, v.to_vec()).unwrap();
    let g = t.input(1, n, vec![1.0; n]).unwrap();
    let b = t.input(1, n, vec![0.0; n]).unwrap();
    let y = t.layer_norm(x, g, b, eps).unwrap();
    t.value(y).to_vec()
}

#[test]
fn layer_norm_examples() {
    assert_eq!(layer_norm_of(&[1.0; 4], 1e-5), [0.0; 4]);
    assert_eq!(layer_norm_of(&[1.0, 3.0], 0.0), [-1.0, 1.0]);
}

/// Builds `Σ_i w_i · out_i` over a primitive's output so every output entry
/// reaches the loss with a distinct weight.
fn weighted_sum(t: &mut Tape<'_, f64>, y: rhia_core::diff::NodeId, seed: u64) -> rhia_core::diff::NodeId {
    let (r, c) = t.shape(y);
    let mut rng = common::rng(seed);
    let w: Vec<f64> = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let wn = t.input(r, c, w).unwrap();
    let prod = t.mul(y, wn).unwrap();
    t.sum_squares(prod)
}

fn check<F>(params: &mut ParamStore<f64>, build: F)
where
    F: Fn(&mut Tape<'_, f64>) -> rhia_core::diff::NodeId,
{
    let report = grad_check(
        params,
        |p: &ParamStore<f64>| {
            let mut t = Tape::new(p);
            let out = build(&mut t);
            let loss = weighted_sum(&mut t, out, 99);
            let g = t.backward(loss)?;
            Ok((t.scalar(loss), g))
        },
        1e-5,
        1e-4,
        50,
        &mut common::rng(1),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

fn rand_vals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = common::rng(seed);
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

fn two_params(a: (usize, usize), b: (usize, usize)) -> ParamStore<f64> {
    store(&[
        ("a", &[a.0, a.1], rand_vals(a.0 * a.1, 10)),
        ("b", &[b.0, b.1], rand_vals(b.0 * b.1, 11)),
    ])
}

#[test]
fn gradient_matmul_variants() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let ash = if ta { (4, 3) } else { (3, 4) };
        let bsh = if tb { (2, 4) } else { (4, 2) };
        let mut p = two_params(ash, bsh);
        check(&mut p, |t| {
            let a = t.param(t.params().find("a").unwrap());
            let b = t.param(t.params().find("b").unwrap());
            t.matmul_t(a, b, ta, tb).unwrap()
        });
    }
}

#[test]
fn gradient_elementwise() {
    let mut p = two_params((3, 4), (3, 4));
    check(&mut p, |t| {
        let a = t.param(t.params().find("a").unwrap());
        let b = t.param(t.params().find("b").unwrap());
        let s = t.sigmoid(a);
        let th = t.tanh(b);
        let m = t.mul(s, th).unwrap();
        let d = t.sub(m, a).unwrap();
        let r = t.relu(d);
        let sc = t.scale(r, 0.7);
        let mixed = t.gate_mix(s, sc, th).unwrap();
        t.add(mixed, a).unwrap()
    });
}

#[test]
fn gradient_bias_concat_gather_broadcast() {
    let mut p = store(&[
        ("table", &[6, 3], rand_vals(18, 3)),
        ("bias", &[3], rand_vals(3, 4)),
        ("row", &[3], rand_vals(3, 5)),
    ]);
    check(&mut p, |t| {
        let table = t.param(t.params().find("table").unwrap());
        let bias = t.param(t.params().find("bias").unwrap());
        let row = t.param(t.params().find("row").unwrap());
        let g = t.gather_rows(table, &[0, 5, 5, 2]).unwrap();
        let g = t.add_bias(g, bias).unwrap();
        let b = t.broadcast_row(row, 4).unwrap();
        t.concat(&[g, b, g]).unwrap()
    });
}

#[test]
fn gradient_softmax_family_and_layer_norm() {
    let mut p = store(&[
        ("x", &[3, 5], rand_vals(15, 6)),
        ("gain", &[5], rand_vals(5, 7)),
        ("shift", &[5], rand_vals(5, 8)),
    ]);
    check(&mut p, |t| {
        let x = t.param(t.params().find("x").unwrap());
        let g = t.param(t.params().find("gain").unwrap());
        let s = t.param(t.params().find("shift").unwrap());
        let a = t.softmax(x).unwrap();
        let b = t.log_softmax(x).unwrap();
        let c = t.layer_norm(x, g, s, 1e-5).unwrap();
        let ab = t.add(a, b).unwrap();
        t.add(ab, c).unwrap()
    });
}

#[test]
fn gradient_unfold_and_piecewise_max() {
    let mut p = store(&[("x", &[9, 2], rand_vals(18, 12))]);
    check(&mut p, |t| {
        let x = t.param(t.params().find("x").unwrap());
        let u = t.unfold(x, &[0..4, 4..9], 3).unwrap();
        t.piecewise_max(u, &[[0..1, 1..3, 3..4], [4..6, 6..9, 9..9]]).unwrap()
    });
}

#[test]
fn gradient_segments_dropout_nll() {
    let mut p = store(&[("s", &[5, 1], rand_vals(5, 13)), ("x", &[5, 3], rand_vals(15, 14))]);
    check(&mut p, |t| {
        let s = t.param(t.params().find("s").unwrap());
        let x = t.param(t.params().find("x").unwrap());
        let w = t.segment_softmax(s, &[0..2, 2..5]).unwrap();
        let b = t.segment_weighted_sum(w, x, &[0..2, 2..5]).unwrap();
        let d = t.dropout(b, vec![2.0, 0.0, 2.0, 0.0, 2.0, 2.0]).unwrap();
        let lp = t.log_softmax(d).unwrap();
        let l = t.nll(lp, &[1, 2]).unwrap();
        let l2 = t.nll(lp, &[0, 0]).unwrap();
        let both = t.concat(&[l, l2]).unwrap();
        let both = t.broadcast_row(both, 2).unwrap();
        t.concat(&[both, b]).unwrap()
    });
}

#[test]
fn quadratic_and_constant() {
    let mut p = store(&[("x", &[1], vec![3.0])]);
    let report = grad_check(
        &mut p,
        |p: &ParamStore<f64>| {
            let mut t = Tape::new(p);
            let x = t.param(p.find("x").unwrap());
            let l = t.sum_squares(x);
            let g = t.backward(l)?;
            Ok((t.scalar(l), g))
        },
        1e-5,
        1e-4,
        1,
        &mut common::rng(0),
    )
    .unwrap();
    assert!((report.worst[0].analytic - 6.0).abs() < 1e-12);
    assert!((report.worst[0].numeric - 6.0).abs() < 1e-6);

    let report = grad_check(
        &mut p,
        |p: &ParamStore<f64>| {
            let mut t = Tape::new(p);
            let c = t.input(1, 1, vec![4.0])?;
            let _x = t.param(p.find("x").unwrap());
            let g = t.backward(c)?;
            Ok((t.scalar(c), g))
        },
        1e-5,
        1e-4,
        1,
        &mut common::rng(0),
    )
    .unwrap();
    assert_eq!(report.worst[0].analytic, 0.0);
    assert_eq!(report.worst[0].numeric, 0.0);
    assert!(report.passed());
}

#[test]
fn tolerance_zero_always_fails() {
    let mut p = store(&[("x", &[2], vec![0.3, -0.2])]);
    let report = grad_check(
        &mut p,
        |p: &ParamStore<f64>| {
            let mut t = Tape::new(p);
            let x = t.param(p.find("x").unwrap());
            let y = t.tanh(x);
            let l = t.sum_squares(y);
            let g = t.backward(l)?;
            Ok((t.scalar(l), g))
        },
        1e-5,
        0.0,
        2,
        &mut common::rng(0),
    )
    .unwrap();
    assert!(!report.passed());
    assert!(matches!(report.into_result(), Err(Error::GradCheck { .. })));
}

#[test]
fn fault_injection_is_caught() {
    let mut p = two_params((2, 3), (3, 2));
    let report = grad_check(
        &mut p,
        |p: &ParamStore<f64>| {
            let mut t = Tape::new(p);
            t.inject_fault(OpKind::Tanh);
            let a = t.param(p.find("a").unwrap());
            let b = t.param(p.find("b").unwrap());
            let m = t.matmul(a, b)?;
            let y = t.tanh(m);
            let l = t.sum_squares(y);
            let g = t.backward(l)?;
            Ok((t.scalar(l), g))
        },
        1e-5,
        1e-4,
        6,
        &mut common::rng(0),
    )
    .unwrap();
    assert!(!report.passed());
    assert_eq!(OpKind::from_name("tanh"), Some(OpKind::Tanh));
}

#[test]
fn disconnected_parameter_grad_is_exactly_zero() {
    let mut p = two_params((2, 2), (2, 2));
    let (loss, grads): (f64, Gradients<f64>) = {
        let mut t = Tape::new(&p);
        let a = t.param(p.find("a").unwrap());
        let _b = t.param(p.find("b").unwrap());
        let l = t.sum_squares(a);
        (t.scalar(l), t.backward(l).unwrap())
    };
    assert!(loss > 0.0);
    let b = p.find("b").unwrap();
    assert!(grads.get(b).is_none());
    p.zero_grad();
    p.accumulate(&grads);
    assert!(p.get(b).grad().iter().all(|g| g.to_bits() == 0));
    assert!(p.get(p.find("a").unwrap()).grad().iter().any(|&g| g != 0.0));
}

#[test]
fn sgd_step_on_half_square() {
    for lr in [0.1, 0.5, 0.0] {
        let mut p = store(&[("theta", &[1], vec![1.0])]);
        let grads = {
            let mut t = Tape::new(&p);
            let x = t.param(p.find("theta").unwrap());
            let sq = t.sum_squares(x);
            let l = t.scale(sq, 0.5);
            t.backward(l).unwrap()
        };
        p.zero_grad();
        p.accumulate(&grads);
        p.sgd_step(lr);
        assert_eq!(p.get(p.find("theta").unwrap()).values()[0], 1.0 - lr);
    }
}
