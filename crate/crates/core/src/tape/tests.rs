use super::*;
use crate::cloud::ChamferVariant;
use crate::error::Error;
use crate::tensor::Tensor;
use alloc::vec;
use alloc::vec::Vec;

fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn matmul_values_and_gradients() {
    let mut t = Tape::new();
    let a = t.leaf(m(2, 3, &[1., 2., 3., 4., 5., 6.]), true);
    let b = t.leaf(m(3, 2, &[7., 8., 9., 10., 11., 12.]), true);
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.value(c).data(), &[58., 64., 139., 154.]);
    let s = t.sum(c).unwrap();
    let g = t.backward(s).unwrap();
    // d sum(AB) / dA = 1·Bᵀ, row sums of B
    assert_eq!(g.get(a).unwrap().data(), &[15., 19., 23., 15., 19., 23.]);
    assert_eq!(g.get(b).unwrap().data(), &[5., 5., 7., 7., 9., 9.]);
}

#[test]
fn matmul_nt_matches_explicit_transpose() {
    let mut t = Tape::new();
    let a = t.leaf(m(2, 3, &[1., -2., 3., 0.5, 5., -6.]), true);
    let b = t.leaf(m(4, 3, &[1., 0., 2., -1., 3., 1., 0., 0., 1., 2., 2., 2.]), false);
    let x = t.matmul_nt(a, b).unwrap();
    let bt = t.transpose(b).unwrap();
    let y = t.matmul(a, bt).unwrap();
    assert_eq!(t.value(x), t.value(y));
}

#[test]
fn softmax_matches_high_precision_values() {
    // exp(i - 3) / Σ, evaluated with 25-digit arithmetic
    let want = [0.090_030_573_170_380_46, 0.244_728_471_054_797_64, 0.665_240_955_774_821_9];
    let mut t = Tape::new();
    let x = t.leaf(m(1, 3, &[1., 2., 3.]), false);
    let y = t.softmax_rows(x).unwrap();
    close(t.value(y).data(), &want, 4e-16);
    // shift invariance, and no overflow on large logits
    let x = t.leaf(m(1, 3, &[1001., 1002., 1003.]), false);
    let y = t.softmax_rows(x).unwrap();
    close(t.value(y).data(), &want, 1e-15);
}

#[test]
fn layer_norm_values() {
    let mut t = Tape::new();
    let x = t.leaf(m(1, 4, &[1., 2., 3., 4.]), false);
    let g = t.leaf(Tensor::vector(&[1., 1., 2., 1.]), false);
    let b = t.leaf(Tensor::vector(&[0., 0., 0., 10.]), false);
    let y = t.layer_norm(x, g, b, 1e-6).unwrap();
    // mean 2.5, population variance 1.25
    let s = 1.0 / (1.25f64 + 1e-6).sqrt();
    close(t.value(y).data(), &[-1.5 * s, -0.5 * s, 2.0 * 0.5 * s, 1.5 * s + 10.0], 1e-15);
    assert!(matches!(t.layer_norm(x, g, b, 0.0), Err(Error::Argument(_))));
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut t = Tape::new();
    let x = t.leaf(m(1, 3, &[-1., 0., 2.]), true);
    let y = t.relu(x).unwrap();
    let s = t.sum(y).unwrap();
    assert_eq!(t.backward(s).unwrap().get(x).unwrap().data(), &[0., 0., 1.]);
}

#[test]
fn concat_and_slice_route_gradients() {
    let mut t = Tape::new();
    let a = t.leaf(m(2, 1, &[1., 2.]), true);
    let b = t.leaf(m(2, 2, &[3., 4., 5., 6.]), true);
    let c = t.concat_cols(&[a, b]).unwrap();
    assert_eq!(t.value(c).data(), &[1., 3., 4., 2., 5., 6.]);
    let w = t.constant(m(2, 3, &[1., 2., 3., 4., 5., 6.]));
    let p = t.mul(c, w).unwrap();
    let s = t.sum(p).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(a).unwrap().data(), &[1., 4.]);
    assert_eq!(g.get(b).unwrap().data(), &[2., 3., 5., 6.]);

    let mut t = Tape::new();
    let x = t.leaf(m(2, 3, &[1., 2., 3., 4., 5., 6.]), true);
    let r = t.concat_rows(&[x, x]).unwrap();
    let sl = t.slice_cols(r, 1, 3).unwrap();
    assert_eq!(t.value(sl).data(), &[2., 3., 5., 6., 2., 3., 5., 6.]);
    let s = t.sum(sl).unwrap();
    assert_eq!(t.backward(s).unwrap().get(x).unwrap().data(), &[0., 2., 2., 0., 2., 2.]);
}

#[test]
fn row_replication_orders() {
    let mut t = Tape::new();
    let x = t.leaf(m(2, 1, &[1., 2.]), true);
    let tile = t.tile_rows(x, 3).unwrap();
    let rep = t.repeat_rows(x, 3).unwrap();
    assert_eq!(t.value(tile).data(), &[1., 2., 1., 2., 1., 2.]);
    assert_eq!(t.value(rep).data(), &[1., 1., 1., 2., 2., 2.]);
    let w = t.constant(m(6, 1, &[1., 2., 3., 4., 5., 6.]));
    let p = t.mul(rep, w).unwrap();
    let s = t.sum(p).unwrap();
    assert_eq!(t.backward(s).unwrap().get(x).unwrap().data(), &[6., 15.]);
}

#[test]
fn max_over_rows_ties_pick_the_first_row() {
    let mut t = Tape::new();
    let x = t.leaf(m(3, 2, &[1., 5., 3., 5., 3., 0.]), true);
    let y = t.max_over_rows(x).unwrap();
    assert_eq!(t.value(y).shape(), &[1, 2]);
    assert_eq!(t.value(y).data(), &[3., 5.]);
    let s = t.sum(y).unwrap();
    assert_eq!(t.backward(s).unwrap().get(x).unwrap().data(), &[0., 1., 1., 0., 0., 0.]);
}

#[test]
fn gather_accumulates_duplicates_and_checks_range() {
    let mut t = Tape::new();
    let x = t.leaf(m(3, 1, &[10., 20., 30.]), true);
    let y = t.gather_rows(x, &[2, 2, 0]).unwrap();
    assert_eq!(t.value(y).data(), &[30., 30., 10.]);
    let s = t.sum(y).unwrap();
    assert_eq!(t.backward(s).unwrap().get(x).unwrap().data(), &[1., 0., 2.]);
    assert!(t.gather_rows(x, &[3]).is_err());
    assert!(t.gather_rows(x, &[]).is_err());
}

#[test]
fn shape_mismatches_are_dimension_errors() {
    let mut t = Tape::new();
    let a = t.leaf(m(2, 3, &[0.; 6]), false);
    let b = t.leaf(m(2, 3, &[0.; 6]), false);
    assert!(matches!(t.matmul(a, b), Err(Error::Dimension { .. })));
    let c = t.leaf(m(3, 2, &[0.; 6]), false);
    assert!(matches!(t.add(a, c), Err(Error::Dimension { .. })));
    assert!(matches!(t.multi_head_attention(a, b, b, 2), Err(Error::Config(_))));
}

#[test]
fn backward_requires_a_scalar() {
    let mut t = Tape::new();
    let a = t.leaf(m(1, 2, &[1., 2.]), true);
    assert!(matches!(t.backward(a), Err(Error::Contract(_))));
}

#[test]
fn non_finite_values_are_caught_when_checking() {
    let mut t = Tape::<f64>::new();
    t.set_check_finite(true);
    let a = t.leaf(m(1, 1, &[f64::MAX]), false);
    assert!(matches!(t.add(a, a), Err(Error::NonFinite("add"))));
    t.set_check_finite(false);
    assert!(t.add(a, a).is_ok());
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::new();
    let a = t.leaf(m(1, 2, &[1., 2.]), true);
    let c = t.constant(m(1, 2, &[3., 4.]));
    let p = t.mul(a, c).unwrap();
    let s = t.sum(p).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(a).unwrap().data(), &[3., 4.]);
}

/// Attention written out with loops, one head at a time.
fn naive_attention(q: &[f64], k: &[f64], v: &[f64], a: usize, b: usize, c: usize, heads: usize) -> Vec<f64> {
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; a * c];
    for h in 0..heads {
        for i in 0..a {
            let logits: Vec<f64> = (0..b)
                .map(|j| (0..dh).map(|d| q[i * c + h * dh + d] * k[j * c + h * dh + d]).sum::<f64>() * scale)
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in 0..dh {
                out[i * c + h * dh + d] = (0..b).map(|j| e[j] / z * v[j * c + h * dh + d]).sum();
            }
        }
    }
    out
}

#[test]
fn attention_matches_naive_loops() {
    let (a, b, c, heads) = (3, 5, 6, 3);
    let gen = |n: usize, s: f64| (0..n).map(|i| (i as f64 * s).sin() * 1.3).collect::<Vec<_>>();
    let (q, k, v) = (gen(a * c, 0.7), gen(b * c, 1.1), gen(b * c, 0.3));
    let mut t = Tape::new();
    let (qv, kv, vv) = (
        t.leaf(m(a, c, &q), true),
        t.leaf(m(b, c, &k), true),
        t.leaf(m(b, c, &v), true),
    );
    let o = t.multi_head_attention(qv, kv, vv, heads).unwrap();
    close(t.value(o).data(), &naive_attention(&q, &k, &v, a, b, c, heads), 1e-14);
}

#[test]
fn single_key_attention_copies_the_value() {
    let mut t = Tape::new();
    let q = t.leaf(m(2, 2, &[1., -4., 0.5, 9.]), false);
    let k = t.leaf(m(1, 2, &[3., 3.]), false);
    let v = t.leaf(m(1, 2, &[7., -1.]), false);
    let o = t.multi_head_attention(q, k, v, 2).unwrap();
    assert_eq!(t.value(o).data(), &[7., -1., 7., -1.]);
}

#[test]
fn chamfer_on_tape_matches_hand_values() {
    let mut t = Tape::new();
    let p = t.leaf(m(1, 3, &[0., 0., 0.]), true);
    let s = t.leaf(m(2, 3, &[1., 0., 0., 0., 2., 0.]), true);
    let l2 = t.chamfer(p, s, ChamferVariant::L2).unwrap();
    let l1 = t.chamfer(p, s, ChamferVariant::L1).unwrap();
    assert_eq!(t.value(l2).item().unwrap(), 1.0 + 2.5);
    assert_eq!(t.value(l1).item().unwrap(), 1.0 + 1.5);
    let g = t.backward(l2).unwrap();
    // d/dp: 2(p - s0) from the forward term, plus ½·2(p − s0) + ½·2(p − s1) from the reverse term
    assert_eq!(g.get(p).unwrap().data(), &[-3., -2., 0.]);
}

#[test]
fn chamfer_l1_subgradient_is_zero_on_coincident_points() {
    let mut t = Tape::new();
    let p = t.leaf(m(1, 3, &[1., 1., 1.]), true);
    let s = t.leaf(m(1, 3, &[1., 1., 1.]), true);
    let d = t.chamfer(p, s, ChamferVariant::L1).unwrap();
    assert_eq!(t.value(d).item().unwrap(), 0.0);
    let g = t.backward(d).unwrap();
    assert_eq!(g.get(p).unwrap().data(), &[0., 0., 0.]);
}

#[test]
fn reverse_sweep_is_deterministic() {
    let run = || {
        let mut t = Tape::new();
        let x = t.leaf(m(4, 4, &(0..16).map(|i| (i as f64).cos()).collect::<Vec<_>>()), true);
        let y = t.multi_head_attention(x, x, x, 2).unwrap();
        let z = t.softmax_rows(y).unwrap();
        let s = t.mean(z).unwrap();
        let w = t.matmul(x, x).unwrap();
        let s2 = t.sum(w).unwrap();
        let tot = t.add(s, s2).unwrap();
        t.backward(tot).unwrap().get(x).unwrap().clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn injected_fault_changes_matmul_gradient() {
    let mut t = Tape::new();
    t.inject_fault();
    let a = t.leaf(m(1, 2, &[1., 2.]), true);
    let b = t.leaf(m(2, 1, &[3., 4.]), true);
    let c = t.matmul(a, b).unwrap();
    let g = t.backward(c).unwrap();
    assert_eq!(g.get(a).unwrap().data(), &[6., 8.]);
    assert_eq!(g.get(b).unwrap().data(), &[1., 2.]);
}
