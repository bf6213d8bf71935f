//! Multi-head attention, the position-wise feed-forward network and the two
//! residual attention blocks built from them:
//!
//! * the geometric detail block ([`gdp`]): farthest-point-sampled queries
//!   cross-attend over every input point, then the projected queries are
//!   appended, doubling the width;
//! * the self-feature block ([`sfa`]): self-attention whose projections widen
//!   the features by an integer ratio.
//!
//! Keys and values share one projection matrix.

use crate::cloud::{fps, PointCloud};
use crate::error::{bail, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// Epsilon used by every normalization in the blocks.
pub const NORM_EPS: f64 = 1e-6;

/// Attention weights as tape handles.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    /// c_q × c_out query projection.
    pub w_q: Var,
    /// c_kv × c_out projection shared by keys and values.
    pub w_kv: Var,
    /// c_out × c_out output projection applied after the heads are joined.
    pub w_o: Var,
    pub norm_gain: Var,
    pub norm_bias: Var,
    pub heads: usize,
}

/// Two affine layers `c → hidden → c` with a rectifier between them, plus the
/// gain/bias of the normalization that follows the residual sum.
#[derive(Debug, Clone, Copy)]
pub struct FfnParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub norm_gain: Var,
    pub norm_bias: Var,
}

/// Projects `q_in` and `kv_in`, attends, and applies the output projection.
pub fn multi_head<T: Real>(tape: &mut Tape<T>, q_in: Var, kv_in: Var, p: &AttentionParams) -> Result<Var> {
    let q = tape.matmul(q_in, p.w_q)?;
    let kv = tape.matmul(kv_in, p.w_kv)?;
    attend(tape, q, kv, p)
}

fn attend<T: Real>(tape: &mut Tape<T>, q: Var, kv: Var, p: &AttentionParams) -> Result<Var> {
    let heads = tape.multi_head_attention(q, kv, kv, p.heads)?;
    tape.matmul(heads, p.w_o)
}

pub fn ffn<T: Real>(tape: &mut Tape<T>, x: Var, p: &FfnParams) -> Result<Var> {
    let h = tape.matmul(x, p.w1)?;
    let h = tape.add_row(h, p.b1)?;
    let h = tape.relu(h)?;
    let o = tape.matmul(h, p.w2)?;
    tape.add_row(o, p.b2)
}

/// `Norm(F + FFN(F))` with `F = Norm(q + MultiHead(q, kv, kv))`.
fn residual_attention<T: Real>(
    tape: &mut Tape<T>,
    q: Var,
    kv: Var,
    attn: &AttentionParams,
    ff: &FfnParams,
) -> Result<Var> {
    let eps = T::of(NORM_EPS);
    let a = attend(tape, q, kv, attn)?;
    let s = tape.add(q, a)?;
    let f = tape.layer_norm(s, attn.norm_gain, attn.norm_bias, eps)?;
    let h = ffn(tape, f, ff)?;
    let s2 = tape.add(f, h)?;
    tape.layer_norm(s2, ff.norm_gain, ff.norm_bias, eps)
}

/// Result of a geometric-detail block.
#[derive(Debug, Clone)]
pub struct GdpOutput<T> {
    /// (n/d) × 2c features.
    pub features: Var,
    /// Coordinates of the sampled points, row-aligned with `features`.
    pub coords: PointCloud<T>,
    /// FPS selection into the input rows.
    pub indices: alloc::vec::Vec<usize>,
}

/// Geometric-detail block on n×c features `x` carried with their coordinates.
///
/// FPS on `coords` picks n/d query rows `Y`; `Q = Y·W_q` cross-attends over
/// `K = V = x·W_kv`; the output is `Concat(Norm(F + FFN(F)), Q)`.
pub fn gdp<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    coords: &PointCloud<T>,
    ratio: usize,
    fps_start: usize,
    attn: &AttentionParams,
    ff: &FfnParams,
) -> Result<GdpOutput<T>> {
    let (n, _) = tape.value(x).dims2()?;
    if coords.len() != n {
        bail!(Argument, "gdp: {} coordinates for {} feature rows", coords.len(), n);
    }
    if ratio == 0 || n % ratio != 0 {
        bail!(Config, "gdp: {} points not divisible by down-sampling ratio {}", n, ratio);
    }
    let sel = fps(coords, n / ratio, fps_start % n)?;
    let y = tape.gather_rows(x, &sel.indices)?;
    let q = tape.matmul(y, attn.w_q)?;
    let kv = tape.matmul(x, attn.w_kv)?;
    let f = residual_attention(tape, q, kv, attn, ff)?;
    let features = tape.concat_cols(&[f, q])?;
    Ok(GdpOutput {
        features,
        coords: coords.select(&sel.indices)?,
        indices: sel.indices,
    })
}

/// Self-feature block: `Q = x·W_q`, `K = V = x·W_kv` with both projections
/// widening c → u·c, output `Norm(F + FFN(F))` of shape n × u·c.
pub fn sfa<T: Real>(tape: &mut Tape<T>, x: Var, ratio: usize, attn: &AttentionParams, ff: &FfnParams) -> Result<Var> {
    let (_, c) = tape.value(x).dims2()?;
    let (_, out) = tape.value(attn.w_q).dims2()?;
    if ratio == 0 || out != ratio * c {
        bail!(Config, "sfa: projection width {} is not {} × {}", out, ratio, c);
    }
    let q = tape.matmul(x, attn.w_q)?;
    let kv = tape.matmul(x, attn.w_kv)?;
    residual_attention(tape, q, kv, attn, ff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type M = Vec<Vec<f64>>;

    fn rand_m(rng: &mut ChaCha8Rng, r: usize, c: usize) -> M {
        (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    fn to_t(m: &M) -> Tensor<f64> {
        Tensor::matrix(m.len(), m[0].len(), m.concat()).unwrap()
    }

    fn mm(a: &M, b: &M) -> M {
        a.iter()
            .map(|r| (0..b[0].len()).map(|j| r.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
            .collect()
    }

    fn add(a: &M, b: &M) -> M {
        a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
    }

    fn norm(a: &M, g: &[f64], b: &[f64]) -> M {
        a.iter()
            .map(|r| {
                let n = r.len() as f64;
                let mu = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
                let s = libm::sqrt(var + NORM_EPS);
                r.iter().enumerate().map(|(j, x)| (x - mu) / s * g[j] + b[j]).collect()
            })
            .collect()
    }

    fn attention(q: &M, kv: &M, heads: usize) -> M {
        let c = q[0].len();
        let dh = c / heads;
        let mut out = vec![vec![0.0; c]; q.len()];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for (i, qi) in q.iter().enumerate() {
                let logits: Vec<f64> = kv
                    .iter()
                    .map(|k| cols.clone().map(|j| qi[j] * k[j]).sum::<f64>() / libm::sqrt(dh as f64))
                    .collect();
                let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| libm::exp(l - top)).collect();
                let z: f64 = e.iter().sum();
                for (k, w) in kv.iter().zip(&e) {
                    for j in cols.clone() {
                        out[i][j] += w / z * k[j];
                    }
                }
            }
        }
        out
    }

    struct Block {
        wq: M,
        wkv: M,
        wo: M,
        g1: Vec<f64>,
        b1n: Vec<f64>,
        w1: M,
        b1: Vec<f64>,
        w2: M,
        b2: Vec<f64>,
        g2: Vec<f64>,
        b2n: Vec<f64>,
    }

    impl Block {
        fn random(rng: &mut ChaCha8Rng, c_in: usize, c: usize) -> Self {
            let mut v = |n: usize| rand_m(rng, 1, n).remove(0);
            let (g1, b1n, b1, b2, g2, b2n) = (v(c), v(c), v(2 * c), v(c), v(c), v(c));
            Block {
                wq: rand_m(rng, c_in, c),
                wkv: rand_m(rng, c_in, c),
                wo: rand_m(rng, c, c),
                g1,
                b1n,
                w1: rand_m(rng, c, 2 * c),
                b1,
                w2: rand_m(rng, 2 * c, c),
                b2,
                g2,
                b2n,
            }
        }

        fn bind(&self, t: &mut Tape<f64>, heads: usize) -> (AttentionParams, FfnParams) {
            let row = |t: &mut Tape<f64>, v: &[f64]| t.leaf(Tensor::vector(v), true);
            let attn = AttentionParams {
                w_q: t.leaf(to_t(&self.wq), true),
                w_kv: t.leaf(to_t(&self.wkv), true),
                w_o: t.leaf(to_t(&self.wo), true),
                norm_gain: row(t, &self.g1),
                norm_bias: row(t, &self.b1n),
                heads,
            };
            let ff = FfnParams {
                w1: t.leaf(to_t(&self.w1), true),
                b1: row(t, &self.b1),
                w2: t.leaf(to_t(&self.w2), true),
                b2: row(t, &self.b2),
                norm_gain: row(t, &self.g2),
                norm_bias: row(t, &self.b2n),
            };
            (attn, ff)
        }

        /// Plain-loop reference of the residual attention stack.
        fn reference(&self, q: &M, kv: &M, heads: usize) -> M {
            let f = norm(&add(q, &mm(&attention(q, kv, heads), &self.wo)), &self.g1, &self.b1n);
            let h: M = mm(&f, &self.w1)
                .iter()
                .map(|r| r.iter().zip(&self.b1).map(|(x, b)| (x + b).max(0.0)).collect())
                .collect();
            let o: M = mm(&h, &self.w2)
                .iter()
                .map(|r| r.iter().zip(&self.b2).map(|(x, b)| x + b).collect())
                .collect();
            norm(&add(&f, &o), &self.g2, &self.b2n)
        }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        let worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= tol, "max diff {worst}");
    }

    fn setup(n: usize, c: usize) -> (ChaCha8Rng, M, PointCloud<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_m(&mut rng, n, c);
        let pts = rand_m(&mut rng, n, 3);
        (rng, x, PointCloud::new(pts.concat()).unwrap())
    }

    #[test]
    fn gdp_matches_reference_and_shape() {
        let (n, c, d) = (16, 8, 4);
        let (mut rng, x, coords) = setup(n, c);
        let blk = Block::random(&mut rng, c, c);
        let mut t = Tape::new();
        let xv = t.leaf(to_t(&x), true);
        let (attn, ff) = blk.bind(&mut t, 2);
        let out = gdp(&mut t, xv, &coords, d, 0, &attn, &ff).unwrap();
        assert_eq!(t.value(out.features).shape(), &[n / d, 2 * c]);
        assert_eq!(out.indices, crate::cloud::fps(&coords, n / d, 0).unwrap().indices);
        assert_eq!(out.coords.len(), n / d);
        let y: M = out.indices.iter().map(|&i| x[i].clone()).collect();
        let q = mm(&y, &blk.wq);
        let f = blk.reference(&q, &mm(&x, &blk.wkv), 2);
        let want: Vec<f64> = f.iter().zip(&q).flat_map(|(a, b)| a.iter().chain(b).copied()).collect();
        close(t.value(out.features).data(), &want, 1e-12);
    }

    #[test]
    fn sfa_matches_reference_and_shape() {
        let (n, c, u) = (12, 4, 2);
        let (mut rng, x, _) = setup(n, c);
        let blk = Block::random(&mut rng, c, u * c);
        let mut t = Tape::new();
        let xv = t.leaf(to_t(&x), true);
        let (attn, ff) = blk.bind(&mut t, 4);
        let out = sfa(&mut t, xv, u, &attn, &ff).unwrap();
        assert_eq!(t.value(out).shape(), &[n, u * c]);
        let want = blk.reference(&mm(&x, &blk.wq), &mm(&x, &blk.wkv), 4);
        close(t.value(out).data(), &want.concat(), 1e-12);
    }

    #[test]
    fn block_contract_errors() {
        let (n, c) = (10, 4);
        let (mut rng, x, coords) = setup(n, c);
        let blk = Block::random(&mut rng, c, c);
        let mut t = Tape::new();
        let xv = t.leaf(to_t(&x), true);
        let (attn, ff) = blk.bind(&mut t, 2);
        assert!(gdp(&mut t, xv, &coords, 3, 0, &attn, &ff).is_err());
        assert!(gdp(&mut t, xv, &coords, 0, 0, &attn, &ff).is_err());
        let short = coords.select(&[0, 1]).unwrap();
        assert!(gdp(&mut t, xv, &short, 2, 0, &attn, &ff).is_err());
        assert!(sfa(&mut t, xv, 2, &attn, &ff).is_err());
        let bad_heads = AttentionParams { heads: 3, ..attn };
        assert!(sfa(&mut t, xv, 1, &bad_heads, &ff).is_err());
    }

    #[test]
    fn every_block_weight_receives_gradient() {
        let (n, c) = (8, 4);
        let (mut rng, x, coords) = setup(n, c);
        let blk = Block::random(&mut rng, c, c);
        let mut t = Tape::new();
        let xv = t.leaf(to_t(&x), true);
        let (attn, ff) = blk.bind(&mut t, 2);
        let out = gdp(&mut t, xv, &coords, 2, 1, &attn, &ff).unwrap();
        let w = t.constant(to_t(&rand_m(&mut rng, n / 2, 2 * c)));
        let p = t.mul(out.features, w).unwrap();
        let s = t.sum(p).unwrap();
        let g = t.backward(s).unwrap();
        for v in [attn.w_q, attn.w_kv, attn.w_o, attn.norm_gain, attn.norm_bias, ff.w1, ff.b1, ff.w2, ff.b2, ff.norm_gain, ff.norm_bias, xv] {
            assert!(g.get(v).unwrap().data().iter().any(|&x| x != 0.0));
        }
    }

    #[test]
    fn zero_weights_reduce_sfa_to_normalized_query() {
        let (n, c) = (5, 4);
        let (mut rng, x, _) = setup(n, c);
        let mut blk = Block::random(&mut rng, c, c);
        for m in [&mut blk.wkv, &mut blk.wo, &mut blk.w1, &mut blk.w2] {
            m.iter_mut().flatten().for_each(|v| *v = 0.0);
        }
        for v in [&mut blk.b1, &mut blk.b2, &mut blk.b1n, &mut blk.b2n] {
            v.iter_mut().for_each(|v| *v = 0.0);
        }
        blk.g1 = vec![1.0; c];
        blk.g2 = vec![1.0; c];
        let mut t = Tape::new();
        let xv = t.leaf(to_t(&x), true);
        let (attn, ff) = blk.bind(&mut t, 2);
        let out = sfa(&mut t, xv, 1, &attn, &ff).unwrap();
        let want = norm(&mm(&x, &blk.wq), &blk.g1, &blk.b1n);
        // the second normalization of an already normalized row moves it by O(eps)
        close(t.value(out).data(), &want.concat(), 1e-5);
    }

    proptest::proptest! {
        #[test]
        fn attention_ignores_key_order(seed in 0u64..1000, a in 1usize..6, b in 1usize..8, rot in 0usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = rand_m(&mut rng, a, 8);
            let kv = rand_m(&mut rng, b, 8);
            let mut shuffled = kv.clone();
            shuffled.rotate_left(rot % b);
            shuffled.reverse();
            let mut t = Tape::new();
            let qv = t.constant(to_t(&q));
            let k1 = t.constant(to_t(&kv));
            let k2 = t.constant(to_t(&shuffled));
            let o1 = t.multi_head_attention(qv, k1, k1, 2).unwrap();
            let o2 = t.multi_head_attention(qv, k2, k2, 2).unwrap();
            let (x, y) = (t.value(o1).data(), t.value(o2).data());
            proptest::prop_assert!(x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-12));
        }

        #[test]
        fn softmax_rows_sum_to_one(seed in 0u64..1000, r in 1usize..6, c in 1usize..12, spread in 0.1f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m: M = rand_m(&mut rng, r, c).into_iter().map(|row| row.into_iter().map(|v| v * spread).collect()).collect();
            let mut t = Tape::new();
            let x = t.constant(to_t(&m));
            let s = t.softmax_rows(x).unwrap();
            for row in t.value(s).data().chunks(c) {
                proptest::prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                proptest::prop_assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }
}
