use alloc::vec;
use alloc::vec::Vec;

use super::{Op, Tape, Var};
use crate::cloud::{self, ChamferVariant};
use crate::error::{bail, Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// `c = a (m×k) · b (k×n) + beta·c`, all row-major.
pub(crate) fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `c = a (m×k) · bᵀ` where `b` is stored row-major as n×k.
pub(crate) fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1);
}

/// `c = aᵀ · b` where `a` is stored row-major as k×m and `b` as k×n.
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm(m, k, n, T::one(), a, 1, m as isize, b, n as isize, 1, beta, c, n as isize, 1);
}

/// In-place numerically stable softmax of one row.
pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

impl<T: Real> Tape<T> {
    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        t.dims2()
            .map_err(|_| Error::dim(op, t.shape(), &[0, 0]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    /// Matrix product `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), T::zero(), &mut out);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul { a, b, trans_b: false }, "matmul")
    }

    /// Matrix product `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(m, k, n, self.value(a).data(), self.value(b).data(), T::zero(), &mut out);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul { a, b, trans_b: true }, "matmul_nt")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "transpose")?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(Tensor::matrix(c, r, out)?, Op::Transpose(x), "transpose")
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape(), data)?;
        self.push(value, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a length-`c` bias vector to every row of an m×c matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.dims2(x, "add_row")?;
        let tb = self.value(bias);
        if tb.len() != c {
            return Err(Error::dim("add_row", self.value(x).shape(), tb.shape()));
        }
        let b = tb.data();
        let tx = self.value(x);
        let data = tx
            .data()
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &w)| v + w))
            .collect();
        let value = Tensor::new(tx.shape(), data)?;
        self.push(value, Op::AddRow { x, bias }, "add_row")
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor), "scale")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x), "relu")
    }

    /// Applies `f` elementwise with derivative `df` evaluated at the input.
    pub fn elementwise(&mut self, x: Var, f: fn(T) -> T, df: fn(T) -> T) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(value, Op::Elementwise { x, df }, "elementwise")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, c) = self.dims2(x, "softmax_rows")?;
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        self.push(value, Op::SoftmaxRows(x), "softmax_rows")
    }

    /// Per-row normalization to zero mean and unit variance followed by the
    /// per-channel affine `gain`, `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            bail!(Argument, "layer_norm eps must be positive");
        }
        let (r, c) = self.dims2(x, "layer_norm")?;
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.len() != c || tb.len() != c {
            return Err(Error::dim("layer_norm", self.value(x).shape(), tg.shape()));
        }
        let (g, b) = (tg.data(), tb.data());
        let src = self.value(x).data();
        let n = T::of(c as f64);
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            "layer_norm",
        )
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            bail!(Argument, "concat_cols of nothing");
        };
        let (r, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (rx, cx) = self.dims2(x, "concat_cols")?;
            if rx != r {
                return Err(Error::dim("concat_cols", self.value(first).shape(), self.value(x).shape()));
            }
            widths.push(cx);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::matrix(r, total, out)?, Op::ConcatCols(xs.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            bail!(Argument, "concat_rows of nothing");
        };
        let (_, c) = self.dims2(first, "concat_rows")?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let (rx, cx) = self.dims2(x, "concat_rows")?;
            if cx != c {
                return Err(Error::dim("concat_rows", self.value(first).shape(), self.value(x).shape()));
            }
            rows += rx;
            out.extend_from_slice(self.value(x).data());
        }
        self.push(Tensor::matrix(rows, c, out)?, Op::ConcatRows(xs.to_vec()), "concat_rows")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if start >= end || end > c {
            bail!(Argument, "slice_cols {}..{} out of range for {} columns", start, end, c);
        }
        let src = self.value(x).data();
        let out = (0..r)
            .flat_map(|i| src[i * c + start..i * c + end].iter().copied())
            .collect();
        self.push(Tensor::matrix(r, end - start, out)?, Op::SliceCols { x, start }, "slice_cols")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push(value, Op::Reshape(x), "reshape")
    }

    /// Column-wise maximum of an n×c matrix, as a 1×c matrix. Ties pick the
    /// lowest row.
    pub fn max_over_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "max_over_rows")?;
        let src = self.value(x).data();
        let mut argmax = vec![0usize; c];
        let mut out = src[..c].to_vec();
        for i in 1..r {
            for j in 0..c {
                let v = src[i * c + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        self.push(Tensor::matrix(1, c, out)?, Op::MaxOverRows { x, argmax }, "max_over_rows")
    }

    /// Stacks `times` copies of the whole matrix vertically.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "tile_rows")?;
        if times == 0 {
            bail!(Argument, "tile_rows by zero");
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * c * times);
        for _ in 0..times {
            out.extend_from_slice(src);
        }
        self.push(Tensor::matrix(r * times, c, out)?, Op::TileRows { x, times }, "tile_rows")
    }

    /// Repeats every row `times` times in place: rows `a, b` become `a, a, b, b`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "repeat_rows")?;
        if times == 0 {
            bail!(Argument, "repeat_rows by zero");
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * c * times);
        for row in src.chunks_exact(c) {
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        self.push(Tensor::matrix(r * times, c, out)?, Op::RepeatRows { x, times }, "repeat_rows")
    }

    /// Selects rows by index; the backward rule scatter-adds into the source.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(x, "gather_rows")?;
        if indices.is_empty() {
            bail!(Argument, "gather_rows with no indices");
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            bail!(Argument, "gather_rows index {} out of range for {} rows", bad, r);
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::matrix(indices.len(), c, out)?;
        self.push(
            value,
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            "gather_rows",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::of(t.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), "mean")
    }

    /// Scaled dot-product attention over `heads` column groups.
    ///
    /// `q` is a×c, `k` and `v` are b×c. Head `h` uses columns
    /// `h·c/heads..(h+1)·c/heads` of all three and writes the same columns
    /// of the a×c output: `softmax(q_h k_hᵀ / √(c/heads)) v_h`.
    pub fn multi_head_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (a, c) = self.dims2(q, "multi_head_attention")?;
        let (b, ck) = self.dims2(k, "multi_head_attention")?;
        let (bv, cv) = self.dims2(v, "multi_head_attention")?;
        if ck != c || cv != c || bv != b {
            return Err(Error::dim("multi_head_attention", self.value(q).shape(), self.value(k).shape()));
        }
        if heads == 0 || c % heads != 0 {
            bail!(Config, "{} channels not divisible into {} heads", c, heads);
        }
        let dh = c / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); heads * a * b];
        let mut out = vec![T::zero(); a * c];
        let cs = c as isize;
        for h in 0..heads {
            let off = h * dh;
            let p = &mut probs[h * a * b..(h + 1) * a * b];
            // logits = scale · q_h · k_hᵀ
            T::gemm(a, dh, b, scale, &qd[off..], cs, 1, &kd[off..], 1, cs, T::zero(), p, b as isize, 1);
            for row in p.chunks_exact_mut(b) {
                softmax_in_place(row);
            }
            T::gemm(a, b, dh, T::one(), p, b as isize, 1, &vd[off..], cs, 1, T::zero(), &mut out[off..], cs, 1);
        }
        let value = Tensor::matrix(a, c, out)?;
        self.push(
            value,
            Op::MultiHead {
                q,
                k,
                v,
                heads,
                scale,
                probs,
            },
            "multi_head_attention",
        )
    }

    /// Chamfer distance between two n×3 / m×3 point sets: the sum of the two
    /// directional mean nearest-neighbour distances.
    pub fn chamfer(&mut self, p: Var, s: Var, variant: ChamferVariant) -> Result<Var> {
        let (n, cp) = self.dims2(p, "chamfer")?;
        let (m, cs) = self.dims2(s, "chamfer")?;
        if cp != 3 || cs != 3 {
            return Err(Error::dim("chamfer", self.value(p).shape(), self.value(s).shape()));
        }
        let nn = cloud::nearest_pairs(self.value(p).data(), self.value(s).data());
        let dist = |d2: T| match variant {
            ChamferVariant::L1 => d2.sqrt(),
            ChamferVariant::L2 => d2,
        };
        let forward = nn.p_d2.iter().map(|&d| dist(d)).sum::<T>() / T::of(n as f64);
        let backward = nn.s_d2.iter().map(|&d| dist(d)).sum::<T>() / T::of(m as f64);
        self.push(
            Tensor::scalar(forward + backward),
            Op::Chamfer {
                p,
                s,
                variant,
                p_nn: nn.p_nn,
                s_nn: nn.s_nn,
            },
            "chamfer",
        )
    }
}
