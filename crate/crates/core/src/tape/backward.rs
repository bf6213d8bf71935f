use alloc::vec;
use alloc::vec::Vec;

use super::ops::{gemm_nn, gemm_nt, gemm_tn};
use super::{Op, Tape, Var};
use crate::cloud::ChamferVariant;
use crate::error::{bail, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Gradients of one scalar with respect to every node that requires them.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

struct Acc<'a, T> {
    tape: &'a Tape<T>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Acc<'_, T> {
    /// Mutable accumulator for `v`, or `None` if `v` needs no gradient.
    fn slot(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.tape.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.tape.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn add(&mut self, v: Var, g: impl Iterator<Item = T>) {
        if let Some(slot) = self.slot(v) {
            for (s, x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = &self.nodes[output.0];
        if out.value.len() != 1 {
            bail!(Contract, "backward from non-scalar of shape {:?}", out.value.shape());
        }
        let mut acc = Acc {
            tape: self,
            grads: vec![None; output.0 + 1],
        };
        if out.requires_grad {
            acc.grads[output.0] = Some(vec![T::one()]);
        }
        for idx in (0..=output.0).rev() {
            let Some(g) = acc.grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.backward_node(node, &g, &mut acc)?;
            acc.grads[idx] = Some(g);
        }
        let grads = acc
            .grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::new(self.nodes[i].value.shape(), d).expect("shape preserved")))
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &super::Node<T>, g: &[T], acc: &mut Acc<'_, T>) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b } => {
                let (m, k) = val(a).dims2()?;
                let n = node.value.dims2()?.1;
                let (ad, bd) = (val(a).data(), val(b).data());
                let faulty = self.faulty();
                if let Some(ga) = acc.slot(a) {
                    let before = faulty.then(|| ga.to_vec());
                    if trans_b {
                        // b is n×k: ga += g · b
                        gemm_nn(m, n, k, g, bd, T::one(), ga);
                    } else {
                        // b is k×n: ga += g · bᵀ
                        gemm_nt(m, n, k, g, bd, T::one(), ga);
                    }
                    if let Some(before) = before {
                        for (x, b) in ga.iter_mut().zip(before) {
                            *x = *x + *x - b;
                        }
                    }
                }
                if let Some(gb) = acc.slot(b) {
                    if trans_b {
                        // gb (n×k) += gᵀ · a
                        gemm_tn(n, m, k, g, ad, T::one(), gb);
                    } else {
                        // gb (k×n) += aᵀ · g
                        gemm_tn(k, m, n, ad, g, T::one(), gb);
                    }
                }
            }
            &Op::Transpose(x) => {
                let (r, c) = val(x).dims2()?;
                if let Some(gx) = acc.slot(x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                acc.add(a, g.iter().copied());
                acc.add(b, g.iter().copied());
            }
            &Op::Sub(a, b) => {
                acc.add(a, g.iter().copied());
                acc.add(b, g.iter().map(|&v| -v));
            }
            &Op::Mul(a, b) => {
                let (ad, bd) = (val(a).data(), val(b).data());
                acc.add(a, g.iter().zip(bd).map(|(&u, &w)| u * w));
                acc.add(b, g.iter().zip(ad).map(|(&u, &w)| u * w));
            }
            &Op::AddRow { x, bias } => {
                acc.add(x, g.iter().copied());
                if let Some(gb) = acc.slot(bias) {
                    let c = gb.len();
                    for row in g.chunks_exact(c) {
                        for (s, &v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                }
            }
            &Op::Scale(x, f) => acc.add(x, g.iter().map(|&v| v * f)),
            &Op::Relu(x) => {
                let xd = val(x).data();
                acc.add(
                    x,
                    g.iter()
                        .zip(xd)
                        .map(|(&u, &w)| if w > T::zero() { u } else { T::zero() }),
                );
            }
            &Op::Elementwise { x, df } => {
                let xd = val(x).data();
                acc.add(x, g.iter().zip(xd).map(|(&u, &w)| u * df(w)));
            }
            &Op::SoftmaxRows(x) => {
                let c = node.value.dims2()?.1;
                let y = node.value.data();
                if let Some(gx) = acc.slot(x) {
                    for ((gr, yr), out) in g.chunks_exact(c).zip(y.chunks_exact(c)).zip(gx.chunks_exact_mut(c)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            out[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = node.value.dims2()?.1;
                let gd = val(*gain).data();
                if let Some(gg) = acc.slot(*gain) {
                    for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(gb) = acc.slot(*bias) {
                    for gr in g.chunks_exact(c) {
                        for j in 0..c {
                            gb[j] += gr[j];
                        }
                    }
                }
                if let Some(gx) = acc.slot(*x) {
                    let n = T::of(c as f64);
                    for (i, (gr, hr)) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
                        let mut mean_d = T::zero();
                        let mut mean_dh = T::zero();
                        for j in 0..c {
                            let d = gr[j] * gd[j];
                            mean_d += d;
                            mean_dh += d * hr[j];
                        }
                        mean_d /= n;
                        mean_dh /= n;
                        let out = &mut gx[i * c..(i + 1) * c];
                        for j in 0..c {
                            let d = gr[j] * gd[j];
                            out[j] += inv_std[i] * (d - mean_d - hr[j] * mean_dh);
                        }
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let (r, total) = node.value.dims2()?;
                let mut off = 0;
                for &x in xs {
                    let w = val(x).dims2()?.1;
                    if let Some(gx) = acc.slot(x) {
                        for i in 0..r {
                            let src = &g[i * total + off..i * total + off + w];
                            for (s, &v) in gx[i * w..(i + 1) * w].iter_mut().zip(src) {
                                *s += v;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let len = val(x).len();
                    acc.add(x, g[off..off + len].iter().copied());
                    off += len;
                }
            }
            &Op::SliceCols { x, start } => {
                let (r, w) = node.value.dims2()?;
                let c = val(x).dims2()?.1;
                if let Some(gx) = acc.slot(x) {
                    for i in 0..r {
                        for j in 0..w {
                            gx[i * c + start + j] += g[i * w + j];
                        }
                    }
                }
            }
            &Op::Reshape(x) => acc.add(x, g.iter().copied()),
            Op::MaxOverRows { x, argmax } => {
                let c = argmax.len();
                if let Some(gx) = acc.slot(*x) {
                    for (j, &i) in argmax.iter().enumerate() {
                        gx[i * c + j] += g[j];
                    }
                }
            }
            &Op::TileRows { x, times } => {
                if let Some(gx) = acc.slot(x) {
                    let len = gx.len();
                    for t in 0..times {
                        for (s, &v) in gx.iter_mut().zip(&g[t * len..(t + 1) * len]) {
                            *s += v;
                        }
                    }
                }
            }
            &Op::RepeatRows { x, times } => {
                let c = val(x).dims2()?.1;
                if let Some(gx) = acc.slot(x) {
                    for (i, out) in gx.chunks_exact_mut(c).enumerate() {
                        for t in 0..times {
                            let src = &g[(i * times + t) * c..(i * times + t + 1) * c];
                            for (s, &v) in out.iter_mut().zip(src) {
                                *s += v;
                            }
                        }
                    }
                }
            }
            Op::GatherRows { x, indices } => {
                let c = val(*x).dims2()?.1;
                if let Some(gx) = acc.slot(*x) {
                    for (row, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            gx[i * c + j] += g[row * c + j];
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                let len = val(x).len();
                acc.add(x, core::iter::repeat_n(g[0], len));
            }
            &Op::Mean(x) => {
                let len = val(x).len();
                let v = g[0] / T::of(len as f64);
                acc.add(x, core::iter::repeat_n(v, len));
            }
            Op::MultiHead {
                q,
                k,
                v,
                heads,
                scale,
                probs,
            } => self.backward_attention(*q, *k, *v, *heads, *scale, probs, g, acc)?,
            Op::Chamfer {
                p,
                s,
                variant,
                p_nn,
                s_nn,
            } => {
                let (pd, sd) = (val(*p).data(), val(*s).data());
                let (n, m) = (p_nn.len(), s_nn.len());
                let g0 = g[0];
                // term(i, j) gradient w.r.t. the first point, scaled by `w`.
                let grad_of = |a: &[T], b: &[T], w: T| -> [T; 3] {
                    let diff = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                    let f = match variant {
                        ChamferVariant::L2 => w * T::of(2.0),
                        ChamferVariant::L1 => {
                            let d = (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
                            if d > T::zero() {
                                w / d
                            } else {
                                T::zero()
                            }
                        }
                    };
                    [diff[0] * f, diff[1] * f, diff[2] * f]
                };
                let mut gp = vec![T::zero(); n * 3];
                let mut gs = vec![T::zero(); m * 3];
                let wp = g0 / T::of(n as f64);
                for (i, &j) in p_nn.iter().enumerate() {
                    let d = grad_of(&pd[i * 3..i * 3 + 3], &sd[j * 3..j * 3 + 3], wp);
                    for c in 0..3 {
                        gp[i * 3 + c] += d[c];
                        gs[j * 3 + c] -= d[c];
                    }
                }
                let ws = g0 / T::of(m as f64);
                for (j, &i) in s_nn.iter().enumerate() {
                    let d = grad_of(&sd[j * 3..j * 3 + 3], &pd[i * 3..i * 3 + 3], ws);
                    for c in 0..3 {
                        gs[j * 3 + c] += d[c];
                        gp[i * 3 + c] -= d[c];
                    }
                }
                acc.add(*p, gp.into_iter());
                acc.add(*s, gs.into_iter());
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        scale: T,
        probs: &[T],
        g: &[T],
        acc: &mut Acc<'_, T>,
    ) -> Result<()> {
        let val = |x: Var| &self.nodes[x.0].value;
        let (a, c) = val(q).dims2()?;
        let b = val(k).dims2()?.0;
        let dh = c / heads;
        let cs = c as isize;
        let (qd, kd, vd) = (val(q).data(), val(k).data(), val(v).data());
        let mut gq = vec![T::zero(); a * c];
        let mut gk = vec![T::zero(); b * c];
        let mut gv = vec![T::zero(); b * c];
        let mut dp = vec![T::zero(); a * b];
        let bs = b as isize;
        for h in 0..heads {
            let off = h * dh;
            let p = &probs[h * a * b..(h + 1) * a * b];
            // dP = dO_h · v_hᵀ
            T::gemm(a, dh, b, T::one(), &g[off..], cs, 1, &vd[off..], 1, cs, T::zero(), &mut dp, bs, 1);
            // dv_h += Pᵀ · dO_h
            T::gemm(b, a, dh, T::one(), p, 1, bs, &g[off..], cs, 1, T::one(), &mut gv[off..], cs, 1);
            // dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded into dp
            for (dr, pr) in dp.chunks_exact_mut(b).zip(p.chunks_exact(b)) {
                let dot: T = dr.iter().zip(pr).map(|(&x, &y)| x * y).sum();
                for (d, &pv) in dr.iter_mut().zip(pr) {
                    *d = pv * (*d - dot);
                }
            }
            // dq_h += scale · dS · k_h ; dk_h += scale · dSᵀ · q_h
            T::gemm(a, b, dh, scale, &dp, bs, 1, &kd[off..], cs, 1, T::one(), &mut gq[off..], cs, 1);
            T::gemm(b, a, dh, scale, &dp, 1, bs, &qd[off..], cs, 1, T::one(), &mut gk[off..], cs, 1);
        }
        acc.add(q, gq.into_iter());
        acc.add(k, gk.into_iter());
        acc.add(v, gv.into_iter());
        Ok(())
    }
}
