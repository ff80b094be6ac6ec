//! Vector-Jacobian products for every recorded operation.

use crate::graph::{inverse_axes, permute_tensor, split_at_axis, BinKind, Node, Op, UnKind, Var};
use crate::kernels::broadcast::{reduce_to, zip_map};
use crate::kernels::conv::{col2im, im2col};
use crate::kernels::gemm::{gemm, MatRef};
use crate::kernels::resize::{resize_plane_backward, taps};
use crate::ops::matmul_dims;
use crate::parallel;
use crate::real::Real;
use crate::tensor::Tensor;

fn accumulate<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    shape: &[usize],
    data: Vec<T>,
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let t = Tensor::new(shape.to_vec(), data).expect("gradient matches operand shape");
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

/// Pushes the gradient `g` of node `i` into the gradients of its inputs.
pub(crate) fn propagate<T: Real>(
    nodes: &[Node<T>],
    i: usize,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let out = &nodes[i].value;
    let val = |v: Var| &nodes[v.0].value;
    let needs = |v: Var| nodes[v.0].requires_grad;
    let gd = g.data();
    match &nodes[i].op {
        Op::Leaf | Op::Param(_) => {}
        Op::Binary { kind, a, b } => {
            let (ta, tb) = (val(*a), val(*b));
            let (sa, sb, so) = (ta.shape(), tb.shape(), out.shape());
            if needs(*a) {
                let full = match kind {
                    BinKind::Add | BinKind::Sub => gd.to_vec(),
                    BinKind::Mul => zip_map(so, gd, so, tb.data(), sb, |g, y| g * y),
                    BinKind::Div => zip_map(so, gd, so, tb.data(), sb, |g, y| g / y),
                };
                accumulate(nodes, grads, *a, sa, reduce_to(&full, so, sa));
            }
            if needs(*b) {
                let full = match kind {
                    BinKind::Add => gd.to_vec(),
                    BinKind::Sub => gd.iter().map(|&v| -v).collect(),
                    BinKind::Mul => zip_map(so, gd, so, ta.data(), sa, |g, x| g * x),
                    BinKind::Div => {
                        // d(x/y)/dy = -out / y
                        let q = zip_map(so, out.data(), so, tb.data(), sb, |o, y| o / y);
                        gd.iter().zip(&q).map(|(&g, &q)| -g * q).collect()
                    }
                };
                accumulate(nodes, grads, *b, sb, reduce_to(&full, so, sb));
            }
        }
        Op::AddScalar(x) => accumulate(nodes, grads, *x, out.shape(), gd.to_vec()),
        Op::MulScalar(x, c) => {
            accumulate(nodes, grads, *x, out.shape(), gd.iter().map(|&v| v * *c).collect())
        }
        Op::Unary { kind, x } => {
            let xv = val(*x).data();
            let od = out.data();
            let d: Vec<T> = match kind {
                UnKind::Relu => gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect(),
                UnKind::Sigmoid => gd
                    .iter()
                    .zip(od)
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect(),
                UnKind::Log => gd.iter().zip(xv).map(|(&g, &x)| g / x).collect(),
                UnKind::Exp => gd.iter().zip(od).map(|(&g, &y)| g * y).collect(),
                UnKind::Clamp(lo, hi) => {
                    let (lo, hi) = (T::lit(*lo), T::lit(*hi));
                    gd.iter()
                        .zip(xv)
                        .map(|(&g, &x)| if x >= lo && x <= hi { g } else { T::zero() })
                        .collect()
                }
            };
            accumulate(nodes, grads, *x, out.shape(), d);
        }
        Op::MatMul { a, b, trans_b } => matmul_backward(nodes, grads, g, *a, *b, *trans_b),
        Op::Reshape(x) => accumulate(nodes, grads, *x, val(*x).shape(), gd.to_vec()),
        Op::Permute { x, axes } => {
            let back = permute_tensor(g, &inverse_axes(axes));
            accumulate(nodes, grads, *x, val(*x).shape(), back.into_data());
        }
        Op::Concat { xs, axis } => {
            let (outer, total, inner) = split_at_axis(out.shape(), *axis);
            let mut offset = 0;
            for &x in xs {
                let s = val(x).shape();
                let len = s[*axis];
                if needs(x) {
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&gd[base..base + len * inner]);
                    }
                    accumulate(nodes, grads, x, s, d);
                }
                offset += len;
            }
        }
        Op::Narrow { x, axis, start } => {
            let s = val(*x).shape();
            let (outer, n, inner) = split_at_axis(s, *axis);
            let len = out.shape()[*axis];
            let mut d = vec![T::zero(); val(*x).numel()];
            for o in 0..outer {
                let dst = (o * n + start) * inner;
                d[dst..dst + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(nodes, grads, *x, s, d);
        }
        Op::Softmax { x, axis } => {
            let (outer, n, inner) = split_at_axis(out.shape(), *axis);
            let y = out.data();
            let mut d = vec![T::zero(); y.len()];
            for o in 0..outer {
                for k in 0..inner {
                    let base = o * n * inner + k;
                    let dot: T = (0..n).map(|j| gd[base + j * inner] * y[base + j * inner]).sum();
                    for j in 0..n {
                        let p = base + j * inner;
                        d[p] = y[p] * (gd[p] - dot);
                    }
                }
            }
            accumulate(nodes, grads, *x, out.shape(), d);
        }
        Op::Sum(x) => {
            let s = val(*x).shape();
            accumulate(nodes, grads, *x, s, vec![gd[0]; val(*x).numel()]);
        }
        Op::SumAxis { x, axis } => {
            let s = val(*x).shape();
            let (outer, n, inner) = split_at_axis(s, *axis);
            let mut d = Vec::with_capacity(val(*x).numel());
            for o in 0..outer {
                for _ in 0..n {
                    d.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(nodes, grads, *x, s, d);
        }
        Op::Conv2d { x, w, b, geom } => {
            let geom = *geom;
            let (sx, sw) = (val(*x).shape(), val(*w).shape());
            let (batch, kout) = (sx[0], sw[0]);
            let plane = geom.col_cols();
            let rows = geom.col_rows();
            let in_size = geom.c * geom.h * geom.w;
            let xd = val(*x).data();
            let wd = val(*w).data();
            let (want_x, want_w) = (needs(*x), needs(*w));
            let work = 2 * batch * kout * rows * plane;
            // per-item partials, reduced in order below
            let parts = parallel::map_collect(batch, work, |i| {
                let go = MatRef::row_major(&gd[i * kout * plane..(i + 1) * kout * plane], kout, plane);
                let xi = &xd[i * in_size..(i + 1) * in_size];
                let col_owned;
                let col: &[T] = if geom.is_pointwise() {
                    xi
                } else if want_w {
                    let mut c = vec![T::zero(); rows * plane];
                    im2col(xi, &geom, &mut c);
                    col_owned = c;
                    &col_owned
                } else {
                    &[]
                };
                let dw = want_w.then(|| {
                    let mut dw = vec![T::zero(); kout * rows];
                    gemm(go, MatRef::row_major(col, rows, plane).t(), &mut dw, T::zero());
                    dw
                });
                let dx = want_x.then(|| {
                    let wm = MatRef::row_major(wd, kout, rows).t();
                    if geom.is_pointwise() {
                        let mut dx = vec![T::zero(); in_size];
                        gemm(wm, go, &mut dx, T::zero());
                        dx
                    } else {
                        let mut dcol = vec![T::zero(); rows * plane];
                        gemm(wm, go, &mut dcol, T::zero());
                        let mut dx = vec![T::zero(); in_size];
                        col2im(&dcol, &geom, &mut dx);
                        dx
                    }
                });
                (dx, dw)
            });
            if want_x {
                let mut dx = Vec::with_capacity(batch * in_size);
                for (p, _) in &parts {
                    dx.extend_from_slice(p.as_ref().expect("computed"));
                }
                accumulate(nodes, grads, *x, sx, dx);
            }
            if want_w {
                let mut dw = vec![T::zero(); kout * rows];
                for (_, p) in &parts {
                    for (d, &v) in dw.iter_mut().zip(p.as_ref().expect("computed")) {
                        *d += v;
                    }
                }
                accumulate(nodes, grads, *w, sw, dw);
            }
            if let Some(bv) = b {
                if needs(*bv) {
                    let mut db = vec![T::zero(); kout];
                    for (j, row) in gd.chunks(plane).enumerate() {
                        db[j % kout] += row.iter().copied().sum();
                    }
                    accumulate(nodes, grads, *bv, &[kout], db);
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            invstd,
            batch_stats,
        } => {
            let s = val(*x).shape();
            let (batch, c, plane) = (s[0], s[1], s[2] * s[3]);
            let n = T::lit((batch * plane) as f64);
            let xd = val(*x).data();
            let gam = val(*gamma).data();
            // per channel: sum(dy), sum(dy * xhat)
            let mut sdy = vec![T::zero(); c];
            let mut sdyx = vec![T::zero(); c];
            for (j, (gr, xr)) in gd.chunks(plane).zip(xd.chunks(plane)).enumerate() {
                let ch = j % c;
                for (&gv, &xv) in gr.iter().zip(xr) {
                    sdy[ch] += gv;
                    sdyx[ch] += gv * (xv - mean[ch]) * invstd[ch];
                }
            }
            if needs(*x) {
                let mut dx = vec![T::zero(); xd.len()];
                for (j, ((dr, gr), xr)) in dx
                    .chunks_mut(plane)
                    .zip(gd.chunks(plane))
                    .zip(xd.chunks(plane))
                    .enumerate()
                {
                    let ch = j % c;
                    let k = gam[ch] * invstd[ch];
                    for ((d, &gv), &xv) in dr.iter_mut().zip(gr).zip(xr) {
                        *d = if *batch_stats {
                            let xhat = (xv - mean[ch]) * invstd[ch];
                            k * (gv - sdy[ch] / n - xhat * sdyx[ch] / n)
                        } else {
                            k * gv
                        };
                    }
                }
                accumulate(nodes, grads, *x, s, dx);
            }
            accumulate(nodes, grads, *gamma, &[c], sdyx);
            accumulate(nodes, grads, *beta, &[c], sdy);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            mean,
            invstd,
        } => {
            let s = val(*x).shape();
            let d = *s.last().expect("non-empty");
            let xd = val(*x).data();
            let gam = gamma.map(|v| val(v).data());
            let mut dgamma = vec![T::zero(); d];
            let mut dbeta = vec![T::zero(); d];
            let mut dx = vec![T::zero(); xd.len()];
            let dn = T::lit(d as f64);
            for (r, ((xr, gr), dr)) in xd
                .chunks(d)
                .zip(gd.chunks(d))
                .zip(dx.chunks_mut(d))
                .enumerate()
            {
                let (mu, is) = (mean[r], invstd[r]);
                let mut s1 = T::zero();
                let mut s2 = T::zero();
                for j in 0..d {
                    let xhat = (xr[j] - mu) * is;
                    dgamma[j] += gr[j] * xhat;
                    dbeta[j] += gr[j];
                    let dxhat = gam.map_or(gr[j], |gm| gr[j] * gm[j]);
                    s1 += dxhat;
                    s2 += dxhat * xhat;
                }
                for j in 0..d {
                    let xhat = (xr[j] - mu) * is;
                    let dxhat = gam.map_or(gr[j], |gm| gr[j] * gm[j]);
                    dr[j] = is * (dxhat - s1 / dn - xhat * s2 / dn);
                }
            }
            accumulate(nodes, grads, *x, s, dx);
            if let Some(gv) = gamma {
                accumulate(nodes, grads, *gv, &[d], dgamma);
            }
            if let Some(bv) = beta {
                accumulate(nodes, grads, *bv, &[d], dbeta);
            }
        }
        Op::Resize { x } => {
            let s = val(*x).shape();
            let (h, w) = (s[2], s[3]);
            let (oh, ow) = (out.shape()[2], out.shape()[3]);
            if (h, w) == (oh, ow) {
                accumulate(nodes, grads, *x, s, gd.to_vec());
                return;
            }
            let rows = taps::<T>(h, oh);
            let cols = taps::<T>(w, ow);
            let mut dx = vec![T::zero(); val(*x).numel()];
            parallel::for_each_chunk(&mut dx, h * w, gd.len() * 4, |p, d| {
                resize_plane_backward(&gd[p * oh * ow..(p + 1) * oh * ow], w, &rows, &cols, d);
            });
            accumulate(nodes, grads, *x, s, dx);
        }
        Op::Gather { table, ids } => {
            let s = val(*table).shape();
            let d = s[1];
            let mut dt = vec![T::zero(); val(*table).numel()];
            for (r, &id) in ids.iter().enumerate() {
                for (a, &v) in dt[id * d..(id + 1) * d].iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                    *a += v;
                }
            }
            accumulate(nodes, grads, *table, s, dt);
        }
    }
}

fn matmul_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    g: &Tensor<T>,
    a: Var,
    b: Var,
    trans_b: bool,
) {
    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
    let d = matmul_dims(ta.shape(), tb.shape(), trans_b).expect("validated in forward");
    let (ad, bd, gd) = (ta.data(), tb.data(), g.data());
    let (mk, kn, mn) = (d.m * d.k, d.k * d.n, d.m * d.n);
    let b_stride = if d.shared_b { 0 } else { kn };
    let bmat = |i: usize| {
        let bs = &bd[i * b_stride..i * b_stride + kn];
        if trans_b {
            MatRef::row_major(bs, d.n, d.k).t()
        } else {
            MatRef::row_major(bs, d.k, d.n)
        }
    };
    let work = d.batch * d.m * d.k * d.n;
    if nodes[a.0].requires_grad {
        // dA = dC · Bᵀ
        let mut da = vec![T::zero(); d.batch * mk];
        parallel::for_each_chunk(&mut da, mk, work, |i, c| {
            let gm = MatRef::row_major(&gd[i * mn..(i + 1) * mn], d.m, d.n);
            gemm(gm, bmat(i).t(), c, T::zero());
        });
        accumulate(nodes, grads, a, ta.shape(), da);
    }
    if nodes[b.0].requires_grad {
        // dB = Aᵀ · dC   (or dCᵀ · A when b is stored transposed)
        let mut db = vec![T::zero(); d.batch.max(1) * kn];
        let chunk = if d.shared_b { db.len() } else { kn };
        parallel::for_each_chunk(&mut db, chunk, work, |i, c| {
            let am = MatRef::row_major(&ad[i * mk..(i + 1) * mk], d.m, d.k);
            let gm = MatRef::row_major(&gd[i * mn..(i + 1) * mn], d.m, d.n);
            if trans_b {
                gemm(gm.t(), am, c, T::zero());
            } else {
                gemm(am.t(), gm, c, T::zero());
            }
        });
        accumulate(nodes, grads, b, tb.shape(), db);
    }
}
