//! Compute-heavy graph operations: products, convolution, normalisation and
//! resampling.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::kernels::conv::{im2col, ConvGeom};
use crate::kernels::gemm::{gemm, MatRef};
use crate::kernels::resize::{resize_plane, taps};
use crate::parallel;
use crate::real::Real;
use crate::tensor::{numel, Tensor};

pub(crate) struct MatMulDims {
    /// Number of independent products (1 when `b` is shared).
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// `b` is a single matrix applied to every batch item.
    pub shared_b: bool,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<MatMulDims> {
    let bad = || TensorError::mismatch("matmul", a, b);
    if a.len() < 2 || b.len() < 2 {
        return Err(bad());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (bk, n) = if trans_b {
        (b[b.len() - 1], b[b.len() - 2])
    } else {
        (b[b.len() - 2], b[b.len() - 1])
    };
    if k != bk {
        return Err(bad());
    }
    let lead_a = &a[..a.len() - 2];
    if b.len() == 2 {
        // shared right operand: fold the batch into the rows of `a`
        return Ok(MatMulDims {
            batch: 1,
            m: numel(lead_a) * m,
            k,
            n,
            shared_b: true,
        });
    }
    if lead_a != &b[..b.len() - 2] {
        return Err(bad());
    }
    Ok(MatMulDims {
        batch: numel(lead_a),
        m,
        k,
        n,
        shared_b: false,
    })
}

impl<T: Real> Graph<'_, T> {
    /// Matrix product over the last two axes. Leading axes are batch axes and
    /// must agree, unless `b` is a plain matrix, which is then shared.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` over the last two axes, without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let d = matmul_dims(&sa, &sb, trans_b)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); d.batch * d.m * d.n];
        let b_stride = if d.shared_b { 0 } else { d.k * d.n };
        parallel::for_each_chunk(&mut out, d.m * d.n, d.batch * d.m * d.k * d.n, |i, c| {
            let am = MatRef::row_major(&va[i * d.m * d.k..(i + 1) * d.m * d.k], d.m, d.k);
            let bs = &vb[i * b_stride..i * b_stride + d.k * d.n];
            let bm = if trans_b {
                MatRef::row_major(bs, d.n, d.k).t()
            } else {
                MatRef::row_major(bs, d.k, d.n)
            };
            gemm(am, bm, c, T::zero());
        });
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(d.n);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b }))
    }

    /// 2-D cross-correlation of `x: [B, C, H, W]` with `w: [K, C, k, k]` and
    /// an optional per-output-channel `bias: [K]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] {
            return Err(TensorError::mismatch("conv2d", &sx, &sw));
        }
        if stride == 0 {
            return Err(TensorError::dim("conv2d", "stride must be positive"));
        }
        let (b, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (kout, k) = (sw[0], sw[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel {k}x{k} larger than padded input {h}x{wd} (pad {pad})"),
            ));
        }
        if let Some(bv) = bias {
            if self.shape(bv) != [kout] {
                return Err(TensorError::mismatch("conv2d bias", &[kout], self.shape(bv)));
            }
        }
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (wd + 2 * pad - k) / stride + 1,
        };
        let plane = geom.col_cols();
        let xin = self.value(x).data();
        let wv = self.value(w).data();
        let bv = bias.map(|v| self.value(v).data());
        let mut out = vec![T::zero(); b * kout * plane];
        let work = b * kout * geom.col_rows() * plane;
        parallel::for_each_chunk(&mut out, kout * plane, work, |i, o| {
            let xi = &xin[i * c * h * wd..(i + 1) * c * h * wd];
            let wm = MatRef::row_major(wv, kout, geom.col_rows());
            if geom.is_pointwise() {
                gemm(wm, MatRef::row_major(xi, c, plane), o, T::zero());
            } else {
                let mut col = vec![T::zero(); geom.col_rows() * plane];
                im2col(xi, &geom, &mut col);
                gemm(wm, MatRef::row_major(&col, geom.col_rows(), plane), o, T::zero());
            }
            if let Some(bias) = bv {
                for (row, &bk) in o.chunks_mut(plane).zip(bias) {
                    row.iter_mut().for_each(|v| *v += bk);
                }
            }
        });
        let value = Tensor::new(vec![b, kout, geom.oh, geom.ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b: bias,
                geom,
            },
        ))
    }

    /// Batch normalisation of `[B, C, H, W]` using the batch's own statistics.
    /// Returns the output, the per-channel mean and the unbiased variance
    /// (for running-average bookkeeping).
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let shape = self.bn_check(x, gamma, beta)?;
        let (b, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
        let n = b * plane;
        let src = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for bi in 0..b {
                s += src[(bi * c + ch) * plane..(bi * c + ch + 1) * plane].iter().copied().sum();
            }
            let mu = s / T::lit(n as f64);
            let mut q = T::zero();
            for bi in 0..b {
                for &v in &src[(bi * c + ch) * plane..(bi * c + ch + 1) * plane] {
                    q += (v - mu) * (v - mu);
                }
            }
            mean[ch] = mu;
            var[ch] = q;
        }
        let invstd: Vec<T> = var
            .iter()
            .map(|&q| T::one() / (q / T::lit(n as f64) + T::lit(eps)).sqrt())
            .collect();
        let unbiased: Vec<T> = var
            .iter()
            .map(|&q| q / T::lit((n.max(2) - 1) as f64))
            .collect();
        let v = self.bn_apply(x, gamma, beta, mean.clone(), invstd, true);
        Ok((v, mean, unbiased))
    }

    /// Batch normalisation with fixed statistics (inference).
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let shape = self.bn_check(x, gamma, beta)?;
        if mean.len() != shape[1] || var.len() != shape[1] {
            return Err(TensorError::dim("batch_norm", "running statistics size"));
        }
        let invstd = var
            .iter()
            .map(|&v| T::one() / (v + T::lit(eps)).sqrt())
            .collect();
        Ok(self.bn_apply(x, gamma, beta, mean.to_vec(), invstd, false))
    }

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<Vec<usize>> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(TensorError::dim("batch_norm", format!("expected NCHW, got {shape:?}")));
        }
        for p in [gamma, beta] {
            if self.shape(p) != [shape[1]] {
                return Err(TensorError::mismatch("batch_norm", &shape, self.shape(p)));
            }
        }
        Ok(shape)
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        invstd: Vec<T>,
        batch_stats: bool,
    ) -> Var {
        let shape = self.shape(x).to_vec();
        let (c, plane) = (shape[1], shape[2] * shape[3]);
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for (i, (o, s)) in out.chunks_mut(plane).zip(src.chunks(plane)).enumerate() {
            let ch = i % c;
            let (mu, is, g, bb) = (mean[ch], invstd[ch], gv[ch], bv[ch]);
            for (d, &v) in o.iter_mut().zip(s) {
                *d = (v - mu) * is * g + bb;
            }
        }
        let value = Tensor::new(shape, out).expect("same shape");
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                invstd,
                batch_stats,
            },
        )
    }

    /// Normalises over the last axis, optionally followed by a learned
    /// scale/shift of that axis's size.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: f64,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("non-empty shape");
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != [d] {
                return Err(TensorError::mismatch("layer_norm", &shape, self.shape(p)));
            }
        }
        let src = self.value(x).data();
        let rows = src.len() / d;
        let gv = gamma.map(|g| self.value(g).data());
        let bv = beta.map(|b| self.value(b).data());
        let mut mean = Vec::with_capacity(rows);
        let mut invstd = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); src.len()];
        for (row, o) in src.chunks(d).zip(out.chunks_mut(d)) {
            let mu = row.iter().copied().sum::<T>() / T::lit(d as f64);
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / T::lit(d as f64);
            let is = T::one() / (var + T::lit(eps)).sqrt();
            for (j, (dst, &v)) in o.iter_mut().zip(row).enumerate() {
                let mut y = (v - mu) * is;
                if let Some(g) = gv {
                    y *= g[j];
                }
                if let Some(b) = bv {
                    y += b[j];
                }
                *dst = y;
            }
            mean.push(mu);
            invstd.push(is);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                invstd,
            },
        ))
    }

    /// Bilinear resampling of `[B, C, H, W]` to `[B, C, out_h, out_w]`
    /// (align-corners=false).
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(TensorError::dim("bilinear_resize", format!("expected NCHW, got {shape:?}")));
        }
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::dim("bilinear_resize", "output size must be positive"));
        }
        if shape[2] == out_h && shape[3] == out_w {
            let value = self.value(x).clone();
            return Ok(self.push(value, Op::Resize { x }));
        }
        let (h, w) = (shape[2], shape[3]);
        let rows = taps::<T>(h, out_h);
        let cols = taps::<T>(w, out_w);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); shape[0] * shape[1] * out_h * out_w];
        parallel::for_each_chunk(&mut out, out_h * out_w, src.len() * 4, |i, o| {
            resize_plane(&src[i * h * w..(i + 1) * h * w], w, &rows, &cols, o);
        });
        let value = Tensor::new(vec![shape[0], shape[1], out_h, out_w], out)?;
        Ok(self.push(value, Op::Resize { x }))
    }
}
