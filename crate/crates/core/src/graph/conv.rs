use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::{gemm, MatView, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `[lo, hi)` whose input column `ox * stride + kx - pad`
    /// lies inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride);
        let hi = if self.w + self.pad > kx { ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.wo) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Unfolds one image `[cin, h, w]` into rows of `cols` (`[cin*k*k, ...]`
    /// with row stride `ld`), writing `ho*wo` entries per row from `offset`.
    fn im2col<S: Scalar>(&self, img: &[S], cols: &mut [S], offset: usize, ld: usize) {
        let p = self.out_pixels();
        for c in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * ld + offset..row * ld + offset + p];
                    let (lo, hi) = self.valid_cols(kx);
                    for oy in 0..self.ho {
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h || lo >= hi {
                            line.fill(S::zero());
                            continue;
                        }
                        line[..lo].fill(S::zero());
                        line[hi..].fill(S::zero());
                        let src = &img[(c * self.h + iy as usize) * self.w..];
                        let ix0 = lo * self.stride + kx - self.pad;
                        if self.stride == 1 {
                            line[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                        } else {
                            for (i, v) in line[lo..hi].iter_mut().enumerate() {
                                *v = src[ix0 + i * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): accumulates columns back into an image.
    fn col2im<S: Scalar>(&self, cols: &[S], offset: usize, ld: usize, img: &mut [S]) {
        let p = self.out_pixels();
        for c in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * ld + offset..row * ld + offset + p];
                    let (lo, hi) = self.valid_cols(kx);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        let dst = &mut img[(c * self.h + iy as usize) * self.w..];
                        let ix0 = lo * self.stride + kx - self.pad;
                        for (i, v) in src[oy * self.wo + lo..oy * self.wo + hi].iter().enumerate() {
                            dst[ix0 + i * self.stride] += *v;
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Graph<S> {
    /// 2-D convolution of `[N, Cin, H, W]` with `[Cout, Cin, k, k]` weights
    /// and zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(Error::shape("conv2d", &[ws.first().copied().unwrap_or(0), xs.get(1).copied().unwrap_or(0), 3, 3], &ws));
        }
        let (n, cout, k) = (xs[0], ws[0], ws[2]);
        if stride == 0 || xs[2] + 2 * pad < k || xs[3] + 2 * pad < k {
            return Err(Error::config(format!("conv2d: kernel {k} does not fit input {xs:?} with padding {pad}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape("conv2d bias", &[cout], self.shape(b)));
            }
        }
        let geom = ConvGeom {
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            k,
            stride,
            pad,
            ho: (xs[2] + 2 * pad - k) / stride + 1,
            wo: (xs[3] + 2 * pad - k) / stride + 1,
        };
        let (kk, p) = (geom.patch(), geom.out_pixels());
        let in_img = geom.cin * geom.h * geom.w;
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let mut y = vec![S::zero(); n * cout * p];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for s in 0..n {
                for co in 0..cout {
                    y[(s * cout + co) * p..(s * cout + co + 1) * p].fill(bd[co]);
                }
            }
        }
        // all samples side by side: cols is [kk, n*p], one gemm amortises packing
        let np = n * p;
        let mut cols = vec![S::zero(); kk * np];
        for s in 0..n {
            geom.im2col(&xv.data()[s * in_img..(s + 1) * in_img], &mut cols, s * p, np);
        }
        let mut prod = vec![S::zero(); cout * np];
        gemm(S::one(), wv.data(), MatView::row_major(0, cout, kk), &cols, MatView::row_major(0, kk, np), S::zero(), &mut prod, MatView::row_major(0, cout, np));
        drop(cols);
        for s in 0..n {
            for co in 0..cout {
                let dst = &mut y[(s * cout + co) * p..(s * cout + co + 1) * p];
                for (d, v) in dst.iter_mut().zip(&prod[co * np + s * p..co * np + (s + 1) * p]) {
                    *d += *v;
                }
            }
        }
        drop(prod);
        let out = Tensor::from_parts(vec![n, cout, geom.ho, geom.wo], y);
        let mut parents = vec![x, w];
        parents.extend(b);
        let has_bias = b.is_some();
        self.push(
            "conv2d",
            out,
            &parents,
            Box::new(move |g| {
                let gd = g.data();
                let mut dx = vec![S::zero(); xv.numel()];
                let mut dw = vec![S::zero(); wv.numel()];
                let np = n * p;
                let mut gcols = vec![S::zero(); cout * np];
                for s in 0..n {
                    for co in 0..cout {
                        gcols[co * np + s * p..co * np + (s + 1) * p].copy_from_slice(&gd[(s * cout + co) * p..(s * cout + co + 1) * p]);
                    }
                }
                let mut cols = vec![S::zero(); kk * np];
                for s in 0..n {
                    geom.im2col(&xv.data()[s * in_img..(s + 1) * in_img], &mut cols, s * p, np);
                }
                let gview = MatView::row_major(0, cout, np);
                gemm(S::one(), &gcols, gview, &cols, MatView::row_major(0, kk, np).t(), S::zero(), &mut dw, MatView::row_major(0, cout, kk));
                // reuse the buffer for column gradients
                let mut dcols = cols;
                gemm(S::one(), wv.data(), MatView::row_major(0, cout, kk).t(), &gcols, gview, S::zero(), &mut dcols, MatView::row_major(0, kk, np));
                for s in 0..n {
                    geom.col2im(&dcols, s * p, np, &mut dx[s * in_img..(s + 1) * in_img]);
                }
                let mut grads = vec![
                    Some(Tensor::from_parts(xv.shape().to_vec(), dx)),
                    Some(Tensor::from_parts(wv.shape().to_vec(), dw)),
                ];
                if has_bias {
                    let mut db = vec![S::zero(); cout];
                    for s in 0..n {
                        for (co, d) in db.iter_mut().enumerate() {
                            *d += gd[(s * cout + co) * p..(s * cout + co + 1) * p].iter().copied().sum::<S>();
                        }
                    }
                    grads.push(Some(Tensor::from_parts(vec![cout], db)));
                }
                Ok(grads)
            }),
        )
    }

    /// Nearest-neighbour 2x upsampling of `[N, C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::config(format!("upsample2x expects rank 4, got {xs:?}")));
        }
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let xd = self.value(x).data();
        let mut y = vec![S::zero(); planes * 4 * h * w];
        for pl in 0..planes {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    y[(pl * 2 * h + i) * 2 * w + j] = xd[(pl * h + i / 2) * w + j / 2];
                }
            }
        }
        let out = Tensor::from_parts(vec![xs[0], xs[1], 2 * h, 2 * w], y);
        self.push(
            "upsample2x",
            out,
            &[x],
            Box::new(move |g| {
                let gd = g.data();
                let mut dx = vec![S::zero(); planes * h * w];
                for pl in 0..planes {
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            dx[(pl * h + i / 2) * w + j / 2] += gd[(pl * 2 * h + i) * 2 * w + j];
                        }
                    }
                }
                Ok(vec![Some(Tensor::from_parts(xs.clone(), dx))])
            }),
        )
    }

    /// Feature-wise modulation `x * (1 + scale) + shift` of `[B*F, C, ...]`
    /// where `ss` is `[B, 2C]` holding `[scale | shift]` per batch element and
    /// is shared by the `F` frames of that element.
    pub fn film(&mut self, x: Var, ss: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ss_shape = self.shape(ss).to_vec();
        if xs.len() < 2 || ss_shape.len() != 2 || ss_shape[1] != 2 * xs[1] || !xs[0].is_multiple_of(ss_shape[0]) {
            return Err(Error::shape("film", &[xs.first().copied().unwrap_or(0), 2 * xs.get(1).copied().unwrap_or(0)], &ss_shape));
        }
        let (n, c) = (xs[0], xs[1]);
        let frames = n / ss_shape[0];
        let spatial: usize = xs[2..].iter().product();
        let xv = self.value(x).clone();
        let sv = self.value(ss).clone();
        let mut y = vec![S::zero(); xv.numel()];
        {
            let (xd, sd) = (xv.data(), sv.data());
            for s in 0..n {
                let b = s / frames;
                for ch in 0..c {
                    let scale = S::one() + sd[b * 2 * c + ch];
                    let shift = sd[b * 2 * c + c + ch];
                    let base = (s * c + ch) * spatial;
                    for i in base..base + spatial {
                        y[i] = xd[i] * scale + shift;
                    }
                }
            }
        }
        let out = Tensor::from_parts(xs.clone(), y);
        self.push(
            "film",
            out,
            &[x, ss],
            Box::new(move |g| {
                let (gd, xd, sd) = (g.data(), xv.data(), sv.data());
                let mut dx = vec![S::zero(); xd.len()];
                let mut dss = vec![S::zero(); sd.len()];
                for s in 0..n {
                    let b = s / frames;
                    for ch in 0..c {
                        let scale = S::one() + sd[b * 2 * c + ch];
                        let base = (s * c + ch) * spatial;
                        let mut dscale = S::zero();
                        let mut dshift = S::zero();
                        for i in base..base + spatial {
                            dx[i] = gd[i] * scale;
                            dscale += gd[i] * xd[i];
                            dshift += gd[i];
                        }
                        dss[b * 2 * c + ch] += dscale;
                        dss[b * 2 * c + c + ch] += dshift;
                    }
                }
                Ok(vec![
                    Some(Tensor::from_parts(xv.shape().to_vec(), dx)),
                    Some(Tensor::from_parts(sv.shape().to_vec(), dss)),
                ])
            }),
        )
    }

    /// Depthwise causal convolution along the sequence axis of `[G, L, D]`
    /// with per-channel kernels `w[D, K]` and bias `b[D]`:
    /// `y[l] = b + sum_j w[j] * x[l - K + 1 + j]` (zero left padding).
    pub fn causal_conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 2 || ws[0] != xs[2] || self.shape(b) != [xs[2]] {
            return Err(Error::shape("causal_conv1d", &[xs.get(2).copied().unwrap_or(0), 4], &ws));
        }
        let (groups, len, d, k) = (xs[0], xs[1], xs[2], ws[1]);
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bd = self.value(b).data().to_vec();
        let mut y = vec![S::zero(); xv.numel()];
        {
            let (xd, wd) = (xv.data(), wv.data());
            for gi in 0..groups {
                for l in 0..len {
                    let row = (gi * len + l) * d;
                    y[row..row + d].copy_from_slice(&bd);
                    for j in 0..k {
                        let Some(src) = (l + j + 1).checked_sub(k) else { continue };
                        let srow = (gi * len + src) * d;
                        for c in 0..d {
                            y[row + c] += wd[c * k + j] * xd[srow + c];
                        }
                    }
                }
            }
        }
        let out = Tensor::from_parts(xs.clone(), y);
        self.push(
            "causal_conv1d",
            out,
            &[x, w, b],
            Box::new(move |g| {
                let (gd, xd, wd) = (g.data(), xv.data(), wv.data());
                let mut dx = vec![S::zero(); xd.len()];
                let mut dw = vec![S::zero(); wd.len()];
                let mut db = vec![S::zero(); d];
                for gi in 0..groups {
                    for l in 0..len {
                        let row = (gi * len + l) * d;
                        for c in 0..d {
                            db[c] += gd[row + c];
                        }
                        for j in 0..k {
                            let Some(src) = (l + j + 1).checked_sub(k) else { continue };
                            let srow = (gi * len + src) * d;
                            for c in 0..d {
                                dw[c * k + j] += gd[row + c] * xd[srow + c];
                                dx[srow + c] += gd[row + c] * wd[c * k + j];
                            }
                        }
                    }
                }
                Ok(vec![
                    Some(Tensor::from_parts(xs.clone(), dx)),
                    Some(Tensor::from_parts(vec![d, k], dw)),
                    Some(Tensor::from_parts(vec![d], db)),
                ])
            }),
        )
    }
}
