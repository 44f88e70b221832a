use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::{gemm, MatView, Scalar};
use crate::tensor::Tensor;

/// How a rank-3/4 tensor is cut into per-(batch, head) matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadLayout {
    /// `[N, rows, heads * cols]`: head `h` owns columns `h*cols..(h+1)*cols`
    /// of every row. Token-major activations use this layout.
    Interleaved,
    /// `[N, heads, rows, cols]`, one contiguous matrix per head.
    Blocked,
}

#[derive(Debug, Clone, Copy)]
struct Operand {
    batch: usize,
    rows: usize,
    cols: usize,
    layout: HeadLayout,
    heads: usize,
    trans: bool,
}

impl Operand {
    fn new(shape: &[usize], layout: HeadLayout, heads: usize, trans: bool) -> Result<Self> {
        let bad = || Error::config(format!("head_matmul operand shape {shape:?} does not fit {layout:?} with {heads} heads"));
        let (batch, rows, cols) = match layout {
            HeadLayout::Interleaved => {
                if shape.len() != 3 || !shape[2].is_multiple_of(heads) {
                    return Err(bad());
                }
                (shape[0], shape[1], shape[2] / heads)
            }
            HeadLayout::Blocked => {
                if shape.len() != 4 || shape[1] != heads {
                    return Err(bad());
                }
                (shape[0], shape[2], shape[3])
            }
        };
        Ok(Self { batch, rows, cols, layout, heads, trans })
    }

    /// View of matrix (n, h) as stored.
    fn stored(&self, n: usize, h: usize) -> MatView {
        match self.layout {
            HeadLayout::Interleaved => {
                let width = self.heads * self.cols;
                MatView::with_row_stride(n * self.rows * width + h * self.cols, self.rows, self.cols, width)
            }
            HeadLayout::Blocked => {
                MatView::row_major((n * self.heads + h) * self.rows * self.cols, self.rows, self.cols)
            }
        }
    }

    /// View of op(matrix (n, h)).
    fn effective(&self, n: usize, h: usize) -> MatView {
        let v = self.stored(n, h);
        if self.trans {
            v.t()
        } else {
            v
        }
    }

    fn eff_rows(&self) -> usize {
        if self.trans {
            self.cols
        } else {
            self.rows
        }
    }

    fn eff_cols(&self) -> usize {
        if self.trans {
            self.rows
        } else {
            self.cols
        }
    }

    fn shape(&self) -> Vec<usize> {
        match self.layout {
            HeadLayout::Interleaved => vec![self.batch, self.rows, self.heads * self.cols],
            HeadLayout::Blocked => vec![self.batch, self.heads, self.rows, self.cols],
        }
    }
}

impl<S: Scalar> Graph<S> {
    /// Affine map over the last axis: `x[..., in] @ w[in, out] (+ b[out])`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let fan_in = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != fan_in {
            return Err(Error::shape("linear", &[fan_in, ws.get(1).copied().unwrap_or(0)], &ws));
        }
        let out_dim = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(Error::shape("linear bias", &[out_dim], self.shape(b)));
            }
        }
        let rows = self.value(x).numel() / fan_in;
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let mut y = vec![S::zero(); rows * out_dim];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for r in 0..rows {
                y[r * out_dim..(r + 1) * out_dim].copy_from_slice(bd);
            }
        }
        gemm(
            S::one(),
            xv.data(),
            MatView::row_major(0, rows, fan_in),
            wv.data(),
            MatView::row_major(0, fan_in, out_dim),
            S::one(),
            &mut y,
            MatView::row_major(0, rows, out_dim),
        );
        let mut out_shape = xs.clone();
        *out_shape.last_mut().unwrap() = out_dim;
        let out = Tensor::from_parts(out_shape, y);
        let mut parents = vec![x, w];
        parents.extend(b);
        let has_bias = b.is_some();
        self.push(
            "linear",
            out,
            &parents,
            Box::new(move |g| {
                let gd = g.data();
                let mut dx = vec![S::zero(); rows * fan_in];
                gemm(
                    S::one(),
                    gd,
                    MatView::row_major(0, rows, out_dim),
                    wv.data(),
                    MatView::row_major(0, fan_in, out_dim).t(),
                    S::zero(),
                    &mut dx,
                    MatView::row_major(0, rows, fan_in),
                );
                let mut dw = vec![S::zero(); fan_in * out_dim];
                gemm(
                    S::one(),
                    xv.data(),
                    MatView::row_major(0, rows, fan_in).t(),
                    gd,
                    MatView::row_major(0, rows, out_dim),
                    S::zero(),
                    &mut dw,
                    MatView::row_major(0, fan_in, out_dim),
                );
                let mut grads = vec![
                    Some(Tensor::from_parts(xs.clone(), dx)),
                    Some(Tensor::from_parts(vec![fan_in, out_dim], dw)),
                ];
                if has_bias {
                    let mut db = vec![S::zero(); out_dim];
                    for r in 0..rows {
                        for (d, &v) in db.iter_mut().zip(&gd[r * out_dim..(r + 1) * out_dim]) {
                            *d += v;
                        }
                    }
                    grads.push(Some(Tensor::from_parts(vec![out_dim], db)));
                }
                Ok(grads)
            }),
        )
    }

    /// Batched per-head matrix product `alpha * op(A_{n,h}) @ op(B_{n,h})`.
    ///
    /// Each operand is cut into `N x heads` matrices according to its
    /// [`HeadLayout`]; `trans_*` transposes the per-head matrix. The result is
    /// written in `out_layout`. Strided views avoid any head split/merge copies.
    #[allow(clippy::too_many_arguments)]
    pub fn head_matmul(
        &mut self,
        a: Var,
        a_layout: HeadLayout,
        trans_a: bool,
        b: Var,
        b_layout: HeadLayout,
        trans_b: bool,
        out_layout: HeadLayout,
        heads: usize,
        alpha: f64,
    ) -> Result<Var> {
        let oa = Operand::new(self.shape(a), a_layout, heads, trans_a)?;
        let ob = Operand::new(self.shape(b), b_layout, heads, trans_b)?;
        if oa.batch != ob.batch || oa.eff_cols() != ob.eff_rows() {
            return Err(Error::Shape {
                op: "head_matmul",
                expected: vec![oa.batch, oa.eff_rows(), oa.eff_cols()],
                actual: vec![ob.batch, ob.eff_rows(), ob.eff_cols()],
            });
        }
        let oc = Operand {
            batch: oa.batch,
            rows: oa.eff_rows(),
            cols: ob.eff_cols(),
            layout: out_layout,
            heads,
            trans: false,
        };
        let alpha = S::of(alpha);
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let c_shape = oc.shape();
        let mut c = vec![S::zero(); c_shape.iter().product()];
        for n in 0..oa.batch {
            for h in 0..heads {
                gemm(alpha, av.data(), oa.effective(n, h), bv.data(), ob.effective(n, h), S::zero(), &mut c, oc.stored(n, h));
            }
        }
        let out = Tensor::from_parts(c_shape, c);
        self.push(
            "head_matmul",
            out,
            &[a, b],
            Box::new(move |g| {
                let gd = g.data();
                let mut da = vec![S::zero(); av.numel()];
                let mut db = vec![S::zero(); bv.numel()];
                for n in 0..oa.batch {
                    for h in 0..heads {
                        let gview = oc.stored(n, h);
                        // d op(A) = alpha * dC @ op(B)^T
                        gemm(alpha, gd, gview, bv.data(), ob.effective(n, h).t(), S::zero(), &mut da, oa.effective(n, h));
                        // d op(B) = alpha * op(A)^T @ dC
                        gemm(alpha, av.data(), oa.effective(n, h).t(), gd, gview, S::zero(), &mut db, ob.effective(n, h));
                    }
                }
                Ok(vec![
                    Some(Tensor::from_parts(oa.shape(), da)),
                    Some(Tensor::from_parts(ob.shape(), db)),
                ])
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_forward_small() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let w = g.input(Tensor::new(&[2, 1], vec![0.5, -1.0]).unwrap()).unwrap();
        let b = g.input(Tensor::new(&[1], vec![10.0]).unwrap()).unwrap();
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 1]);
        assert_eq!(g.value(y).data(), &[8.5, 7.5]);
    }

    #[test]
    fn head_matmul_interleaved_scores_match_naive() {
        // N=1, rows=3, heads=2, dh=2
        let q: Vec<f64> = (0..12).map(|v| v as f64 * 0.1).collect();
        let k: Vec<f64> = (0..12).map(|v| 1.0 - v as f64 * 0.05).collect();
        let mut g = Graph::<f64>::new();
        let qv = g.input(Tensor::new(&[1, 3, 4], q.clone()).unwrap()).unwrap();
        let kv = g.input(Tensor::new(&[1, 3, 4], k.clone()).unwrap()).unwrap();
        let s = g
            .head_matmul(qv, HeadLayout::Interleaved, false, kv, HeadLayout::Interleaved, true, HeadLayout::Blocked, 2, 0.5)
            .unwrap();
        assert_eq!(g.shape(s), &[1, 2, 3, 3]);
        let sd = g.value(s).data();
        for h in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let want: f64 = (0..2).map(|d| q[i * 4 + h * 2 + d] * k[j * 4 + h * 2 + d]).sum::<f64>() * 0.5;
                    assert!((sd[(h * 3 + i) * 3 + j] - want).abs() < 1e-12);
                }
            }
        }
    }
}
