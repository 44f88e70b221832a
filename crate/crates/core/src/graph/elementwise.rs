use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub(crate) fn silu<S: Scalar>(x: S) -> S {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn silu_grad<S: Scalar>(x: S) -> S {
    let s = sigmoid(x);
    s * (S::one() + x * (S::one() - s))
}

#[inline]
pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    if x > S::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of softplus for positive `y`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Iterates the lines of `shape` along `axis`: yields (base offset, stride, length).
pub(crate) fn axis_lines(shape: &[usize], axis: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    (0..outer).flat_map(move |o| (0..inner).map(move |i| (o * len * inner + i, inner, len)))
}

impl<S: Scalar> Graph<S> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).add(self.value(b))?;
        self.push("add", out, &[a, b], Box::new(|g| Ok(vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).sub(self.value(b))?;
        self.push("sub", out, &[a, b], Box::new(|g| Ok(vec![Some(g.clone()), Some(g.scale(-S::one()))])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = av.mul(&bv)?;
        self.push(
            "mul",
            out,
            &[a, b],
            Box::new(move |g| Ok(vec![Some(g.mul(&bv)?), Some(g.mul(&av)?)])),
        )
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let k = S::of(k);
        let out = self.value(a).scale(k);
        self.push("scale", out, &[a], Box::new(move |g| Ok(vec![Some(g.scale(k))])))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let out = av.map(silu);
        self.push(
            "silu",
            out,
            &[a],
            Box::new(move |g| Ok(vec![Some(g.zip_map(&av, "silu", |g, x| g * silu_grad(x))?)])),
        )
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let out = av.map(softplus);
        self.push(
            "softplus",
            out,
            &[a],
            Box::new(move |g| Ok(vec![Some(g.zip_map(&av, "softplus", |g, x| g * sigmoid(x))?)])),
        )
    }

    /// `-exp(x)`: keeps a state matrix strictly negative under any update of `x`.
    pub fn neg_exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| -x.exp());
        let y = out.clone();
        self.push("neg_exp", out, &[a], Box::new(move |g| Ok(vec![Some(g.mul(&y)?)])))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let out = Tensor::from_parts(vec![1], vec![self.value(a).sum()]);
        self.push(
            "sum",
            out,
            &[a],
            Box::new(move |g| {
                let gv = g.data()[0];
                Ok(vec![Some(Tensor::from_parts(shape.clone(), vec![gv; shape.iter().product()]))])
            }),
        )
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// `sum(a * w)` with a constant weight tensor (used for random projections
    /// of layer outputs in gradient checks).
    pub fn weighted_sum(&mut self, a: Var, w: &Tensor<S>) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != w.shape() {
            return Err(Error::shape("weighted_sum", av.shape(), w.shape()));
        }
        let total = av.data().iter().zip(w.data()).map(|(&x, &y)| x * y).sum();
        let w = w.clone();
        self.push(
            "weighted_sum",
            Tensor::from_parts(vec![1], vec![total]),
            &[a],
            Box::new(move |g| Ok(vec![Some(w.scale(g.data()[0]))])),
        )
    }

    /// Mean squared error between two equally shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let diff = self.value(a).sub(self.value(b))?;
        let n = S::of(diff.numel() as f64);
        let loss = diff.data().iter().map(|&d| d * d).sum::<S>() / n;
        self.push(
            "mse",
            Tensor::from_parts(vec![1], vec![loss]),
            &[a, b],
            Box::new(move |g| {
                let k = S::of(2.0) * g.data()[0] / n;
                let da = diff.scale(k);
                let db = da.scale(-S::one());
                Ok(vec![Some(da), Some(db)])
            }),
        )
    }

    /// Elementwise clamp. Not differentiable.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (S::of(lo), S::of(hi));
        let out = self.value(a).map(|x| x.max(lo).min(hi));
        self.push_nondiff("clamp", out, &[a])
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::config(format!("softmax axis {axis} for rank {}", shape.len())));
        }
        let x = self.value(a).data();
        let mut y = vec![S::zero(); x.len()];
        for (base, stride, len) in axis_lines(&shape, axis) {
            let mut m = S::neg_infinity();
            for j in 0..len {
                m = m.max(x[base + j * stride]);
            }
            let mut z = S::zero();
            for j in 0..len {
                let e = (x[base + j * stride] - m).exp();
                y[base + j * stride] = e;
                z += e;
            }
            for j in 0..len {
                y[base + j * stride] /= z;
            }
        }
        let out = Tensor::from_parts(shape.clone(), y);
        let yv = out.clone();
        self.push(
            "softmax",
            out,
            &[a],
            Box::new(move |g| {
                let (gd, yd) = (g.data(), yv.data());
                let mut dx = vec![S::zero(); gd.len()];
                for (base, stride, len) in axis_lines(&shape, axis) {
                    let mut dot = S::zero();
                    for j in 0..len {
                        let i = base + j * stride;
                        dot += gd[i] * yd[i];
                    }
                    for j in 0..len {
                        let i = base + j * stride;
                        dx[i] = yd[i] * (gd[i] - dot);
                    }
                }
                Ok(vec![Some(Tensor::from_parts(shape.clone(), dx))])
            }),
        )
    }
}
