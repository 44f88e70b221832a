use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Mean and reciprocal standard deviation of a strided set of segments.
fn stats<S: Scalar>(x: &[S], segments: impl Iterator<Item = (usize, usize)> + Clone, eps: S) -> (S, S) {
    let mut n = 0usize;
    let mut sum = S::zero();
    for (start, len) in segments.clone() {
        for &v in &x[start..start + len] {
            sum += v;
        }
        n += len;
    }
    let mean = sum / S::of(n as f64);
    let mut var = S::zero();
    for (start, len) in segments {
        for &v in &x[start..start + len] {
            var += (v - mean) * (v - mean);
        }
    }
    var /= S::of(n as f64);
    (mean, S::one() / (var + eps).sqrt())
}

impl<S: Scalar> Graph<S> {
    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("layer_norm", &[c], self.shape(gamma)));
        }
        let eps = S::of(NORM_EPS);
        let xv = self.value(x).clone();
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        let rows = xv.numel() / c;
        let mut y = vec![S::zero(); xv.numel()];
        {
            let (xd, gd, bd) = (xv.data(), gv.data(), bv.data());
            for r in 0..rows {
                let (mean, rstd) = stats(xd, std::iter::once((r * c, c)), eps);
                for j in 0..c {
                    y[r * c + j] = (xd[r * c + j] - mean) * rstd * gd[j] + bd[j];
                }
            }
        }
        let out = Tensor::from_parts(shape.clone(), y);
        self.push(
            "layer_norm",
            out,
            &[x, gamma, beta],
            Box::new(move |g| {
                let (gd, xd, gam) = (g.data(), xv.data(), gv.data());
                let mut dx = vec![S::zero(); xd.len()];
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                let inv_c = S::one() / S::of(c as f64);
                for r in 0..rows {
                    let base = r * c;
                    let (mean, rstd) = stats(xd, std::iter::once((base, c)), eps);
                    let mut m1 = S::zero();
                    let mut m2 = S::zero();
                    for j in 0..c {
                        let xhat = (xd[base + j] - mean) * rstd;
                        let dxhat = gd[base + j] * gam[j];
                        dgamma[j] += gd[base + j] * xhat;
                        dbeta[j] += gd[base + j];
                        m1 += dxhat;
                        m2 += dxhat * xhat;
                    }
                    m1 *= inv_c;
                    m2 *= inv_c;
                    for j in 0..c {
                        let xhat = (xd[base + j] - mean) * rstd;
                        dx[base + j] = rstd * (gd[base + j] * gam[j] - m1 - xhat * m2);
                    }
                }
                Ok(vec![
                    Some(Tensor::from_parts(shape.clone(), dx)),
                    Some(Tensor::from_parts(vec![c], dgamma)),
                    Some(Tensor::from_parts(vec![c], dbeta)),
                ])
            }),
        )
    }

    /// Group normalisation of `[N, C, ...]` over (channel group, spatial)
    /// with per-channel affine parameters.
    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::config("group_norm needs at least [N, C]"));
        }
        let (n, c) = (shape[0], shape[1]);
        if groups == 0 || c % groups != 0 {
            return Err(Error::config(format!("group_norm: {c} channels not divisible into {groups} groups")));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("group_norm", &[c], self.shape(gamma)));
        }
        let spatial: usize = shape[2..].iter().product();
        let cpg = c / groups;
        let eps = S::of(NORM_EPS);
        let xv = self.value(x).clone();
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        // a group is one contiguous run of cpg * spatial values
        let glen = cpg * spatial;
        let mut y = vec![S::zero(); xv.numel()];
        {
            let (xd, gd, bd) = (xv.data(), gv.data(), bv.data());
            for s in 0..n * groups {
                let base = s * glen;
                let (mean, rstd) = stats(xd, std::iter::once((base, glen)), eps);
                let g0 = (s % groups) * cpg;
                for ci in 0..cpg {
                    let (gam, bet) = (gd[g0 + ci], bd[g0 + ci]);
                    for p in 0..spatial {
                        let i = base + ci * spatial + p;
                        y[i] = (xd[i] - mean) * rstd * gam + bet;
                    }
                }
            }
        }
        let out = Tensor::from_parts(shape.clone(), y);
        self.push(
            "group_norm",
            out,
            &[x, gamma, beta],
            Box::new(move |g| {
                let (gd, xd, gam) = (g.data(), xv.data(), gv.data());
                let mut dx = vec![S::zero(); xd.len()];
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                let inv = S::one() / S::of(glen as f64);
                for s in 0..n * groups {
                    let base = s * glen;
                    let (mean, rstd) = stats(xd, std::iter::once((base, glen)), eps);
                    let g0 = (s % groups) * cpg;
                    let mut m1 = S::zero();
                    let mut m2 = S::zero();
                    for ci in 0..cpg {
                        let ch = g0 + ci;
                        for p in 0..spatial {
                            let i = base + ci * spatial + p;
                            let xhat = (xd[i] - mean) * rstd;
                            let dxhat = gd[i] * gam[ch];
                            dgamma[ch] += gd[i] * xhat;
                            dbeta[ch] += gd[i];
                            m1 += dxhat;
                            m2 += dxhat * xhat;
                        }
                    }
                    m1 *= inv;
                    m2 *= inv;
                    for ci in 0..cpg {
                        let ch = g0 + ci;
                        for p in 0..spatial {
                            let i = base + ci * spatial + p;
                            let xhat = (xd[i] - mean) * rstd;
                            dx[i] = rstd * (gd[i] * gam[ch] - m1 - xhat * m2);
                        }
                    }
                }
                Ok(vec![
                    Some(Tensor::from_parts(shape.clone(), dx)),
                    Some(Tensor::from_parts(vec![c], dgamma)),
                    Some(Tensor::from_parts(vec![c], dbeta)),
                ])
            }),
        )
    }
}
