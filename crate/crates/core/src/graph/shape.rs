use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `src` (with `shape`) into a new buffer laid out in `axes` order.
fn permute_data<S: Scalar>(src: &[S], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<S>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = out_shape.len();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..src.len() {
        out.push(src[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

impl<S: Scalar> Graph<S> {
    /// Reinterprets the extents; the buffer is shared.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let orig = self.shape(x).to_vec();
        let out = self.value(x).reshape(shape)?;
        self.push("reshape", out, &[x], Box::new(move |g| Ok(vec![Some(g.reshape(&orig)?)])))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::config(format!("permute axes {axes:?} invalid for rank {}", shape.len())));
        }
        let (out_shape, data) = permute_data(self.value(x).data(), &shape, axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.push(
            "permute",
            Tensor::from_parts(out_shape.clone(), data),
            &[x],
            Box::new(move |g| {
                let (s, d) = permute_data(g.data(), &out_shape, &inverse);
                Ok(vec![Some(Tensor::from_parts(s, d))])
            }),
        )
    }

    /// Joins two tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa.iter().zip(&sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::shape("concat", &sa, &sb));
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let (ra, rb) = (sa[axis] * inner, sb[axis] * inner);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ad.len() + bd.len());
        for o in 0..outer {
            out.extend_from_slice(&ad[o * ra..(o + 1) * ra]);
            out.extend_from_slice(&bd[o * rb..(o + 1) * rb]);
        }
        let mut shape = sa.clone();
        shape[axis] += sb[axis];
        self.push(
            "concat",
            Tensor::from_parts(shape, out),
            &[a, b],
            Box::new(move |g| {
                let gd = g.data();
                let mut da = Vec::with_capacity(outer * ra);
                let mut db = Vec::with_capacity(outer * rb);
                for o in 0..outer {
                    let row = &gd[o * (ra + rb)..(o + 1) * (ra + rb)];
                    da.extend_from_slice(&row[..ra]);
                    db.extend_from_slice(&row[ra..]);
                }
                Ok(vec![Some(Tensor::from_parts(sa.clone(), da)), Some(Tensor::from_parts(sb.clone(), db))])
            }),
        )
    }

    /// The slice `start..start + len` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::config(format!("narrow {start}..{} of axis {axis} in {shape:?}", start + len)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let row = shape[axis] * inner;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[o * row + start * inner..o * row + (start + len) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        self.push(
            "narrow",
            Tensor::from_parts(out_shape, out),
            &[x],
            Box::new(move |g| {
                let gd = g.data();
                let mut dx = vec![S::zero(); outer * row];
                for o in 0..outer {
                    dx[o * row + start * inner..o * row + (start + len) * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                Ok(vec![Some(Tensor::from_parts(shape.clone(), dx))])
            }),
        )
    }

    /// Reverses the order of `axis`.
    pub fn flip(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::config(format!("flip axis {axis} for rank {}", shape.len())));
        }
        let out = Tensor::from_parts(shape.clone(), flip_data(self.value(x).data(), &shape, axis));
        self.push(
            "flip",
            out,
            &[x],
            Box::new(move |g| Ok(vec![Some(Tensor::from_parts(shape.clone(), flip_data(g.data(), &shape, axis)))])),
        )
    }
}

pub(crate) fn flip_data<S: Scalar>(src: &[S], shape: &[usize], axis: usize) -> Vec<S> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out = Vec::with_capacity(src.len());
    for o in 0..outer {
        for i in (0..n).rev() {
            let base = (o * n + i) * inner;
            out.extend_from_slice(&src[base..base + inner]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_formula() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let x = g.input(Tensor::new(&[2, 3, 4], data.clone()).unwrap()).unwrap();
        let y = g.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape(y), &[4, 2, 3]);
        let yd = g.value(y).data();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(yd[(k * 2 + i) * 3 + j], data[(i * 3 + j) * 4 + k]);
                }
            }
        }
    }

    #[test]
    fn concat_narrow_round_trip() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::new(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let b = g.input(Tensor::new(&[2, 2, 2], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap()).unwrap();
        let c = g.concat(a, b, 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        let back = g.narrow(c, 1, 1, 2).unwrap();
        assert_eq!(g.value(back), g.value(b));
    }

    #[test]
    fn flip_reverses_middle_axis() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()).unwrap();
        let y = g.flip(x, 1).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 6.0, 3.0, 4.0, 1.0, 2.0]);
    }
}
