use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sinusoidal features of integer steps: `[sin(t f_i) | cos(t f_i)]` with
/// `f_i = 10000^(-i / (half - 1))`. Returns `[len(ts), dim]`.
pub fn sinusoidal_embedding<S: Scalar>(ts: &[usize], dim: usize) -> Result<Tensor<S>> {
    if dim < 4 || !dim.is_multiple_of(2) || ts.is_empty() {
        return Err(Error::config(format!("sinusoidal embedding needs an even dim >= 4 and steps, got dim {dim}")));
    }
    let half = dim / 2;
    let scale = (10_000f64).ln() / (half - 1) as f64;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        let freqs = (0..half).map(|i| t as f64 * (-scale * i as f64).exp());
        let (sin, cos): (Vec<f64>, Vec<f64>) = freqs.map(|a| (a.sin(), a.cos())).unzip();
        data.extend(sin.into_iter().chain(cos).map(S::of));
    }
    Tensor::new(&[ts.len(), dim], data)
}

/// Sinusoidal features followed by `linear -> SiLU -> linear`.
#[derive(Debug, Clone)]
pub struct TimeEmbedding {
    pub sin_dim: usize,
    pub dim: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl TimeEmbedding {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, rng: &Rng, prefix: &str, sin_dim: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            sin_dim,
            dim,
            w1: store.add_fan_in(rng, &format!("{prefix}.fc1.w"), &[sin_dim, dim], sin_dim)?,
            b1: store.add_fan_in(rng, &format!("{prefix}.fc1.b"), &[dim], sin_dim)?,
            w2: store.add_fan_in(rng, &format!("{prefix}.fc2.w"), &[dim, dim], dim)?,
            b2: store.add_fan_in(rng, &format!("{prefix}.fc2.b"), &[dim], dim)?,
        })
    }

    /// `[len(ts), dim]` embedding of diffusion steps.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ts: &[usize]) -> Result<Var> {
        let feats = g.input(sinusoidal_embedding(ts, self.sin_dim)?)?;
        let h = g.linear(feats, g.param(self.w1), Some(g.param(self.b1)))?;
        let h = g.silu(h)?;
        g.linear(h, g.param(self.w2), Some(g.param(self.b2)))
    }
}

/// Two conv-norm-SiLU stages with a time-conditioned scale/shift after the
/// first norm, plus a (1x1-projected if needed) residual path.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub c_in: usize,
    pub c_out: usize,
    pub groups: usize,
    conv1_w: ParamId,
    conv1_b: ParamId,
    norm1_g: ParamId,
    norm1_b: ParamId,
    time_w: ParamId,
    time_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    norm2_g: ParamId,
    norm2_b: ParamId,
    skip: Option<(ParamId, ParamId)>,
}

impl ResBlock {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &Rng,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        emb_dim: usize,
        groups: usize,
    ) -> Result<Self> {
        if groups == 0 || !c_out.is_multiple_of(groups) {
            return Err(Error::config(format!("{c_out} channels not divisible into {groups} norm groups")));
        }
        let fan1 = 9 * c_in;
        let fan2 = 9 * c_out;
        let skip = if c_in != c_out {
            Some((
                store.add_fan_in(rng, &format!("{prefix}.skip.w"), &[c_out, c_in, 1, 1], c_in)?,
                store.add_fan_in(rng, &format!("{prefix}.skip.b"), &[c_out], c_in)?,
            ))
        } else {
            None
        };
        Ok(Self {
            c_in,
            c_out,
            groups,
            conv1_w: store.add_fan_in(rng, &format!("{prefix}.conv1.w"), &[c_out, c_in, 3, 3], fan1)?,
            conv1_b: store.add_fan_in(rng, &format!("{prefix}.conv1.b"), &[c_out], fan1)?,
            norm1_g: store.add_ones(&format!("{prefix}.norm1.gamma"), &[c_out])?,
            norm1_b: store.add_zeros(&format!("{prefix}.norm1.beta"), &[c_out])?,
            time_w: store.add_fan_in(rng, &format!("{prefix}.time.w"), &[emb_dim, 2 * c_out], emb_dim)?,
            time_b: store.add_fan_in(rng, &format!("{prefix}.time.b"), &[2 * c_out], emb_dim)?,
            conv2_w: store.add_fan_in(rng, &format!("{prefix}.conv2.w"), &[c_out, c_out, 3, 3], fan2)?,
            conv2_b: store.add_fan_in(rng, &format!("{prefix}.conv2.b"), &[c_out], fan2)?,
            norm2_g: store.add_ones(&format!("{prefix}.norm2.gamma"), &[c_out])?,
            norm2_b: store.add_zeros(&format!("{prefix}.norm2.beta"), &[c_out])?,
            skip,
        })
    }

    /// `x`: `[B*F, c_in, H, W]`; `emb`: `[B, emb_dim]`, shared by the `F`
    /// frames of each batch element.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var, emb: Var) -> Result<Var> {
        let h = g.conv2d(x, g.param(self.conv1_w), Some(g.param(self.conv1_b)), 1, 1)?;
        let h = g.group_norm(h, self.groups, g.param(self.norm1_g), g.param(self.norm1_b))?;
        let e = g.silu(emb)?;
        let ss = g.linear(e, g.param(self.time_w), Some(g.param(self.time_b)))?;
        let h = g.film(h, ss)?;
        let h = g.silu(h)?;
        let h = g.conv2d(h, g.param(self.conv2_w), Some(g.param(self.conv2_b)), 1, 1)?;
        let h = g.group_norm(h, self.groups, g.param(self.norm2_g), g.param(self.norm2_b))?;
        let h = g.silu(h)?;
        let res = match self.skip {
            Some((w, b)) => g.conv2d(x, g.param(w), Some(g.param(b)), 1, 0)?,
            None => x,
        };
        g.add(h, res)
    }
}

/// A 3x3 convolution with bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv3 {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

impl Conv3 {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, rng: &Rng, prefix: &str, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            w: store.add_fan_in(rng, &format!("{prefix}.w"), &[c_out, c_in, 3, 3], 9 * c_in)?,
            b: store.add_fan_in(rng, &format!("{prefix}.b"), &[c_out], 9 * c_in)?,
            stride,
        })
    }

    pub fn zeros<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            w: store.add_zeros(&format!("{prefix}.w"), &[c_out, c_in, 3, 3])?,
            b: store.add_zeros(&format!("{prefix}.b"), &[c_out])?,
            stride: 1,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        g.conv2d(x, g.param(self.w), Some(g.param(self.b)), self.stride, 1)
    }
}
