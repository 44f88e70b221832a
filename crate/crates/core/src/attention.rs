//! Softmax temporal attention and spatial linear attention.

use crate::error::{Error, Result};
use crate::graph::{Graph, HeadLayout, Var};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const HEAD_DIM: usize = 64;

/// Head count and per-head width; the inner width is `heads * head_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
}

impl AttentionConfig {
    /// One head of width 64 per 8 base channels.
    pub fn from_base_channels(base: usize) -> Result<Self> {
        if base == 0 || !base.is_multiple_of(8) {
            return Err(Error::config(format!("base channels {base} must be a positive multiple of 8")));
        }
        Ok(Self { heads: base / 8, head_dim: HEAD_DIM })
    }

    pub fn inner(&self) -> usize {
        self.heads * self.head_dim
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::config(format!("attention needs heads >= 1 and head_dim >= 1, got {self:?}")));
        }
        Ok(())
    }
}

/// Pre-norm projections shared by both attention kinds.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub channels: usize,
    pub config: AttentionConfig,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttentionParams {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, rng: &Rng, prefix: &str, channels: usize, config: AttentionConfig) -> Result<Self> {
        config.validate()?;
        let inner = config.inner();
        Ok(Self {
            channels,
            config,
            ln_gamma: store.add_ones(&format!("{prefix}.norm.gamma"), &[channels])?,
            ln_beta: store.add_zeros(&format!("{prefix}.norm.beta"), &[channels])?,
            wq: store.add_fan_in(rng, &format!("{prefix}.q"), &[channels, inner], channels)?,
            wk: store.add_fan_in(rng, &format!("{prefix}.k"), &[channels, inner], channels)?,
            wv: store.add_fan_in(rng, &format!("{prefix}.v"), &[channels, inner], channels)?,
            wo: store.add_fan_in(rng, &format!("{prefix}.out.w"), &[inner, channels], inner)?,
            bo: store.add_fan_in(rng, &format!("{prefix}.out.b"), &[channels], inner)?,
        })
    }

    fn check_tokens<S: Scalar>(&self, g: &Graph<S>, x: Var, op: &'static str) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 3 || s[2] != self.channels {
            return Err(Error::shape(op, &[s.first().copied().unwrap_or(0), s.get(1).copied().unwrap_or(0), self.channels], s));
        }
        Ok(())
    }

    fn qkv<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<(Var, Var, Var)> {
        let h = g.layer_norm(x, g.param(self.ln_gamma), g.param(self.ln_beta))?;
        let q = g.linear(h, g.param(self.wq), None)?;
        let k = g.linear(h, g.param(self.wk), None)?;
        let v = g.linear(h, g.param(self.wv), None)?;
        Ok((q, k, v))
    }

    /// Multi-head softmax self-attention over the sequence axis of
    /// `[G, L, C]`, no mask and no positional encoding, plus residual.
    pub fn temporal_forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        self.check_tokens(g, x, "temporal attention input")?;
        let AttentionConfig { heads, head_dim } = self.config;
        let (q, k, v) = self.qkv(g, x)?;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let scores = g.head_matmul(q, HeadLayout::Interleaved, false, k, HeadLayout::Interleaved, true, HeadLayout::Blocked, heads, scale)?;
        let weights = g.softmax(scores, 3)?;
        let mixed = g.head_matmul(weights, HeadLayout::Blocked, false, v, HeadLayout::Interleaved, false, HeadLayout::Interleaved, heads, 1.0)?;
        let out = g.linear(mixed, g.param(self.wo), Some(g.param(self.bo)))?;
        g.add(x, out)
    }

    /// Linear attention over the spatial positions of `[N, C, H, W]`:
    /// queries are softmax-normalised over each head's features, keys over
    /// positions, and values are aggregated into a per-head global context.
    pub fn spatial_forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape("spatial attention input", &[s.first().copied().unwrap_or(0), self.channels, 0, 0], &s));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let AttentionConfig { heads, head_dim } = self.config;
        let flat = g.reshape(x, &[n, c, hw])?;
        let tokens = g.permute(flat, &[0, 2, 1])?;
        let (q, k, v) = self.qkv(g, tokens)?;
        let q4 = g.reshape(q, &[n, hw, heads, head_dim])?;
        let q4 = g.softmax(q4, 3)?;
        let q = g.reshape(q4, &[n, hw, heads * head_dim])?;
        let k = g.softmax(k, 1)?;
        let context = g.head_matmul(k, HeadLayout::Interleaved, true, v, HeadLayout::Interleaved, false, HeadLayout::Blocked, heads, 1.0)?;
        let mixed = g.head_matmul(q, HeadLayout::Interleaved, false, context, HeadLayout::Blocked, false, HeadLayout::Interleaved, heads, 1.0)?;
        let out = g.linear(mixed, g.param(self.wo), Some(g.param(self.bo)))?;
        let out = g.permute(out, &[0, 2, 1])?;
        let out = g.reshape(out, &s)?;
        g.add(x, out)
    }
}

/// Softmax temporal attention on `[G, L, C]`.
pub fn temporal_attention_forward<S: Scalar>(g: &mut Graph<S>, params: &AttentionParams, x: Var) -> Result<Var> {
    params.temporal_forward(g, x)
}

/// Linear spatial attention on `[N, C, H, W]`.
pub fn spatial_linear_attention_forward<S: Scalar>(g: &mut Graph<S>, params: &AttentionParams, x: Var) -> Result<Var> {
    params.spatial_forward(g, x)
}
