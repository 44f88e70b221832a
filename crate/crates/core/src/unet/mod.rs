//! Factorised space-time U-Net denoiser.
//!
//! Spatial work (convolutions, linear attention) runs per frame on
//! `[B*L, C, H, W]`; each temporal layer folds spatial positions into the
//! batch and mixes along frames on `[B*H*W, L, C]`.

mod blocks;

pub use blocks::{sinusoidal_embedding, Conv3, ResBlock, TimeEmbedding};

use std::fmt;
use std::str::FromStr;

use crate::attention::{AttentionConfig, AttentionParams, HEAD_DIM};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::ssm::{Direction, MambaParams, SsmConfig};
use crate::tensor::Tensor;

pub const TIME_EMBED_DIM: usize = 1024;
pub const DEFAULT_MULTIPLIERS: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalKind {
    SsmBidirectional,
    SsmUnidirectional,
    Attention,
    /// No temporal mixing: every frame is denoised independently.
    None,
}

impl TemporalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TemporalKind::SsmBidirectional => "ssm_bidirectional",
            TemporalKind::SsmUnidirectional => "ssm_unidirectional",
            TemporalKind::Attention => "attention",
            TemporalKind::None => "none",
        }
    }
}

impl fmt::Display for TemporalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemporalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ssm_bidirectional" => TemporalKind::SsmBidirectional,
            "ssm_unidirectional" => TemporalKind::SsmUnidirectional,
            "attention" => TemporalKind::Attention,
            "none" => TemporalKind::None,
            other => return Err(Error::config(format!("unknown temporal kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub base_channels: usize,
    pub multipliers: Vec<usize>,
    pub temporal: TemporalKind,
    /// Attention heads (width 64 each) for spatial and temporal attention.
    pub heads: usize,
    pub time_dim: usize,
    pub norm_groups: usize,
    pub frames: usize,
    pub image_channels: usize,
    pub height: usize,
    pub width: usize,
    pub ssm: SsmConfig,
}

impl UNetConfig {
    /// Defaults for `base` channels: multipliers (1, 2, 4, 8), one attention
    /// head per 8 base channels, 1024-wide time embedding, 8 norm groups.
    pub fn new(base: usize, temporal: TemporalKind, frames: usize, image_channels: usize, height: usize, width: usize) -> Self {
        Self {
            base_channels: base,
            multipliers: DEFAULT_MULTIPLIERS.to_vec(),
            temporal,
            heads: (base / 8).max(1),
            time_dim: TIME_EMBED_DIM,
            norm_groups: 8,
            frames,
            image_channels,
            height,
            width,
            ssm: SsmConfig::default(),
        }
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        self.multipliers.iter().map(|m| m * self.base_channels).collect()
    }

    /// Spatial extent (height, width) at every stage.
    pub fn stage_resolutions(&self) -> Vec<(usize, usize)> {
        (0..self.multipliers.len()).map(|i| (self.height >> i, self.width >> i)).collect()
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig { heads: self.heads, head_dim: HEAD_DIM }
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.multipliers.len();
        if stages == 0 || self.multipliers.contains(&0) {
            return Err(Error::config("multipliers must be a nonempty list of positive integers"));
        }
        if self.base_channels == 0 || self.heads == 0 || self.frames == 0 || self.image_channels == 0 {
            return Err(Error::config("base_channels, heads, frames and image channels must be positive"));
        }
        if self.time_dim < 4 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::config(format!("time embedding dim {} must be even and >= 4", self.time_dim)));
        }
        let div = 1usize << (stages - 1);
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(div) || !self.width.is_multiple_of(div) {
            return Err(Error::config(format!(
                "resolution {}x{} not divisible by 2^{} for {stages} stages",
                self.height,
                self.width,
                stages - 1
            )));
        }
        for c in self.stage_channels() {
            if c % self.norm_groups != 0 {
                return Err(Error::config(format!("stage width {c} not divisible into {} norm groups", self.norm_groups)));
            }
        }
        Ok(())
    }

    /// Flat `key=value` description, stable across versions of this crate.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mults: Vec<String> = self.multipliers.iter().map(|m| m.to_string()).collect();
        vec![
            ("base_channels".into(), self.base_channels.to_string()),
            ("multipliers".into(), mults.join(",")),
            ("temporal_kind".into(), self.temporal.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("time_dim".into(), self.time_dim.to_string()),
            ("norm_groups".into(), self.norm_groups.to_string()),
            ("frames".into(), self.frames.to_string()),
            ("channels".into(), self.image_channels.to_string()),
            ("height".into(), self.height.to_string()),
            ("width".into(), self.width.to_string()),
            ("ssm_expand".into(), self.ssm.expand.to_string()),
            ("ssm_state".into(), self.ssm.state.to_string()),
            ("ssm_conv_width".into(), self.ssm.conv_width.to_string()),
            ("ssm_dt_min".into(), self.ssm.dt_min.to_string()),
            ("ssm_dt_max".into(), self.ssm.dt_max.to_string()),
            (
                "ssm_discretization".into(),
                match self.ssm.discretization {
                    crate::ssm::Discretization::Euler => "euler".into(),
                    crate::ssm::Discretization::Exact => "exact".into(),
                },
            ),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Malformed { what: "model config", detail: format!("missing key `{k}`") })
        };
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Malformed { what: "model config", detail: format!("bad value `{v}` for `{k}`") })
        }
        let multipliers = get("multipliers")?
            .split(',')
            .map(|m| num("multipliers", m.trim()))
            .collect::<Result<Vec<usize>>>()?;
        let discretization = match get("ssm_discretization")? {
            "euler" => crate::ssm::Discretization::Euler,
            "exact" => crate::ssm::Discretization::Exact,
            other => return Err(Error::Malformed { what: "model config", detail: format!("bad discretization `{other}`") }),
        };
        let cfg = Self {
            base_channels: num("base_channels", get("base_channels")?)?,
            multipliers,
            temporal: get("temporal_kind")?.parse()?,
            heads: num("heads", get("heads")?)?,
            time_dim: num("time_dim", get("time_dim")?)?,
            norm_groups: num("norm_groups", get("norm_groups")?)?,
            frames: num("frames", get("frames")?)?,
            image_channels: num("channels", get("channels")?)?,
            height: num("height", get("height")?)?,
            width: num("width", get("width")?)?,
            ssm: SsmConfig {
                expand: num("ssm_expand", get("ssm_expand")?)?,
                state: num("ssm_state", get("ssm_state")?)?,
                conv_width: num("ssm_conv_width", get("ssm_conv_width")?)?,
                dt_min: num("ssm_dt_min", get("ssm_dt_min")?)?,
                dt_max: num("ssm_dt_max", get("ssm_dt_max")?)?,
                discretization,
                ..SsmConfig::default()
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub enum TemporalLayer {
    Ssm(MambaParams),
    Attention(AttentionParams),
    None,
}

impl TemporalLayer {
    fn new<S: Scalar>(store: &mut ParamStore<S>, rng: &Rng, prefix: &str, channels: usize, cfg: &UNetConfig) -> Result<Self> {
        Ok(match cfg.temporal {
            TemporalKind::SsmBidirectional => TemporalLayer::Ssm(MambaParams::bidirectional(store, rng, prefix, channels, cfg.ssm)?),
            TemporalKind::SsmUnidirectional => {
                TemporalLayer::Ssm(MambaParams::new(store, rng, prefix, channels, cfg.ssm, &[Direction::Forward])?)
            }
            TemporalKind::Attention => TemporalLayer::Attention(AttentionParams::new(store, rng, prefix, channels, cfg.attention())?),
            TemporalKind::None => TemporalLayer::None,
        })
    }

    /// Applies the layer along frames of `h`: `[B*L, C, H, W]`.
    fn forward<S: Scalar>(&self, g: &mut Graph<S>, h: Var, batch: usize, frames: usize) -> Result<Var> {
        if matches!(self, TemporalLayer::None) {
            return Ok(h);
        }
        let shape = g.shape(h).to_vec();
        let (c, hw) = (shape[1], shape[2] * shape[3]);
        let x = g.reshape(h, &[batch, frames, c, hw])?;
        let x = g.permute(x, &[0, 3, 1, 2])?;
        let x = g.reshape(x, &[batch * hw, frames, c])?;
        let y = match self {
            TemporalLayer::Ssm(p) => p.forward(g, x)?,
            TemporalLayer::Attention(p) => p.temporal_forward(g, x)?,
            TemporalLayer::None => unreachable!(),
        };
        let y = g.reshape(y, &[batch, hw, frames, c])?;
        let y = g.permute(y, &[0, 2, 3, 1])?;
        g.reshape(y, &shape)
    }
}

/// Per-resolution block: residual conv block, spatial attention, temporal layer.
#[derive(Debug, Clone)]
pub struct Stage {
    pub res: ResBlock,
    pub spatial: AttentionParams,
    pub temporal: TemporalLayer,
}

impl Stage {
    #[allow(clippy::too_many_arguments)]
    fn new<S: Scalar>(store: &mut ParamStore<S>, rng: &Rng, prefix: &str, c_in: usize, c_out: usize, cfg: &UNetConfig) -> Result<Self> {
        Ok(Self {
            res: ResBlock::new(store, rng, &format!("{prefix}.res"), c_in, c_out, cfg.time_dim, cfg.norm_groups)?,
            spatial: AttentionParams::new(store, rng, &format!("{prefix}.spatial"), c_out, cfg.attention())?,
            temporal: TemporalLayer::new(store, rng, &format!("{prefix}.temporal"), c_out, cfg)?,
        })
    }

    fn forward<S: Scalar>(&self, g: &mut Graph<S>, h: Var, emb: Var, batch: usize, frames: usize) -> Result<Var> {
        let h = self.res.forward(g, h, emb)?;
        let h = self.spatial.spatial_forward(g, h)?;
        self.temporal.forward(g, h, batch, frames)
    }
}

#[derive(Debug, Clone)]
pub struct VideoUNet<S: Scalar> {
    pub config: UNetConfig,
    pub params: ParamStore<S>,
    init: Conv3,
    time: TimeEmbedding,
    down: Vec<Stage>,
    downsample: Vec<Conv3>,
    mid: Stage,
    mid_res: ResBlock,
    upsample: Vec<Conv3>,
    up: Vec<Stage>,
    out_norm: (ParamId, ParamId),
    out_conv: Conv3,
}

impl<S: Scalar> VideoUNet<S> {
    /// Builds and initialises every parameter. Each parameter draws from a
    /// stream keyed by its name, so layers shared between temporal kinds get
    /// identical values for the same seed.
    pub fn build(config: UNetConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let chans = config.stage_channels();
        let base = config.base_channels;
        let last = chans.len() - 1;
        let init = Conv3::new(&mut store, rng, "init", config.image_channels, base, 1)?;
        let time = TimeEmbedding::new(&mut store, rng, "time", base.max(4).next_multiple_of(2), config.time_dim)?;
        let mut down = Vec::new();
        let mut downsample = Vec::new();
        let mut prev = base;
        for (i, &c) in chans.iter().enumerate() {
            down.push(Stage::new(&mut store, rng, &format!("down.{i}"), prev, c, &config)?);
            if i != last {
                downsample.push(Conv3::new(&mut store, rng, &format!("down.{i}.downsample"), c, c, 2)?);
            }
            prev = c;
        }
        let mid = Stage::new(&mut store, rng, "mid", chans[last], chans[last], &config)?;
        let mid_res = ResBlock::new(&mut store, rng, "mid.res2", chans[last], chans[last], config.time_dim, config.norm_groups)?;
        let mut up = Vec::new();
        let mut upsample = Vec::new();
        for i in (0..=last).rev() {
            if i != last {
                upsample.push(Conv3::new(&mut store, rng, &format!("up.{i}.upsample"), chans[i + 1], chans[i], 1)?);
            }
            up.push(Stage::new(&mut store, rng, &format!("up.{i}"), 2 * chans[i], chans[i], &config)?);
        }
        let out_norm = (store.add_ones("out.norm.gamma", &[base])?, store.add_zeros("out.norm.beta", &[base])?);
        let out_conv = Conv3::zeros(&mut store, "out.conv", chans[0], config.image_channels)?;
        Ok(Self { config, params: store, init, time, down, downsample, mid, mid_res, upsample, up, out_norm, out_conv })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    /// Names of parameters that belong to temporal layers.
    pub fn is_temporal_param(name: &str) -> bool {
        name.split('.').any(|part| part == "temporal")
    }

    fn check_input(&self, shape: &[usize], batch: usize) -> Result<()> {
        let c = &self.config;
        let want = [batch, c.frames, c.image_channels, c.height, c.width];
        if shape != want {
            return Err(Error::shape("unet input", &want, shape));
        }
        Ok(())
    }

    /// Noise prediction for `x`: `[B, L, C, H, W]` at steps `ts` (one per
    /// batch element). Parameters must already be bound on `g`.
    pub fn forward(&self, g: &mut Graph<S>, x: Var, ts: &[usize]) -> Result<Var> {
        let batch = ts.len();
        self.check_input(g.shape(x), batch)?;
        let c = &self.config;
        let frames = c.frames;
        let flat = g.reshape(x, &[batch * frames, c.image_channels, c.height, c.width])?;
        let emb = self.time.forward(g, ts)?;
        let mut h = self.init.forward(g, flat)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for (i, stage) in self.down.iter().enumerate() {
            h = stage.forward(g, h, emb, batch, frames)?;
            skips.push(h);
            if let Some(ds) = self.downsample.get(i) {
                h = ds.forward(g, h)?;
            }
        }
        h = self.mid.forward(g, h, emb, batch, frames)?;
        h = self.mid_res.forward(g, h, emb)?;
        let mut ups = self.upsample.iter();
        for (j, stage) in self.up.iter().enumerate() {
            if j > 0 {
                let up = g.upsample2x(h)?;
                h = ups.next().expect("one upsampler per inner stage").forward(g, up)?;
            }
            let skip = skips.pop().expect("one skip per stage");
            let cat = g.concat(h, skip, 1)?;
            h = stage.forward(g, cat, emb, batch, frames)?;
        }
        let h = g.group_norm(h, c.norm_groups, g.param(self.out_norm.0), g.param(self.out_norm.1))?;
        let h = g.silu(h)?;
        let out = self.out_conv.forward(g, h)?;
        g.reshape(out, &[batch, frames, c.image_channels, c.height, c.width])
    }

    /// Inference with the given parameter values (e.g. EMA weights).
    pub fn predict_with(&self, params: &ParamStore<S>, x: &Tensor<S>, ts: &[usize]) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        g.bind_params(params, false)?;
        let xv = g.input(x.clone())?;
        let y = self.forward(&mut g, xv, ts)?;
        Ok(g.value(y).clone())
    }

    pub fn predict(&self, x: &Tensor<S>, ts: &[usize]) -> Result<Tensor<S>> {
        self.predict_with(&self.params, x, ts)
    }
}
