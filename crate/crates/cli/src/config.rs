//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; unknown
//! or repeated keys are rejected. Defaults follow the reference training
//! hyperparameters (T = 256, Adam lr 1e-5, batch 8, EMA 0.9999, 100k steps,
//! multipliers 1,2,4,8); data extents default to desk scale.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ssmvdm_core::bench::STANDARD_GRID;
use ssmvdm_core::data::{SynthKind, SynthSpec};
use ssmvdm_core::diffusion::{make_noise_schedule, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
use ssmvdm_core::optim::{AdamConfig, ADAM_LR, EMA_DECAY};
use ssmvdm_core::train::TrainConfig;
use ssmvdm_core::unet::{TemporalKind, UNetConfig, DEFAULT_MULTIPLIERS};
use ssmvdm_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub synth_kind: SynthKind,
    /// Frames per clip.
    pub frames: usize,
    /// Square frame side in pixels.
    pub resolution: usize,
    pub channels: usize,
    /// Clips written by `gen-data`.
    pub clips: usize,
    pub temporal_kind: TemporalKind,
    pub base_channels: usize,
    pub multipliers: Vec<usize>,
    /// Diffusion steps T.
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lr: f64,
    pub batch: usize,
    pub steps: u64,
    pub ema_decay: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub checkpoint_every: u64,
    pub bench_lengths: Vec<usize>,
    pub bench_groups: usize,
    pub bench_channels: usize,
    pub bench_reps: usize,
    /// Activation budget per bench run; 0 means unbounded.
    pub bench_budget_bytes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_dir: PathBuf::from("data"),
            synth_kind: SynthKind::BouncingShape,
            frames: 16,
            resolution: 32,
            channels: 1,
            clips: 8,
            temporal_kind: TemporalKind::SsmBidirectional,
            base_channels: 64,
            multipliers: DEFAULT_MULTIPLIERS.to_vec(),
            diffusion_steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            lr: ADAM_LR,
            batch: 8,
            steps: 100_000,
            ema_decay: EMA_DECAY,
            seed: 0,
            out_dir: PathBuf::from("run"),
            checkpoint_every: 1000,
            bench_lengths: STANDARD_GRID.to_vec(),
            bench_groups: 64,
            bench_channels: 64,
            bench_reps: 3,
            bench_budget_bytes: 0,
        }
    }
}

pub const KEYS: [&str; 24] = [
    "dataset_dir",
    "synth_kind",
    "frames",
    "resolution",
    "channels",
    "clips",
    "temporal_kind",
    "base_channels",
    "multipliers",
    "diffusion_steps",
    "beta_start",
    "beta_end",
    "lr",
    "batch",
    "steps",
    "ema_decay",
    "seed",
    "out_dir",
    "checkpoint_every",
    "bench_lengths",
    "bench_groups",
    "bench_channels",
    "bench_reps",
    "bench_budget_bytes",
];

fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(format!("line {line}: bad value `{v}` for `{key}`")))
}

fn list(line: usize, key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| value(line, key, s.trim())).collect()
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::config(format!("line {n}: expected `key = value`, got `{line}`")))?;
            if seen.contains(&key) {
                return Err(Error::config(format!("line {n}: key `{key}` given twice")));
            }
            seen.push(key);
            match key {
                "dataset_dir" => cfg.dataset_dir = PathBuf::from(v),
                "synth_kind" => cfg.synth_kind = v.parse()?,
                "frames" => cfg.frames = value(n, key, v)?,
                "resolution" => cfg.resolution = value(n, key, v)?,
                "channels" => cfg.channels = value(n, key, v)?,
                "clips" => cfg.clips = value(n, key, v)?,
                "temporal_kind" => cfg.temporal_kind = v.parse()?,
                "base_channels" => cfg.base_channels = value(n, key, v)?,
                "multipliers" => cfg.multipliers = list(n, key, v)?,
                "diffusion_steps" => cfg.diffusion_steps = value(n, key, v)?,
                "beta_start" => cfg.beta_start = value(n, key, v)?,
                "beta_end" => cfg.beta_end = value(n, key, v)?,
                "lr" => cfg.lr = value(n, key, v)?,
                "batch" => cfg.batch = value(n, key, v)?,
                "steps" => cfg.steps = value(n, key, v)?,
                "ema_decay" => cfg.ema_decay = value(n, key, v)?,
                "seed" => cfg.seed = value(n, key, v)?,
                "out_dir" => cfg.out_dir = PathBuf::from(v),
                "checkpoint_every" => cfg.checkpoint_every = value(n, key, v)?,
                "bench_lengths" => cfg.bench_lengths = list(n, key, v)?,
                "bench_groups" => cfg.bench_groups = value(n, key, v)?,
                "bench_channels" => cfg.bench_channels = value(n, key, v)?,
                "bench_reps" => cfg.bench_reps = value(n, key, v)?,
                "bench_budget_bytes" => cfg.bench_budget_bytes = value(n, key, v)?,
                other => return Err(Error::config(format!("line {n}: unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key with its current value; `parse(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("writing to a String");
        put("dataset_dir", self.dataset_dir.display().to_string());
        put("synth_kind", self.synth_kind.to_string());
        put("frames", self.frames.to_string());
        put("resolution", self.resolution.to_string());
        put("channels", self.channels.to_string());
        put("clips", self.clips.to_string());
        put("temporal_kind", self.temporal_kind.to_string());
        put("base_channels", self.base_channels.to_string());
        put("multipliers", join(&self.multipliers));
        put("diffusion_steps", self.diffusion_steps.to_string());
        put("beta_start", self.beta_start.to_string());
        put("beta_end", self.beta_end.to_string());
        put("lr", self.lr.to_string());
        put("batch", self.batch.to_string());
        put("steps", self.steps.to_string());
        put("ema_decay", self.ema_decay.to_string());
        put("seed", self.seed.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("bench_lengths", join(&self.bench_lengths));
        put("bench_groups", self.bench_groups.to_string());
        put("bench_channels", self.bench_channels.to_string());
        put("bench_reps", self.bench_reps.to_string());
        put("bench_budget_bytes", self.bench_budget_bytes.to_string());
        s
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let mut spec = SynthSpec::new(self.synth_kind, self.frames, self.resolution);
        spec.channels = self.channels;
        spec.seed = self.seed;
        spec
    }

    pub fn unet_config(&self) -> Result<UNetConfig> {
        let mut cfg = UNetConfig::new(self.base_channels, self.temporal_kind, self.frames, self.channels, self.resolution, self.resolution);
        cfg.multipliers = self.multipliers.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_noise_schedule(self.diffusion_steps, self.beta_start, self.beta_end)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be at least 1"));
        }
        Ok(TrainConfig { batch: self.batch, adam: AdamConfig { lr: self.lr, ..AdamConfig::default() }, ema_decay: self.ema_decay, seed: self.seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = RunConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!((cfg.diffusion_steps, cfg.lr, cfg.batch, cfg.ema_decay), (256, 1e-5, 8, 0.9999));
        assert_eq!(cfg.multipliers, vec![1, 2, 4, 8]);
    }

    #[test]
    fn text_round_trip_covers_every_key() {
        let cfg = RunConfig { multipliers: vec![1, 2], synth_kind: SynthKind::MirroredSequence, beta_end: 0.03, ..RunConfig::default() };
        let text = cfg.to_text();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(text.lines().count(), KEYS.len());
        for (line, key) in text.lines().zip(KEYS) {
            assert!(line.starts_with(&format!("{key} = ")));
        }
    }

    #[test]
    fn unknown_repeated_and_malformed_lines_are_rejected() {
        for bad in ["colour = red", "seed = 1\nseed = 2", "seed 1", "batch = many", "temporal_kind = lstm"] {
            assert!(matches!(RunConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
