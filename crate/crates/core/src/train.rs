//! The noise-prediction training loop with Adam, parameter EMA, loss logs
//! and resumable checkpoints.
//!
//! Step `k` draws its batch, diffusion steps and noise from a stream keyed
//! by `(seed, k)`, so a run resumed from a checkpoint at step `k` reproduces
//! the losses of an uninterrupted run.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::data::VideoFile;
use crate::diffusion::{eps_loss_graph, make_noise_schedule, DiffusionBatch, NoiseSchedule};
use crate::error::{Error, Result};
use crate::graph::grad;
use crate::optim::{adam_step, ema_update, AdamConfig, AdamState, EmaState};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::unet::{UNetConfig, VideoUNet};

/// Trailing window of the smoothed loss.
pub const SMOOTHING_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub adam: AdamConfig,
    pub ema_decay: f64,
    pub seed: u64,
}

/// Mean of the last `window` values (all of them if fewer).
pub fn smoothed_loss(losses: &[f64], window: usize) -> Option<f64> {
    if losses.is_empty() || window == 0 {
        return None;
    }
    let tail = &losses[losses.len().saturating_sub(window)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

pub struct Trainer<S: Scalar> {
    pub model: VideoUNet<S>,
    pub schedule: NoiseSchedule,
    pub adam: AdamState<S>,
    pub ema: EmaState<S>,
    /// Number of completed optimizer steps.
    pub step: u64,
    pub batch: usize,
    pub seed: u64,
    clips: Vec<Tensor<S>>,
}

fn check_clips<S: Scalar>(config: &UNetConfig, clips: &[VideoFile]) -> Result<Vec<Tensor<S>>> {
    if clips.is_empty() {
        return Err(Error::Data("training needs at least one clip".into()));
    }
    let want = [config.frames, config.image_channels, config.height, config.width];
    clips
        .iter()
        .map(|c| {
            if c.shape() != want {
                return Err(Error::Data(format!("clip extents {:?} do not match the model's {:?}", c.shape(), want)));
            }
            Ok(c.to_tensor())
        })
        .collect()
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: VideoUNet<S>, schedule: NoiseSchedule, clips: &[VideoFile], config: &TrainConfig) -> Result<Self> {
        if config.batch == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        let clips = check_clips(&model.config, clips)?;
        let adam = AdamState::new(&model.params, config.adam);
        let ema = EmaState::new(&model.params, config.ema_decay)?;
        Ok(Self { model, schedule, adam, ema, step: 0, batch: config.batch, seed: config.seed, clips })
    }

    /// Continues a run from `ckpt`, which must carry EMA and Adam state.
    pub fn resume(ckpt: &Checkpoint<S>, clips: &[VideoFile]) -> Result<Self> {
        let model_cfg = UNetConfig::from_pairs(&ckpt.config)?;
        let mut model = VideoUNet::build(model_cfg, &Rng::new(0))?;
        ckpt.load_params_into(&mut model.params)?;
        let key = |k: &str| -> Result<&str> {
            ckpt.get(k).ok_or_else(|| Error::Malformed { what: "checkpoint", detail: format!("missing key `{k}`") })
        };
        fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Malformed { what: "checkpoint", detail: format!("bad value `{v}` for `{k}`") })
        }
        let schedule = make_noise_schedule(
            parse("diffusion_steps", key("diffusion_steps")?)?,
            parse("beta_start", key("beta_start")?)?,
            parse("beta_end", key("beta_end")?)?,
        )?;
        let missing = |what: &str| Error::Malformed { what: "checkpoint", detail: format!("no {what} state to resume from") };
        Ok(Self {
            clips: check_clips(&model.config, clips)?,
            model,
            schedule,
            adam: ckpt.adam.clone().ok_or_else(|| missing("optimizer"))?,
            ema: ckpt.ema.clone().ok_or_else(|| missing("EMA"))?,
            step: ckpt.step,
            batch: parse("batch", key("batch")?)?,
            seed: parse("seed", key("seed")?)?,
        })
    }

    fn draw_batch(&self, rng: &mut Rng) -> Result<DiffusionBatch<S>> {
        let picks: Vec<Tensor<S>> = (0..self.batch).map(|_| self.clips[rng.int_inclusive(0, self.clips.len() - 1)].clone()).collect();
        DiffusionBatch::draw(Tensor::stack(&picks)?, &self.schedule, rng)
    }

    /// One optimizer step; returns the loss before the update.
    pub fn train_step(&mut self) -> Result<f64> {
        let mut rng = Rng::new(self.seed).fork_named("train").fork(self.step);
        let batch = self.draw_batch(&mut rng)?;
        let (loss, grads) = grad(&self.model.params, |g| eps_loss_graph(g, &self.model, &batch, &self.schedule))?;
        adam_step(&mut self.model.params, &grads, &mut self.adam)?;
        ema_update(&mut self.ema, &self.model.params)?;
        self.step += 1;
        Ok(loss.as_f64())
    }

    pub fn checkpoint(&self) -> Checkpoint<S> {
        let mut config = self.model.config.to_pairs();
        let sched = &self.schedule;
        let betas = sched.betas();
        config.extend([
            ("diffusion_steps".to_string(), sched.steps().to_string()),
            ("beta_start".to_string(), betas[0].to_string()),
            ("beta_end".to_string(), betas[betas.len() - 1].to_string()),
            ("batch".to_string(), self.batch.to_string()),
            ("seed".to_string(), self.seed.to_string()),
        ]);
        Checkpoint {
            config,
            step: self.step,
            params: self.model.params.clone(),
            ema: Some(self.ema.clone()),
            adam: Some(self.adam.clone()),
        }
    }
}

/// Appends `step,loss` rows, writing the header when the file is new.
pub fn append_loss_log(path: &Path, rows: &[(u64, f64)]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str("step,loss\n");
    }
    for (s, l) in rows {
        text.push_str(&format!("{s},{l}\n"));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("step,loss") {
        return Err(Error::Malformed { what: "loss log", detail: "missing `step,loss` header".into() });
    }
    lines
        .map(|l| {
            let bad = || Error::Malformed { what: "loss log", detail: format!("bad row `{l}`") };
            let (s, v) = l.split_once(',').ok_or_else(bad)?;
            Ok((s.parse().map_err(|_| bad())?, v.parse().map_err(|_| bad())?))
        })
        .collect()
}
