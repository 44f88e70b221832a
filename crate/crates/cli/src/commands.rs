//! The subcommands, as library functions so tests can drive them directly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ssmvdm_core::bench::{fit_scaling_exponent, measure_or_mark, write_bench_csv, BenchRecord};
use ssmvdm_core::checkpoint::Checkpoint;
use ssmvdm_core::data::{export_frames_pgm, generate_clips, load_dataset, prepare_out_dir, write_dataset, write_video, VideoFile};
use ssmvdm_core::diffusion::{make_noise_schedule, sample, WithParams};
use ssmvdm_core::gradcheck::{run_suite, standard_suite, CaseReport, GradcheckOptions};
use ssmvdm_core::graph::GradFault;
use ssmvdm_core::train::{append_loss_log, smoothed_loss, Trainer, SMOOTHING_WINDOW};
use ssmvdm_core::unet::{TemporalKind, UNetConfig, VideoUNet};
use ssmvdm_core::{Error, Result, Rng};

use crate::config::RunConfig;

pub const LOSS_LOG: &str = "loss.csv";
pub const BENCH_CSV: &str = "bench.csv";
/// Layer kinds compared by `bench`.
pub const BENCH_KINDS: [TemporalKind; 2] = [TemporalKind::Attention, TemporalKind::SsmBidirectional];

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

/// Writes `config.clips` clips plus a manifest into `config.dataset_dir`.
pub fn cmd_gen_data(config: &RunConfig, force: bool) -> Result<Vec<PathBuf>> {
    let clips = generate_clips(&config.synth_spec(), config.clips)?;
    write_dataset(&config.dataset_dir, &clips, force)
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint_{step:07}.vdmc"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    /// Mean loss over the trailing smoothing window of this invocation.
    pub smoothed_loss: Option<f64>,
    pub last_checkpoint: Option<PathBuf>,
}

/// Trains until `config.steps` optimizer steps have completed, logging
/// `step,loss` rows to `out_dir/loss.csv` (step is the 0-based index of the
/// update) and saving a checkpoint every `checkpoint_every` steps and at the
/// end. With `resume`, model, schedule, optimizer and seed come from the
/// checkpoint and the run continues in place.
pub fn cmd_train(config: &RunConfig, force: bool, resume: Option<&Path>, out: &mut dyn Write) -> Result<TrainSummary> {
    let clips = load_dataset(&config.dataset_dir)?;
    let train_cfg = config.train_config()?;
    let mut trainer = match resume {
        Some(path) => {
            fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
            Trainer::<f32>::resume(&Checkpoint::load(path)?, &clips)?
        }
        None => {
            let model = VideoUNet::build(config.unet_config()?, &Rng::new(config.seed).fork_named("init"))?;
            let trainer = Trainer::new(model, config.schedule()?, &clips, &train_cfg)?;
            prepare_out_dir(&config.out_dir, force)?;
            trainer
        }
    };
    emit(out, &format!("training {} parameters from step {} to {}", trainer.model.num_params(), trainer.step, config.steps))?;
    let log = config.out_dir.join(LOSS_LOG);
    let mut pending = Vec::new();
    let mut losses = Vec::new();
    let mut last_checkpoint = None;
    while trainer.step < config.steps {
        let step = trainer.step;
        let loss = trainer.train_step()?;
        pending.push((step, loss));
        losses.push(loss);
        if trainer.step % config.checkpoint_every == 0 || trainer.step == config.steps {
            append_loss_log(&log, &pending)?;
            pending.clear();
            let path = checkpoint_path(&config.out_dir, trainer.step);
            trainer.checkpoint().save(&path)?;
            let smooth = smoothed_loss(&losses, SMOOTHING_WINDOW).unwrap_or(f64::NAN);
            emit(out, &format!("step {} smoothed loss {smooth:.5} -> {}", trainer.step, path.display()))?;
            last_checkpoint = Some(path);
        }
    }
    Ok(TrainSummary { steps: trainer.step, smoothed_loss: smoothed_loss(&losses, SMOOTHING_WINDOW), last_checkpoint })
}

/// Reconstructs the network and schedule stored in a checkpoint.
pub fn model_from_checkpoint(ckpt: &Checkpoint<f32>) -> Result<(VideoUNet<f32>, ssmvdm_core::diffusion::NoiseSchedule)> {
    let mut model = VideoUNet::build(UNetConfig::from_pairs(&ckpt.config)?, &Rng::new(0))?;
    ckpt.load_params_into(&mut model.params)?;
    let key = |k: &str| -> Result<f64> {
        ckpt.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Malformed { what: "checkpoint", detail: format!("missing or bad `{k}`") })
    };
    let sched = make_noise_schedule(key("diffusion_steps")? as usize, key("beta_start")?, key("beta_end")?)?;
    Ok((model, sched))
}

/// Draws `count` videos with the checkpoint's EMA weights. Video `i` uses a
/// stream keyed by `(seed, i)`; writes `sample_XXX.vvid` and a
/// `sample_XXX/` directory of frame images into `out_dir`.
pub fn cmd_sample(checkpoint: &Path, count: usize, seed: u64, out_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    let ckpt = Checkpoint::<f32>::load(checkpoint)?;
    let ema = ckpt
        .ema
        .as_ref()
        .ok_or_else(|| Error::Malformed { what: "checkpoint", detail: "no EMA weights to sample with".into() })?;
    let (model, sched) = model_from_checkpoint(&ckpt)?;
    let c = &model.config;
    let shape = [1, c.frames, c.image_channels, c.height, c.width];
    let den = WithParams { model: &model, params: &ema.shadow };
    prepare_out_dir(out_dir, force)?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = Rng::new(seed).fork_named("sample").fork(i as u64);
        let x = sample(&den, &sched, &shape, &mut rng)?;
        let video = VideoFile::from_tensor(&x.index_axis0(0)?)?;
        let path = out_dir.join(format!("sample_{i:03}.vvid"));
        write_video(&path, &video)?;
        export_frames_pgm(&video, &out_dir.join(format!("sample_{i:03}")))?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone)]
pub struct BenchSummary {
    pub records: Vec<BenchRecord>,
    /// Fitted memory exponent per kind, in [`BENCH_KINDS`] order.
    pub exponents: Vec<(TemporalKind, f64)>,
}

/// Runs the grid for both kinds, writes `out_dir/bench.csv` and prints one
/// summary line per kind. Capacity failures become marked rows and are left
/// out of the fit.
pub fn cmd_bench(config: &RunConfig, out: &mut dyn Write) -> Result<BenchSummary> {
    let mut lens = config.bench_lengths.clone();
    lens.sort_unstable();
    lens.dedup();
    if lens.len() < 4 {
        return Err(Error::config(format!("bench grid needs at least 4 distinct lengths to fit an exponent, got {:?}", config.bench_lengths)));
    }
    let budget = (config.bench_budget_bytes > 0).then_some(config.bench_budget_bytes);
    let mut records = Vec::new();
    let mut exponents = Vec::new();
    for kind in BENCH_KINDS {
        let mut rows = Vec::new();
        for &l in &config.bench_lengths {
            let r = measure_or_mark(kind, l, config.bench_groups, config.bench_channels, config.bench_reps, budget)?;
            match (r.peak_bytes(), r.wall_ns()) {
                (Some(b), Some(ns)) => emit(out, &format!("{kind} L={l} peak_bytes={b} wall_ns={ns}"))?,
                _ => emit(out, &format!("{kind} L={l} capacity exceeded"))?,
            }
            rows.push(r);
        }
        let e = fit_scaling_exponent(&rows)?;
        emit(out, &format!("{kind}: memory exponent {e:.3}"))?;
        exponents.push((kind, e));
        records.extend(rows);
    }
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    write_bench_csv(&records, &config.out_dir.join(BENCH_CSV))?;
    Ok(BenchSummary { records, exponents })
}

/// Runs the 64-bit finite-difference suite and prints one line per case.
/// `fault` corrupts one backward rule so the harness can prove it detects it.
pub fn cmd_gradcheck(fault: Option<GradFault>, out: &mut dyn Write) -> Result<Vec<CaseReport>> {
    let opts = GradcheckOptions { fault, ..GradcheckOptions::default() };
    let reports = run_suite(&standard_suite(), &opts)?;
    for r in &reports {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        emit(
            out,
            &format!("{verdict} {:<28} entries={:<5} max_rel_err={:.2e} worst={}[{}]", r.name, r.entries, r.max_rel_err, r.worst.0, r.worst.1),
        )?;
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    emit(out, &format!("{} of {} checks passed", reports.len() - failed, reports.len()))?;
    Ok(reports)
}
