use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ssmvdm_cli::commands::{cmd_bench, cmd_gen_data, cmd_gradcheck, cmd_sample, cmd_train};
use ssmvdm_cli::{exit_code, thread_cap, RunConfig, EXIT_GRADCHECK, THREADS_ENV};
use ssmvdm_core::graph::GradFault;
use ssmvdm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ssmvdm", version, about = "Video diffusion with state-space temporal layers")]
struct Cli {
    /// Flat `key = value` run configuration; omitted keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Allows overwriting a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to `dataset_dir`.
    GenData,
    /// Train on `dataset_dir`, writing checkpoints and `loss.csv` to `out_dir`.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample videos with a checkpoint's EMA weights.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Defaults to `<out_dir>/samples`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Peak activation memory and wall time of both temporal layers over the
    /// configured sequence lengths.
    Bench,
    /// Finite-difference check of every differentiable primitive and layer.
    Gradcheck {
        /// Scale the backward rule of this tape op, to prove detection.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = thread_cap(std::env::var(THREADS_ENV).ok().as_deref())? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("cannot size the worker pool: {e}")))?;
    }
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let mut out = io::stdout();
    match cli.command {
        Command::GenData => {
            let paths = cmd_gen_data(&config, cli.force)?;
            println!("wrote {} clips to {}", paths.len(), config.dataset_dir.display());
        }
        Command::Train { resume } => {
            let s = cmd_train(&config, cli.force, resume.as_deref(), &mut out)?;
            if let Some(l) = s.smoothed_loss {
                println!("finished at step {} with smoothed loss {l:.5}", s.steps);
            }
        }
        Command::Sample { checkpoint, count, out: dir } => {
            let dir = dir.unwrap_or_else(|| config.out_dir.join("samples"));
            let paths = cmd_sample(&checkpoint, count, config.seed, &dir, cli.force)?;
            println!("wrote {} samples to {}", paths.len(), dir.display());
        }
        Command::Bench => {
            cmd_bench(&config, &mut out)?;
        }
        Command::Gradcheck { inject_fault } => {
            let fault = inject_fault.map(|op| GradFault { op: Box::leak(op.into_boxed_str()), factor: 2.0 });
            let reports = cmd_gradcheck(fault, &mut out)?;
            if reports.iter().any(|r| !r.passed) {
                return Ok(EXIT_GRADCHECK);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
