use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ssmvdm_cli::{EXIT_CONFIG, EXIT_DATA, EXIT_GRADCHECK};
use ssmvdm_core::data::read_video;
use ssmvdm_core::train::read_loss_log;

fn ssmvdm(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ssmvdm"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> u8 {
    o.status.code().expect("exited normally") as u8
}

/// Writes a tiny run configuration rooted at `dir`, with `extra` lines appended.
fn config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "dataset_dir = {d}/data\nout_dir = {d}/run\nframes = 2\nresolution = 8\nclips = 3\nbase_channels = 8\n\
         multipliers = 1,2\ndiffusion_steps = 8\nbatch = 2\nsteps = 4\ncheckpoint_every = 2\nlr = 1e-3\nema_decay = 0.9\n{extra}",
        d = dir.display()
    );
    let path = dir.join(format!("run{}.cfg", extra.len()));
    fs::write(&path, text).unwrap();
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_writes_a_reproducible_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "clips = 8\n");
    let cfg = fs::read_to_string(&cfg).unwrap().replace("clips = 3\n", "");
    let cfg_path = dir.path().join("eight.cfg");
    fs::write(&cfg_path, cfg).unwrap();
    let c = path_str(&cfg_path);
    assert_eq!(code(&ssmvdm(&["gen-data", "--config", c], &[])), 0);
    let data = dir.path().join("data");
    let manifest = fs::read_to_string(data.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 8);
    let first = fs::read(data.join("clip_00000.vvid")).unwrap();
    let again = ssmvdm(&["gen-data", "--config", c], &[]);
    assert_eq!(code(&again), EXIT_CONFIG, "non-empty directory needs --force");
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert_eq!(code(&ssmvdm(&["gen-data", "--config", c, "--force"], &[])), 0);
    assert_eq!(fs::read(data.join("clip_00000.vvid")).unwrap(), first);
    assert_eq!(code(&ssmvdm(&["gen-data", "--config", c, "--force", "--seed", "9"], &[])), 0);
    assert_ne!(fs::read(data.join("clip_00000.vvid")).unwrap(), first);
}

#[test]
fn configuration_errors_exit_with_the_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = config(dir.path(), "colour = blue\n");
    assert_eq!(code(&ssmvdm(&["gen-data", "--config", path_str(&unknown)], &[])), EXIT_CONFIG);
    let none = config(dir.path(), "clips = 0\n");
    let text = fs::read_to_string(&none).unwrap().replace("clips = 3\n", "");
    fs::write(&none, text).unwrap();
    assert_eq!(code(&ssmvdm(&["gen-data", "--config", path_str(&none)], &[])), EXIT_CONFIG);
    let ok = config(dir.path(), "");
    assert_eq!(code(&ssmvdm(&["gen-data", "--config", path_str(&ok)], &[("SSMVDM_THREADS", "0")])), EXIT_CONFIG);
    let single = config(dir.path(), "bench_lengths = 64\n");
    assert_eq!(code(&ssmvdm(&["bench", "--config", path_str(&single)], &[])), EXIT_CONFIG);
}

#[test]
fn train_resume_and_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let c = path_str(&cfg);
    assert_eq!(code(&ssmvdm(&["gen-data", "--config", c], &[])), 0);
    let out = ssmvdm(&["train", "--config", c], &[("SSMVDM_THREADS", "1")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    let log = read_loss_log(&run.join("loss.csv")).unwrap();
    assert_eq!(log.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    assert!((log[0].1 - 1.0).abs() < 0.3, "first loss {}", log[0].1);
    let mid = run.join("checkpoint_0000002.vdmc");
    let last = run.join("checkpoint_0000004.vdmc");
    assert!(mid.exists() && last.exists());

    // resuming from step 2 in a fresh directory reproduces steps 2 and 3
    let resumed_cfg = dir.path().join("resume.cfg");
    fs::write(&resumed_cfg, fs::read_to_string(&cfg).unwrap().replace("/run\n", "/resumed\n")).unwrap();
    let out = ssmvdm(&["train", "--config", path_str(&resumed_cfg), "--resume", path_str(&mid)], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rest = read_loss_log(&dir.path().join("resumed/loss.csv")).unwrap();
    assert_eq!(rest, log[2..].to_vec());

    let samples = dir.path().join("samples");
    let s = path_str(&samples);
    let out = ssmvdm(&["sample", "--checkpoint", path_str(&last), "--count", "2", "--out", s, "--seed", "3"], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v0 = read_video(&samples.join("sample_000.vvid")).unwrap();
    assert_eq!(v0.shape(), [2, 1, 8, 8]);
    assert!(v0.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(samples.join("sample_001.vvid").exists());
    assert_eq!(fs::read_dir(samples.join("sample_001")).unwrap().count(), 2);
    let bytes = fs::read(samples.join("sample_000.vvid")).unwrap();
    let out = ssmvdm(&["sample", "--checkpoint", path_str(&last), "--count", "1", "--out", s, "--seed", "3", "--force"], &[]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(samples.join("sample_000.vvid")).unwrap(), bytes);

    // a checkpoint from a future format version is a structured data error
    let mut raw = fs::read(&last).unwrap();
    raw[4] = 7;
    let future = dir.path().join("future.vdmc");
    fs::write(&future, raw).unwrap();
    let out = ssmvdm(&["sample", "--checkpoint", path_str(&future), "--out", s, "--force"], &[]);
    assert_eq!(code(&out), EXIT_DATA);
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn training_on_mismatched_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    assert_eq!(code(&ssmvdm(&["gen-data", "--config", path_str(&cfg)], &[])), 0);
    let wide = dir.path().join("wide.cfg");
    fs::write(&wide, fs::read_to_string(&cfg).unwrap().replace("frames = 2", "frames = 4")).unwrap();
    let out = ssmvdm(&["train", "--config", path_str(&wide)], &[]);
    assert_eq!(code(&out), EXIT_DATA);
    assert!(!dir.path().join("run").exists(), "nothing is written before the check");
}

#[test]
fn bench_writes_one_row_per_length_and_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "bench_lengths = 4,8,16,32\nbench_groups = 2\nbench_channels = 8\nbench_reps = 1\n");
    let out = ssmvdm(&["bench", "--config", path_str(&cfg)], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("attention: memory exponent"));
    assert!(stdout.contains("ssm_bidirectional: memory exponent"));
    let csv = fs::read_to_string(dir.path().join("run/bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
}

#[test]
fn gradcheck_passes_and_catches_a_corrupted_rule() {
    let out = ssmvdm(&["gradcheck"], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let report = String::from_utf8_lossy(&out.stdout);
    for name in ["selective_scan", "conv2d", "bidirectional ssm block", "temporal attention", "spatial linear attention", "residual conv block", "time-embedding mlp"] {
        assert!(report.contains(name), "report does not list {name}");
    }
    let out = ssmvdm(&["gradcheck", "--inject-fault", "selective_scan"], &[]);
    assert_eq!(code(&out), EXIT_GRADCHECK);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL selective_scan"));
}
