//! A dataset directory: flat `.vvid` files plus `manifest.txt`, one
//! `<filename> <seed>` line per clip.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::synth::{generate, SynthSpec};
use super::video::{read_video, write_video, VideoFile};

pub const MANIFEST: &str = "manifest.txt";

/// Per-clip seed derived from the dataset seed; distinct for distinct indices.
pub fn clip_seed(dataset_seed: u64, index: usize) -> u64 {
    Rng::new(dataset_seed).fork(index as u64).next_u64()
}

/// Generates `count` clips in parallel; clip `i` depends only on
/// `(spec, clip_seed(spec.seed, i))`.
pub fn generate_clips(spec: &SynthSpec, count: usize) -> Result<Vec<(u64, VideoFile)>> {
    if count == 0 {
        return Err(Error::config("dataset size must be at least 1"));
    }
    spec.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = clip_seed(spec.seed, i);
            Ok((seed, generate(spec, &mut Rng::new(seed))?))
        })
        .collect()
}

/// Errors if `dir` exists and is non-empty, unless `force`, in which case
/// the directory is cleared first.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            if !force {
                return Err(Error::config(format!("output directory {} is not empty (pass --force to overwrite)", dir.display())));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_dataset(dir: &Path, clips: &[(u64, VideoFile)], force: bool) -> Result<Vec<PathBuf>> {
    prepare_out_dir(dir, force)?;
    let mut manifest = String::new();
    let mut paths = Vec::with_capacity(clips.len());
    for (i, (seed, video)) in clips.iter().enumerate() {
        let name = format!("clip_{i:05}.vvid");
        let path = dir.join(&name);
        write_video(&path, video)?;
        manifest.push_str(&format!("{name} {seed}\n"));
        paths.push(path);
    }
    let m = dir.join(MANIFEST);
    fs::write(&m, manifest).map_err(|e| Error::io(&m, e))?;
    Ok(paths)
}

/// Clip paths from the manifest, or every `.vvid` file in name order when
/// there is no manifest (externally converted data).
pub fn list_dataset(dir: &Path) -> Result<Vec<PathBuf>> {
    let m = dir.join(MANIFEST);
    let paths: Vec<PathBuf> = if m.exists() {
        let text = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let name = l.split_whitespace().next().expect("non-empty line");
                dir.join(name)
            })
            .collect()
    } else {
        let mut v: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "vvid"))
            .collect();
        v.sort();
        v
    };
    if paths.is_empty() {
        return Err(Error::Data(format!("dataset {} contains no clips", dir.display())));
    }
    Ok(paths)
}

/// Loads every clip and checks they share one set of extents.
pub fn load_dataset(dir: &Path) -> Result<Vec<VideoFile>> {
    let clips = list_dataset(dir)?.iter().map(|p| read_video(p)).collect::<Result<Vec<_>>>()?;
    let first = clips[0].shape();
    if let Some(bad) = clips.iter().find(|c| c.shape() != first) {
        return Err(Error::Data(format!("dataset clips disagree on extents: {:?} vs {:?}", first, bad.shape())));
    }
    Ok(clips)
}
