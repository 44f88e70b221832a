//! 8-bit PGM (grayscale) and PPM (RGB) frame dumps.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::video::VideoFile;

/// Linear map `[-1, 1] -> [0, 255]`, rounding half up.
pub fn quantize(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) as f64 + 1.0) * 127.5 + 0.5).floor() as u8
}

/// Inverse of [`quantize`] up to half a quantization step (1/255).
pub fn dequantize(b: u8) -> f32 {
    (b as f64 / 127.5 - 1.0) as f32
}

/// Writes `frame_0000.pgm`, ... (or `.ppm` for 3 channels) into `dir`,
/// creating it if needed; returns the paths in frame order.
pub fn export_frames_pgm(video: &VideoFile, dir: &Path) -> Result<Vec<PathBuf>> {
    let (magic, ext) = match video.channels {
        1 => ("P5", "pgm"),
        3 => ("P6", "ppm"),
        c => return Err(Error::config(format!("frame export supports 1 or 3 channels, got {c}"))),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let plane = video.height * video.width;
    let mut paths = Vec::with_capacity(video.frames);
    for k in 0..video.frames {
        let frame = video.frame(k);
        let mut bytes = format!("{magic}\n{} {}\n255\n", video.width, video.height).into_bytes();
        // planar channels -> interleaved pixels
        for p in 0..plane {
            bytes.extend((0..video.channels).map(|c| quantize(frame[c * plane + p])));
        }
        let path = dir.join(format!("frame_{k:04}.{ext}"));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
