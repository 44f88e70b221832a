//! Synthetic clips: an antialiased square bouncing elastically inside the
//! frame, and palindromic clips whose second half mirrors the first.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::video::VideoFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SynthKind {
    #[default]
    BouncingShape,
    MirroredSequence,
}

impl SynthKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::BouncingShape => "bouncing_shape",
            SynthKind::MirroredSequence => "mirrored_sequence",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bouncing_shape" => Ok(SynthKind::BouncingShape),
            "mirrored_sequence" => Ok(SynthKind::MirroredSequence),
            other => Err(Error::config(format!("unknown synth kind `{other}` (bouncing_shape | mirrored_sequence)"))),
        }
    }
}

/// Generator settings. Sizes and speeds are in pixels and pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub frames: usize,
    pub resolution: usize,
    pub channels: usize,
    pub size: (f64, f64),
    pub speed: (f64, f64),
    /// Fixed velocity `(dx, dy)` instead of a random direction and speed.
    pub velocity: Option<(f64, f64)>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, frames: usize, resolution: usize) -> Self {
        let r = resolution as f64;
        Self {
            kind,
            frames,
            resolution,
            channels: 1,
            size: (r / 4.0, r / 3.0),
            speed: (r / 16.0, r / 6.0),
            velocity: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::config(format!("synthetic clips need at least 2 frames, got {}", self.frames)));
        }
        if self.resolution < 8 {
            return Err(Error::config(format!("synthetic resolution must be >= 8, got {}", self.resolution)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::config(format!("synthetic clips have 1 or 3 channels, got {}", self.channels)));
        }
        let (lo, hi) = self.size;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!("shape size range {lo}..{hi} is empty or non-positive")));
        }
        if hi > self.resolution as f64 {
            return Err(Error::config(format!("shape size {hi} larger than the {0}x{0} frame", self.resolution)));
        }
        let (lo, hi) = self.speed;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config(format!("speed range {lo}..{hi} is invalid")));
        }
        if self.kind == SynthKind::MirroredSequence && !self.frames.is_multiple_of(2) {
            return Err(Error::config(format!("mirrored sequences need an even frame count, got {}", self.frames)));
        }
        Ok(())
    }
}

/// Length of `[a, a + len)` inside the unit cell `[i, i + 1)`.
fn overlap(a: f64, len: f64, i: usize) -> f64 {
    let lo = a.max(i as f64);
    let hi = (a + len).min(i as f64 + 1.0);
    (hi - lo).max(0.0)
}

/// Reflects `p` into `[0, span]`, flipping `v` once per wall hit.
fn bounce(mut p: f64, mut v: f64, span: f64) -> (f64, f64) {
    if span <= 0.0 {
        return (0.0, 0.0);
    }
    loop {
        if p < 0.0 {
            p = -p;
            v = -v;
        } else if p > span {
            p = 2.0 * span - p;
            v = -v;
        } else {
            return (p, v);
        }
    }
}

/// Pixel value `-1 + (color + 1) * coverage`, where coverage is the exact
/// area of the pixel covered by the square.
fn render(out: &mut [f32], res: usize, color: &[f64], x: f64, y: f64, side: f64) {
    let plane = res * res;
    for row in 0..res {
        let cy = overlap(y, side, row);
        for col in 0..res {
            let cov = cy * overlap(x, side, col);
            for (c, &k) in color.iter().enumerate() {
                out[c * plane + row * res + col] = (-1.0 + (k + 1.0) * cov) as f32;
            }
        }
    }
}

fn bouncing_frames(spec: &SynthSpec, frames: usize, rng: &mut Rng) -> Result<VideoFile> {
    let res = spec.resolution;
    let side = rng.uniform_range(spec.size.0, spec.size.1);
    let span = res as f64 - side;
    let mut x = rng.uniform_range(0.0, span);
    let mut y = rng.uniform_range(0.0, span);
    let (mut vx, mut vy) = match spec.velocity {
        Some(v) => v,
        None => {
            let speed = rng.uniform_range(spec.speed.0, spec.speed.1);
            let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
            (speed * angle.cos(), speed * angle.sin())
        }
    };
    let color: Vec<f64> = if spec.channels == 1 { vec![1.0] } else { (0..spec.channels).map(|_| rng.uniform_range(0.0, 1.0)).collect() };
    let frame_len = spec.channels * res * res;
    let mut data = vec![0f32; frames * frame_len];
    for k in 0..frames {
        render(&mut data[k * frame_len..(k + 1) * frame_len], res, &color, x, y, side);
        (x, vx) = bounce(x + vx, vx, span);
        (y, vy) = bounce(y + vy, vy, span);
    }
    VideoFile::new(frames, spec.channels, res, res, data)
}

/// A single square translating with elastic wall bounces; background -1,
/// shape +1 (or a random colour per channel), antialiased by area coverage.
pub fn gen_bouncing_shape(spec: &SynthSpec, rng: &mut Rng) -> Result<VideoFile> {
    spec.validate()?;
    bouncing_frames(spec, spec.frames, rng)
}

/// Horizontal mirror of one frame (every channel plane).
pub fn hflip_frame(frame: &[f32], width: usize) -> Vec<f32> {
    frame.chunks_exact(width).flat_map(|row| row.iter().rev().copied()).collect()
}

/// A bouncing-shape first half followed by its time-reversed horizontal
/// mirror, so `frame[k] == hflip(frame[L-1-k])` for every `k`.
pub fn gen_mirrored_sequence(spec: &SynthSpec, rng: &mut Rng) -> Result<VideoFile> {
    if !spec.frames.is_multiple_of(2) {
        return Err(Error::config(format!("mirrored sequences need an even frame count, got {}", spec.frames)));
    }
    spec.validate()?;
    let half = bouncing_frames(spec, spec.frames / 2, rng)?;
    let mut data = half.data().to_vec();
    for k in (0..half.frames).rev() {
        data.extend(hflip_frame(half.frame(k), spec.resolution));
    }
    VideoFile::new(spec.frames, spec.channels, spec.resolution, spec.resolution, data)
}

pub fn generate(spec: &SynthSpec, rng: &mut Rng) -> Result<VideoFile> {
    match spec.kind {
        SynthKind::BouncingShape => gen_bouncing_shape(spec, rng),
        SynthKind::MirroredSequence => gen_mirrored_sequence(spec, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounce_reflects() {
        assert_eq!(bounce(-1.0, -2.0, 10.0), (1.0, 2.0));
        assert_eq!(bounce(12.0, 3.0, 10.0), (8.0, -3.0));
        assert_eq!(bounce(5.0, 1.0, 10.0), (5.0, 1.0));
    }

    #[test]
    fn coverage_is_exact_area() {
        let mut out = vec![0f32; 64];
        render(&mut out, 8, &[1.0], 1.5, 2.25, 3.0);
        let area: f64 = out.iter().map(|&v| (v as f64 + 1.0) / 2.0).sum();
        assert!((area - 9.0).abs() < 1e-5);
    }

    #[test]
    fn spec_errors() {
        let mut s = SynthSpec::new(SynthKind::BouncingShape, 4, 8);
        s.size = (9.0, 9.0);
        assert!(matches!(gen_bouncing_shape(&s, &mut Rng::new(0)), Err(Error::Config(_))));
        let s = SynthSpec::new(SynthKind::MirroredSequence, 5, 8);
        assert!(matches!(gen_mirrored_sequence(&s, &mut Rng::new(0)), Err(Error::Config(_))));
        assert!(SynthSpec::new(SynthKind::BouncingShape, 1, 8).validate().is_err());
        assert!(SynthSpec::new(SynthKind::BouncingShape, 2, 7).validate().is_err());
        assert_eq!("mirrored_sequence".parse::<SynthKind>().unwrap(), SynthKind::MirroredSequence);
    }
}
