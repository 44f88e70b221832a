//! The `.vvid` container: a 4-byte magic, a `u16` version, four `u32` extents
//! (frames, channels, height, width) and a frame-major `f32` payload, all
//! little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const VIDEO_MAGIC: [u8; 4] = *b"VVID";
pub const VIDEO_VERSION: u16 = 1;
const HEADER_BYTES: usize = 4 + 2 + 4 * 4;

/// A clip with values in `[-1, 1]`, stored `[frames, channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFile {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

fn check_range(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !(-1.0..=1.0).contains(v)) {
        Some(index) => Err(Error::ValueOutOfRange { index, value: data[index] }),
        None => Ok(()),
    }
}

impl VideoFile {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let dims = [frames, channels, height, width];
        if dims.contains(&0) || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::InvalidShape(dims.to_vec()));
        }
        let n = dims.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::shape("VideoFile payload", &[n], &[data.len()]));
        }
        check_range(&data)?;
        Ok(Self { frames, channels, height, width, data })
    }

    /// From a `[L, C, H, W]` tensor; values must already lie in `[-1, 1]`.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Result<Self> {
        let &[l, c, h, w] = t.shape() else {
            return Err(Error::Malformed { what: "video tensor", detail: format!("expected 4 axes, got {:?}", t.shape()) });
        };
        Self::new(l, c, h, w, t.data().iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::from_parts(self.shape().to_vec(), self.data.iter().map(|&v| S::of(v as f64)).collect())
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, k: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + 4 * self.data.len());
        out.extend_from_slice(&VIDEO_MAGIC);
        out.extend_from_slice(&VIDEO_VERSION.to_le_bytes());
        for d in self.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated { what: "video header", expected: HEADER_BYTES, actual: bytes.len() });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != VIDEO_MAGIC {
            return Err(Error::BadMagic { expected: VIDEO_MAGIC, found: magic });
        }
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Truncated { what: "video header", expected: HEADER_BYTES, actual: bytes.len() });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VIDEO_VERSION {
            return Err(Error::UnsupportedVersion { found: version, supported: VIDEO_VERSION });
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().expect("4 bytes")) as usize;
        let (frames, channels, height, width) = (dim(0), dim(1), dim(2), dim(3));
        let n = frames
            .checked_mul(channels)
            .and_then(|v| v.checked_mul(height))
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::Malformed { what: "video header", detail: "extents overflow".into() })?;
        let expected = n * 4;
        let payload = &bytes[HEADER_BYTES..];
        if payload.len() < expected {
            return Err(Error::Truncated { what: "video payload", expected, actual: payload.len() });
        }
        if payload.len() > expected {
            return Err(Error::Malformed {
                what: "video payload",
                detail: format!("{} trailing bytes after {expected}", payload.len() - expected),
            });
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Self::new(frames, channels, height, width, data)
    }
}

pub fn write_video(path: &Path, video: &VideoFile) -> Result<()> {
    fs::write(path, video.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_video(path: &Path) -> Result<VideoFile> {
    VideoFile::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip() -> VideoFile {
        VideoFile::new(2, 1, 2, 2, vec![-1.0, 0.0, 0.5, 1.0, 0.25, -0.25, 1.0, -1.0]).unwrap()
    }

    #[test]
    fn byte_layout() {
        let b = clip().to_bytes();
        assert_eq!(&b[..4], b"VVID");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..10], &[2, 0, 0, 0]);
        assert_eq!(b.len(), HEADER_BYTES + 32);
        assert_eq!(&b[HEADER_BYTES..HEADER_BYTES + 4], &(-1.0f32).to_le_bytes());
        assert_eq!(VideoFile::from_bytes(&b).unwrap(), clip());
    }

    #[test]
    fn truncation_names_both_counts() {
        let b = clip().to_bytes();
        let err = VideoFile::from_bytes(&b[..b.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 32, actual: 29, .. }), "{err}");
        assert!(err.to_string().contains("expected 32 bytes, found 29"));
    }

    #[test]
    fn bad_header_fields() {
        let mut b = clip().to_bytes();
        b[4] = 9;
        assert!(matches!(VideoFile::from_bytes(&b), Err(Error::UnsupportedVersion { found: 9, supported: 1 })));
        b[0] = b'X';
        assert!(matches!(VideoFile::from_bytes(&b), Err(Error::BadMagic { .. })));
        let mut b = clip().to_bytes();
        b.push(0);
        assert!(matches!(VideoFile::from_bytes(&b), Err(Error::Malformed { .. })));
    }

    #[test]
    fn out_of_range_values_rejected() {
        let err = VideoFile::new(1, 1, 1, 2, vec![0.0, 1.5]).unwrap_err();
        assert!(matches!(err, Error::ValueOutOfRange { index: 1, value } if value == 1.5));
        assert!(VideoFile::new(1, 1, 1, 1, vec![f32::NAN]).is_err());
        assert!(VideoFile::new(1, 1, 1, 2, vec![0.0]).is_err());
    }
}
