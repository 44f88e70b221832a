//! The `.vdmc` checkpoint container.
//!
//! Layout (little-endian): magic `VDMC`, `u16` version, `u8` element width
//! (4 or 8), `u64` training step, the key/value config pairs, the parameter
//! list, then an optional EMA section and an optional Adam section, each
//! introduced by a presence byte. Tensors are stored as name, rank, extents
//! and raw elements in declaration order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState, EmaState};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VDMC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint<S: Scalar> {
    /// Free-form configuration pairs (model extents, training settings).
    pub config: Vec<(String, String)>,
    pub step: u64,
    pub params: ParamStore<S>,
    pub ema: Option<EmaState<S>>,
    pub adam: Option<AdamState<S>>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn elems<S: Scalar>(&mut self, t: &Tensor<S>) {
        self.u32(t.ndim());
        for &d in t.shape() {
            self.u32(d);
        }
        for &v in t.data() {
            if S::BYTES == 4 {
                self.0.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                self.f64(v.as_f64());
            }
        }
    }
    fn store<S: Scalar>(&mut self, store: &ParamStore<S>) {
        self.u32(store.len());
        for p in store.iter() {
            self.str(&p.name);
            self.elems(&p.value);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let rest = self.bytes.len() - self.pos;
        if n > rest {
            return Err(Error::Truncated { what: "checkpoint", expected: self.pos + n, actual: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Malformed { what: "checkpoint", detail: format!("section flag {b} is neither 0 nor 1") }),
        }
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Malformed { what: "checkpoint", detail: "string is not UTF-8".into() })
    }
    fn elems<S: Scalar>(&mut self) -> Result<Tensor<S>> {
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let n = crate::tensor::validate_shape(&shape)?;
        let raw = self.take(n.checked_mul(S::BYTES).ok_or_else(|| Error::InvalidShape(shape.clone()))?)?;
        let data = if S::BYTES == 4 {
            raw.chunks_exact(4).map(|c| S::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)).collect()
        } else {
            raw.chunks_exact(8).map(|c| S::of(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect()
        };
        Tensor::new(&shape, data)
    }
    fn store<S: Scalar>(&mut self) -> Result<ParamStore<S>> {
        let n = self.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let name = self.str()?;
            let value = self.elems()?;
            store.add(name, value);
        }
        Ok(store)
    }
}

fn congruent<S: Scalar>(what: &str, a: &ParamStore<S>, b: &ParamStore<S>) -> Result<()> {
    let same = a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.name == y.name && x.value.shape() == y.value.shape());
    if !same {
        return Err(Error::Malformed { what: "checkpoint", detail: format!("{what} does not match the parameter list") });
    }
    Ok(())
}

impl<S: Scalar> Checkpoint<S> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&CHECKPOINT_MAGIC);
        w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        w.u8(S::BYTES as u8);
        w.u64(self.step);
        w.u32(self.config.len());
        for (k, v) in &self.config {
            w.str(k);
            w.str(v);
        }
        w.store(&self.params);
        w.u8(self.ema.is_some() as u8);
        if let Some(ema) = &self.ema {
            w.f64(ema.decay);
            w.store(&ema.shadow);
        }
        w.u8(self.adam.is_some() as u8);
        if let Some(adam) = &self.adam {
            let c = adam.config;
            for v in [c.lr, c.beta1, c.beta2, c.eps] {
                w.f64(v);
            }
            w.u64(adam.step);
            for t in adam.m.iter().chain(&adam.v) {
                w.elems(t);
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion { found: version, supported: CHECKPOINT_VERSION });
        }
        let width = r.u8()? as usize;
        if width != S::BYTES {
            return Err(Error::Malformed {
                what: "checkpoint",
                detail: format!("stored {width}-byte elements, loading as {}", S::NAME),
            });
        }
        let step = r.u64()?;
        let pairs = r.u32()?;
        let config = (0..pairs).map(|_| Ok((r.str()?, r.str()?))).collect::<Result<Vec<_>>>()?;
        let params = r.store::<S>()?;
        let ema = if r.flag()? {
            let decay = r.f64()?;
            let shadow = r.store::<S>()?;
            congruent("EMA shadow", &params, &shadow)?;
            Some(EmaState::with_shadow(&params, shadow.tensors(), decay)?)
        } else {
            None
        };
        let adam = if r.flag()? {
            let config = AdamConfig { lr: r.f64()?, beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
            let astep = r.u64()?;
            let m = (0..params.len()).map(|_| r.elems()).collect::<Result<Vec<_>>>()?;
            let v = (0..params.len()).map(|_| r.elems()).collect::<Result<Vec<_>>>()?;
            Some(AdamState::restore(&params, config, astep, m, v)?)
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::Malformed { what: "checkpoint", detail: format!("{} trailing bytes", bytes.len() - r.pos) });
        }
        Ok(Self { config, step, params, ema, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Value of a config key.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Copies stored values into `target`, which must have the same names and
    /// shapes in the same order.
    pub fn load_params_into(&self, target: &mut ParamStore<S>) -> Result<()> {
        congruent("model", &self.params, target)?;
        target.set_all(self.params.tensors())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::adam_step;

    fn sample() -> Checkpoint<f32> {
        let mut params = ParamStore::new();
        params.add("a.w", Tensor::new(&[2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap());
        params.add("a.b", Tensor::new(&[2], vec![0.5, -0.5]).unwrap());
        let mut adam = AdamState::new(&params, AdamConfig::default());
        let grads = vec![Tensor::full(&[2, 2], 0.1).unwrap(), Tensor::full(&[2], -0.2).unwrap()];
        adam_step(&mut params, &grads, &mut adam).unwrap();
        let ema = EmaState::new(&params, 0.99).unwrap();
        Checkpoint { config: vec![("frames".into(), "8".into())], step: 7, params, ema: Some(ema), adam: Some(adam) }
    }

    #[test]
    fn byte_exact_round_trip() {
        let c = sample();
        let b = c.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&b).unwrap();
        assert_eq!(back.to_bytes(), b);
        assert_eq!(back.step, 7);
        assert_eq!(back.get("frames"), Some("8"));
        assert_eq!(back.adam.unwrap().step, 1);
    }

    #[test]
    fn malformed_inputs() {
        let b = sample().to_bytes();
        assert!(matches!(Checkpoint::<f32>::from_bytes(&b[..b.len() - 1]), Err(Error::Truncated { .. })));
        let mut bad = b.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bad), Err(Error::UnsupportedVersion { found: 2, .. })));
        bad[1] = 0;
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(Checkpoint::<f64>::from_bytes(&b), Err(Error::Malformed { .. })));
    }
}
