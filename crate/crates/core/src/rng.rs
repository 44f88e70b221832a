//! Counter-based deterministic random streams.
//!
//! Backed by ChaCha8, whose keystream is a pure function of (key, stream,
//! block counter). [`Rng::fork`] derives independent streams without consuming
//! the parent, so workers and training steps can each own a reproducible stream.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{validate_shape, Tensor};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Clone, Debug)]
pub struct Rng {
    key: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(key: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(key);
        inner.set_stream(stream);
        Self { key, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.key
    }

    /// Independent child stream `id`; does not advance `self`.
    pub fn fork(&self, id: u64) -> Rng {
        let key = splitmix64(self.key ^ splitmix64(self.stream.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self::with_stream(key, id)
    }

    /// Child stream keyed by a name (stable across runs and platforms).
    pub fn fork_named(&self, name: &str) -> Rng {
        self.fork(fnv1a(name.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

/// I.i.d. standard normal tensor of the given extents.
pub fn gaussian_sample<S: Scalar>(rng: &mut Rng, shape: &[usize]) -> Result<Tensor<S>> {
    let n = validate_shape(shape)?;
    let data = (0..n).map(|_| S::of(rng.normal())).collect();
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

/// Uniform(-bound, bound) tensor.
pub fn uniform_sample<S: Scalar>(rng: &mut Rng, shape: &[usize], bound: f64) -> Result<Tensor<S>> {
    let n = validate_shape(shape)?;
    let data = (0..n).map(|_| S::of(rng.uniform_range(-bound, bound))).collect();
    Ok(Tensor::from_parts(shape.to_vec(), data))
}
