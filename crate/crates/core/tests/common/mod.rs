#![allow(dead_code)]

use ssmvdm_core::rng::{gaussian_sample, uniform_sample};
use ssmvdm_core::ssm::{SelectiveInputs, SsmCore};
use ssmvdm_core::{ParamStore, Rng, Scalar, Tensor};

/// Adds gaussian noise of width `std` to every parameter so zero-initialised
/// projections do not mask a path.
pub fn jitter<S: Scalar>(store: &mut ParamStore<S>, rng: &mut Rng, std: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let cur = store.get(id).clone();
        let noise: Tensor<S> = gaussian_sample(rng, cur.shape()).unwrap();
        store.set(id, cur.add(&noise.scale(S::of(std))).unwrap()).unwrap();
    }
}

/// `max |a - b| / max |b|`, the infinity-norm relative error against `b`.
pub fn rel_inf<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    let diff = a.max_abs_diff(b).unwrap().as_f64();
    let scale = b.data().iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
    diff / scale.max(f64::MIN_POSITIVE)
}

/// A random scan instance with `A` in [-2, -0.05] and step sizes in
/// [0.01, 1].
pub fn scan_instance<S: Scalar>(rng: &mut Rng, g: usize, l: usize, d: usize, n: usize) -> (SsmCore<S>, SelectiveInputs<S>) {
    let a: Tensor<S> = uniform_sample::<S>(rng, &[d, n], 1.0).unwrap().map(|v: S| S::of(-1.025 + 0.975 * v.as_f64()));
    let delta: Tensor<S> = uniform_sample::<S>(rng, &[g, l, d], 1.0).unwrap().map(|v: S| S::of(0.505 + 0.495 * v.as_f64()));
    let core = SsmCore { a, d_skip: gaussian_sample(rng, &[d]).unwrap() };
    let inputs = SelectiveInputs {
        u: gaussian_sample(rng, &[g, l, d]).unwrap(),
        b: gaussian_sample(rng, &[g, l, n]).unwrap(),
        c: gaussian_sample(rng, &[g, l, n]).unwrap(),
        delta,
    };
    (core, inputs)
}
