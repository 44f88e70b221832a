//! Adam and parameter EMA update rules.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ADAM_LR: f64 = 1e-5;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const EMA_DECAY: f64 = 0.9999;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: ADAM_LR, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS }
    }
}

/// Moment accumulators and step counter of Adam.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    /// Zero moments congruent with `params`.
    pub fn new(params: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<S>> = params.iter().map(|p| Tensor::zeros_like_shape(p.value.shape())).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros.iter().map(|z| Tensor::zeros_like_shape(z.shape())).collect() }
    }

    /// Rebuilds a state from stored moments, checking congruence with `params`.
    pub fn restore(params: &ParamStore<S>, config: AdamConfig, step: u64, m: Vec<Tensor<S>>, v: Vec<Tensor<S>>) -> Result<Self> {
        check_congruent("AdamState m", params, &m)?;
        check_congruent("AdamState v", params, &v)?;
        Ok(Self { config, step, m, v })
    }
}

fn check_congruent<S: Scalar>(op: &'static str, params: &ParamStore<S>, tensors: &[Tensor<S>]) -> Result<()> {
    if tensors.len() != params.len() {
        return Err(Error::shape(op, &[params.len()], &[tensors.len()]));
    }
    for (p, t) in params.iter().zip(tensors) {
        if p.value.shape() != t.shape() {
            return Err(Error::shape(op, p.value.shape(), t.shape()));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update; increments `state.step`.
pub fn adam_step<S: Scalar>(params: &mut ParamStore<S>, grads: &[Tensor<S>], state: &mut AdamState<S>) -> Result<()> {
    check_congruent("adam_step grads", params, grads)?;
    check_congruent("adam_step moments", params, &state.m)?;
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "adam_step" });
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
    let bc1 = S::of(1.0 - c.beta1.powi(t));
    let bc2 = S::of(1.0 - c.beta2.powi(t));
    let (lr, eps) = (S::of(c.lr), S::of(c.eps));
    for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, &gj) in m.iter_mut().zip(g) {
            *mj = b1 * *mj + (S::one() - b1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, &gj) in v.iter_mut().zip(g) {
            *vj = b2 * *vj + (S::one() - b2) * gj * gj;
        }
        let mut p = params.get(id).clone();
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, &mj), &vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pj -= lr * (mj / bc1) / ((vj / bc2).sqrt() + eps);
        }
        params.set(id, p)?;
    }
    Ok(())
}

/// Exponential moving average of parameters.
#[derive(Debug, Clone)]
pub struct EmaState<S: Scalar> {
    pub decay: f64,
    pub shadow: ParamStore<S>,
}

/// A decay of exactly 0 is accepted: the shadow then tracks the parameters.
fn check_decay(decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::config(format!("ema decay {decay} outside [0, 1)")));
    }
    Ok(())
}

impl<S: Scalar> EmaState<S> {
    /// Shadow initialised to a copy of `params`.
    pub fn new(params: &ParamStore<S>, decay: f64) -> Result<Self> {
        check_decay(decay)?;
        Ok(Self { decay, shadow: params.clone() })
    }

    /// Shadow initialised to explicit values (congruent with `params`).
    pub fn with_shadow(params: &ParamStore<S>, shadow: Vec<Tensor<S>>, decay: f64) -> Result<Self> {
        check_decay(decay)?;
        let mut store = params.clone();
        store.set_all(shadow)?;
        Ok(Self { decay, shadow: store })
    }
}

/// `shadow <- decay * shadow + (1 - decay) * params`, elementwise.
pub fn ema_update<S: Scalar>(ema: &mut EmaState<S>, params: &ParamStore<S>) -> Result<()> {
    check_decay(ema.decay)?;
    let live = params.tensors();
    check_congruent("ema_update", &ema.shadow, &live)?;
    let d = S::of(ema.decay);
    let ids: Vec<_> = ema.shadow.ids().collect();
    for (id, p) in ids.into_iter().zip(&live) {
        let mut s = ema.shadow.get(id).clone();
        for (sj, &pj) in s.data_mut().iter_mut().zip(p.data()) {
            *sj = d * *sj + (S::one() - d) * pj;
        }
        ema.shadow.set(id, s)?;
    }
    Ok(())
}
