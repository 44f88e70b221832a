//! Noise schedule, forward corruption, noise-prediction loss and ancestral
//! sampling.
//!
//! Steps are 1-based: `t` ranges over `1..=T`. `alpha_bar(0) = 1` is the
//! uncorrupted limit accepted by [`q_sample`].

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::{gaussian_sample, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::unet::VideoUNet;

pub const DEFAULT_STEPS: usize = 256;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Linearly spaced betas from `beta_start` to `beta_end` inclusive.
pub fn make_noise_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("noise schedule needs at least one step"));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(format!("beta range must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}")));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| if steps == 1 { beta_start } else { beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64 })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule { beta, alpha, alpha_bar })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_noise_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// Errors unless `1 <= t <= T`.
    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::OutOfRange { what: "diffusion step", value: t as i64, lo: 1, hi: self.steps() as i64 });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Reverse-process standard deviation, `sigma_t^2 = beta_t`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.beta(t).sqrt()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

fn per_batch<S: Scalar>(x: &Tensor<S>, ts: &[usize]) -> Result<usize> {
    if x.shape()[0] != ts.len() {
        return Err(Error::shape("diffusion steps per batch element", &[x.shape()[0]], &[ts.len()]));
    }
    Ok(x.numel() / ts.len())
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`, with one step
/// per batch element (leading axis). `t = 0` returns `x0`.
pub fn q_sample<S: Scalar>(x0: &Tensor<S>, ts: &[usize], eps: &Tensor<S>, sched: &NoiseSchedule) -> Result<Tensor<S>> {
    if x0.shape() != eps.shape() {
        return Err(Error::shape("q_sample", x0.shape(), eps.shape()));
    }
    let per = per_batch(x0, ts)?;
    let mut out = x0.to_vec();
    for (b, &t) in ts.iter().enumerate() {
        if t > sched.steps() {
            return Err(Error::OutOfRange { what: "diffusion step", value: t as i64, lo: 0, hi: sched.steps() as i64 });
        }
        let ab = sched.alpha_bar(t);
        let (a, s) = (S::of(ab.sqrt()), S::of((1.0 - ab).sqrt()));
        for (o, &e) in out[b * per..(b + 1) * per].iter_mut().zip(&eps.data()[b * per..(b + 1) * per]) {
            *o = a * *o + s * e;
        }
    }
    Tensor::new(x0.shape(), out)
}

/// Anything that predicts noise for a batch of corrupted samples.
pub trait Denoiser<S: Scalar> {
    fn predict_noise(&self, x_t: &Tensor<S>, ts: &[usize]) -> Result<Tensor<S>>;
}

impl<S: Scalar, F> Denoiser<S> for F
where
    F: Fn(&Tensor<S>, &[usize]) -> Result<Tensor<S>>,
{
    fn predict_noise(&self, x_t: &Tensor<S>, ts: &[usize]) -> Result<Tensor<S>> {
        self(x_t, ts)
    }
}

impl<S: Scalar> Denoiser<S> for VideoUNet<S> {
    fn predict_noise(&self, x_t: &Tensor<S>, ts: &[usize]) -> Result<Tensor<S>> {
        self.predict(x_t, ts)
    }
}

/// A network evaluated with substitute parameter values (e.g. EMA weights).
pub struct WithParams<'a, S: Scalar> {
    pub model: &'a VideoUNet<S>,
    pub params: &'a ParamStore<S>,
}

impl<S: Scalar> Denoiser<S> for WithParams<'_, S> {
    fn predict_noise(&self, x_t: &Tensor<S>, ts: &[usize]) -> Result<Tensor<S>> {
        self.model.predict_with(self.params, x_t, ts)
    }
}

/// Clean samples, per-element steps and the noise used to corrupt them.
#[derive(Debug, Clone)]
pub struct DiffusionBatch<S: Scalar> {
    pub x0: Tensor<S>,
    pub t: Vec<usize>,
    pub eps: Tensor<S>,
}

impl<S: Scalar> DiffusionBatch<S> {
    pub fn new(x0: Tensor<S>, t: Vec<usize>, eps: Tensor<S>, sched: &NoiseSchedule) -> Result<Self> {
        if x0.shape() != eps.shape() {
            return Err(Error::shape("DiffusionBatch eps", x0.shape(), eps.shape()));
        }
        per_batch(&x0, &t)?;
        for &s in &t {
            sched.check_step(s)?;
        }
        Ok(Self { x0, t, eps })
    }

    /// Uniform steps in `1..=T` and standard normal noise.
    pub fn draw(x0: Tensor<S>, sched: &NoiseSchedule, rng: &mut Rng) -> Result<Self> {
        let t = (0..x0.shape()[0]).map(|_| rng.int_inclusive(1, sched.steps())).collect();
        let eps = gaussian_sample(rng, x0.shape())?;
        Self::new(x0, t, eps, sched)
    }

    pub fn x_t(&self, sched: &NoiseSchedule) -> Result<Tensor<S>> {
        q_sample(&self.x0, &self.t, &self.eps, sched)
    }
}

/// Mean squared error between the true noise and the model's prediction.
pub fn eps_loss<S: Scalar>(model: &impl Denoiser<S>, batch: &DiffusionBatch<S>, sched: &NoiseSchedule) -> Result<S> {
    let pred = model.predict_noise(&batch.x_t(sched)?, &batch.t)?;
    if pred.shape() != batch.eps.shape() {
        return Err(Error::shape("eps_loss model output", batch.eps.shape(), pred.shape()));
    }
    pred.mse(&batch.eps)
}

/// The same loss recorded on a tape for training; parameters of `model` must
/// be bound on `g`.
pub fn eps_loss_graph<S: Scalar>(g: &mut Graph<S>, model: &VideoUNet<S>, batch: &DiffusionBatch<S>, sched: &NoiseSchedule) -> Result<Var> {
    let x_t = g.input(batch.x_t(sched)?)?;
    let eps = g.input(batch.eps.clone())?;
    let pred = model.forward(g, x_t, &batch.t)?;
    g.mse(pred, eps)
}

/// Reverse-process mean `(x_t - beta_t / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_t)`.
pub fn p_mean<S: Scalar>(x_t: &Tensor<S>, t: usize, eps_hat: &Tensor<S>, sched: &NoiseSchedule) -> Result<Tensor<S>> {
    sched.check_step(t)?;
    let coef = S::of(sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt());
    let inv = S::of(1.0 / sched.alpha(t).sqrt());
    let out = x_t.zip_map(eps_hat, "p_step", |x, e| (x - coef * e) * inv)?;
    if !out.is_finite() {
        return Err(Error::NonFinite { op: "p_step" });
    }
    Ok(out)
}

/// One ancestral step `x_t -> x_{t-1}`; noise `sigma_t z` is added for `t > 1` only.
pub fn p_step<S: Scalar>(x_t: &Tensor<S>, t: usize, eps_hat: &Tensor<S>, sched: &NoiseSchedule, rng: &mut Rng) -> Result<Tensor<S>> {
    let mean = p_mean(x_t, t, eps_hat, sched)?;
    if t == 1 {
        return Ok(mean);
    }
    let z: Tensor<S> = gaussian_sample(rng, x_t.shape())?;
    let sigma = S::of(sched.sigma(t));
    mean.zip_map(&z, "p_step", |m, z| m + sigma * z)
}

/// Starts from standard normal noise, applies `T` reverse steps and clamps
/// the result to `[-1, 1]`.
pub fn sample<S: Scalar>(model: &impl Denoiser<S>, sched: &NoiseSchedule, shape: &[usize], rng: &mut Rng) -> Result<Tensor<S>> {
    let mut x: Tensor<S> = gaussian_sample(rng, shape)?;
    let batch = shape[0];
    for t in (1..=sched.steps()).rev() {
        let eps_hat = model.predict_noise(&x, &vec![t; batch])?;
        if eps_hat.shape() != shape {
            return Err(Error::shape("sample model output", shape, eps_hat.shape()));
        }
        x = p_step(&x, t, &eps_hat, sched, rng)?;
    }
    let (lo, hi) = (-S::one(), S::one());
    Ok(x.map(|v| v.max(lo).min(hi)))
}
