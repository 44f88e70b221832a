//! Gated selective-SSM block and its bidirectional variant.

use super::scan::{Discretization, ScanAlgorithm};
use crate::error::{Error, Result};
use crate::graph::elementwise::softplus_inverse;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsmConfig {
    /// Inner width is `expand * channels`.
    pub expand: usize,
    /// State size per channel.
    pub state: usize,
    pub conv_width: usize,
    /// Initial step sizes are log-uniform in `[dt_min, dt_max]`.
    pub dt_min: f64,
    pub dt_max: f64,
    pub discretization: Discretization,
    pub algorithm: ScanAlgorithm,
}

impl Default for SsmConfig {
    fn default() -> Self {
        Self {
            expand: 2,
            state: 16,
            conv_width: 4,
            dt_min: 0.001,
            dt_max: 0.1,
            discretization: Discretization::Euler,
            algorithm: ScanAlgorithm::Parallel,
        }
    }
}

/// Scan direction along the sequence axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Per-direction parameters: causal conv, selective projections and core.
#[derive(Debug, Clone)]
pub struct BranchParams {
    pub direction: Direction,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub proj_dt: ParamId,
    pub proj_b: ParamId,
    pub proj_c: ParamId,
    pub dt_w: ParamId,
    pub dt_bias: ParamId,
    pub a_log: ParamId,
    pub d_skip: ParamId,
}

/// Pre-norm gated SSM block over `[G, L, C]` with one or two scan branches.
///
/// The input projection (value and gate), the gate and the output projection
/// are shared by all branches; gated branch outputs are summed before the
/// output projection, and the block input is added back.
#[derive(Debug, Clone)]
pub struct MambaParams {
    pub channels: usize,
    pub inner: usize,
    pub dt_rank: usize,
    pub config: SsmConfig,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
    pub in_proj: ParamId,
    pub out_proj: ParamId,
    pub branches: Vec<BranchParams>,
}

impl MambaParams {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &Rng,
        prefix: &str,
        channels: usize,
        config: SsmConfig,
        directions: &[Direction],
    ) -> Result<Self> {
        if config.expand == 0 || config.state == 0 || config.conv_width == 0 || directions.is_empty() {
            return Err(Error::config("ssm block needs expand, state, conv_width >= 1 and at least one direction"));
        }
        if !(0.0 < config.dt_min && config.dt_min <= config.dt_max) {
            return Err(Error::config(format!("ssm dt range [{}, {}] invalid", config.dt_min, config.dt_max)));
        }
        let inner = config.expand * channels;
        let dt_rank = channels.div_ceil(16);
        let n = config.state;
        let ln_gamma = store.add_ones(&format!("{prefix}.norm.gamma"), &[channels])?;
        let ln_beta = store.add_zeros(&format!("{prefix}.norm.beta"), &[channels])?;
        let in_proj = store.add_fan_in(rng, &format!("{prefix}.in_proj"), &[channels, 2 * inner], channels)?;
        let out_proj = store.add_zeros(&format!("{prefix}.out_proj"), &[inner, channels])?;
        let mut branches = Vec::with_capacity(directions.len());
        for &direction in directions {
            let p = format!("{prefix}.{}", if direction == Direction::Forward { "fwd" } else { "bwd" });
            let k = config.conv_width;
            let conv_w = store.add_fan_in(rng, &format!("{p}.conv.w"), &[inner, k], k)?;
            let conv_b = store.add_fan_in(rng, &format!("{p}.conv.b"), &[inner], k)?;
            let proj_dt = store.add_fan_in(rng, &format!("{p}.proj_dt"), &[inner, dt_rank], inner)?;
            let proj_b = store.add_fan_in(rng, &format!("{p}.proj_b"), &[inner, n], inner)?;
            let proj_c = store.add_fan_in(rng, &format!("{p}.proj_c"), &[inner, n], inner)?;
            let dt_w = store.add_fan_in(rng, &format!("{p}.dt.w"), &[dt_rank, inner], dt_rank)?;
            let mut dt_rng = rng.fork_named(&format!("{p}.dt.bias"));
            let (lo, hi) = (config.dt_min.ln(), config.dt_max.ln());
            let bias: Vec<f64> = (0..inner).map(|_| softplus_inverse(dt_rng.uniform_range(lo, hi).exp())).collect();
            let dt_bias = store.add(format!("{p}.dt.bias"), Tensor::from_f64(&[inner], &bias)?);
            // A[d, n] = -(n + 1)
            let a_log: Vec<f64> = (0..inner).flat_map(|_| (0..n).map(|j| ((j + 1) as f64).ln())).collect();
            let a_log = store.add(format!("{p}.a_log"), Tensor::from_f64(&[inner, n], &a_log)?);
            let d_skip = store.add_ones(&format!("{p}.d_skip"), &[inner])?;
            branches.push(BranchParams { direction, conv_w, conv_b, proj_dt, proj_b, proj_c, dt_w, dt_bias, a_log, d_skip });
        }
        Ok(Self { channels, inner, dt_rank, config, ln_gamma, ln_beta, in_proj, out_proj, branches })
    }

    /// Bidirectional block: a forward and a backward branch.
    pub fn bidirectional<S: Scalar>(store: &mut ParamStore<S>, rng: &Rng, prefix: &str, channels: usize, config: SsmConfig) -> Result<Self> {
        Self::new(store, rng, prefix, channels, config, &[Direction::Forward, Direction::Backward])
    }

    /// Copies the parameters of branch `from` into branch `to`.
    pub fn tie_branches<S: Scalar>(&self, store: &mut ParamStore<S>, from: usize, to: usize) -> Result<()> {
        let (src, dst) = (&self.branches[from], &self.branches[to]);
        let pairs = [
            (src.conv_w, dst.conv_w),
            (src.conv_b, dst.conv_b),
            (src.proj_dt, dst.proj_dt),
            (src.proj_b, dst.proj_b),
            (src.proj_c, dst.proj_c),
            (src.dt_w, dst.dt_w),
            (src.dt_bias, dst.dt_bias),
            (src.a_log, dst.a_log),
            (src.d_skip, dst.d_skip),
        ];
        for (s, d) in pairs {
            let v = store.get(s).clone();
            store.set(d, v)?;
        }
        Ok(())
    }

    fn check_input<S: Scalar>(&self, g: &Graph<S>, x: Var) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 3 || s[2] != self.channels {
            return Err(Error::shape("ssm block input", &[s.first().copied().unwrap_or(0), s.get(1).copied().unwrap_or(0), self.channels], s));
        }
        Ok(())
    }

    /// Conv, selective projections and scan of one branch on the value path
    /// `v` (`[G, L, inner]`), run in `direction`.
    fn branch<S: Scalar>(&self, g: &mut Graph<S>, v: Var, p: &BranchParams, direction: Direction) -> Result<Var> {
        let v = match direction {
            Direction::Forward => v,
            Direction::Backward => g.flip(v, 1)?,
        };
        let conv = g.causal_conv1d(v, g.param(p.conv_w), g.param(p.conv_b))?;
        let xc = g.silu(conv)?;
        let dt_low = g.linear(xc, g.param(p.proj_dt), None)?;
        let dt_pre = g.linear(dt_low, g.param(p.dt_w), Some(g.param(p.dt_bias)))?;
        let delta = g.softplus(dt_pre)?;
        let b = g.linear(xc, g.param(p.proj_b), None)?;
        let c = g.linear(xc, g.param(p.proj_c), None)?;
        let a = g.neg_exp(g.param(p.a_log))?;
        let y = g.selective_scan(xc, delta, a, b, c, g.param(p.d_skip), self.config.discretization, self.config.algorithm)?;
        match direction {
            Direction::Forward => Ok(y),
            Direction::Backward => g.flip(y, 1),
        }
    }

    fn run<S: Scalar>(&self, g: &mut Graph<S>, x: Var, branches: &[(&BranchParams, Direction)]) -> Result<Var> {
        self.check_input(g, x)?;
        let h = g.layer_norm(x, g.param(self.ln_gamma), g.param(self.ln_beta))?;
        let vz = g.linear(h, g.param(self.in_proj), None)?;
        let v = g.narrow(vz, 2, 0, self.inner)?;
        let z = g.narrow(vz, 2, self.inner, self.inner)?;
        let gate = g.silu(z)?;
        let mut sum: Option<Var> = None;
        for &(p, dir) in branches {
            let y = self.branch(g, v, p, dir)?;
            sum = Some(match sum {
                None => y,
                Some(acc) => g.add(acc, y)?,
            });
        }
        let gated = g.mul(sum.expect("at least one branch"), gate)?;
        let out = g.linear(gated, g.param(self.out_proj), None)?;
        g.add(x, out)
    }

    /// Runs every configured branch in its own direction.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let branches: Vec<_> = self.branches.iter().map(|p| (p, p.direction)).collect();
        self.run(g, x, &branches)
    }
}

/// Single-branch block evaluated in `direction` using the first branch's
/// parameters.
pub fn mamba_block_forward<S: Scalar>(g: &mut Graph<S>, params: &MambaParams, x: Var, direction: Direction) -> Result<Var> {
    params.run(g, x, &[(&params.branches[0], direction)])
}

/// Sum of the forward and backward branches, gated and projected.
pub fn bidirectional_mamba_forward<S: Scalar>(g: &mut Graph<S>, params: &MambaParams, x: Var) -> Result<Var> {
    if params.branches.len() != 2 {
        return Err(Error::config(format!("bidirectional block needs 2 branches, has {}", params.branches.len())));
    }
    params.forward(g, x)
}
