//! Central finite-difference verification of backward rules in 64-bit.

use crate::attention::{AttentionConfig, AttentionParams};
use crate::error::Result;
use crate::graph::{GradFault, Graph, HeadLayout, Var};
use crate::params::{ParamId, ParamStore};
use crate::rng::{gaussian_sample, uniform_sample, Rng};
use crate::ssm::{Direction, Discretization, MambaParams, ScanAlgorithm, SsmConfig};
use crate::tensor::Tensor;
use crate::unet::{ResBlock, TimeEmbedding};

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Denominator floor: `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    pub fault: Option<GradFault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, tol: 1e-4, floor: 1e-5, fault: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Primitive,
    Layer,
}

type LossFn = Box<dyn Fn(&mut Graph<f64>) -> Result<Var>>;

/// A scalar loss over a parameter set.
pub struct Case {
    pub name: String,
    pub kind: CaseKind,
    pub store: ParamStore<f64>,
    pub loss: LossFn,
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub name: String,
    pub kind: CaseKind,
    pub entries: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub passed: bool,
}

fn loss_value(store: &ParamStore<f64>, f: &LossFn) -> Result<f64> {
    let mut g = Graph::new();
    g.bind_params(store, false)?;
    let l = f(&mut g)?;
    g.value(l).item()
}

/// Compares analytic gradients of every parameter entry with central differences.
pub fn check_case(case: &Case, opts: &GradcheckOptions) -> Result<CaseReport> {
    let mut g = Graph::new();
    g.bind_params(&case.store, true)?;
    if let Some(f) = opts.fault {
        g.inject_fault(f);
    }
    let loss = (case.loss)(&mut g)?;
    let analytic = g.backward(loss)?.params(&g);
    drop(g);
    let mut max_rel = 0.0f64;
    let mut worst = (String::new(), 0);
    let mut entries = 0;
    let mut store = case.store.clone();
    for (pi, id) in case.store.ids().enumerate() {
        let base = case.store.get(id).clone();
        for j in 0..base.numel() {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut t = base.clone();
                t.data_mut()[j] += delta;
                store.set(id, t)?;
                loss_value(&store, &case.loss)
            };
            let numeric = (eval(opts.h)? - eval(-opts.h)?) / (2.0 * opts.h);
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if rel > max_rel || entries == 0 {
                max_rel = max_rel.max(rel);
                worst = (case.store.name(id).to_string(), j);
            }
            entries += 1;
        }
        store.set(id, base)?;
    }
    Ok(CaseReport {
        name: case.name.clone(),
        kind: case.kind,
        entries,
        max_rel_err: max_rel,
        worst,
        passed: max_rel < opts.tol,
    })
}

pub fn run_suite(cases: &[Case], opts: &GradcheckOptions) -> Result<Vec<CaseReport>> {
    cases.iter().map(|c| check_case(c, opts)).collect()
}

struct Builder {
    rng: Rng,
    store: ParamStore<f64>,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Self { rng: Rng::new(seed), store: ParamStore::new() }
    }

    fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let t: Tensor<f64> = gaussian_sample(&mut self.rng, shape).expect("valid shape");
        self.store.add(name, t.scale(std))
    }

    fn uniform(&mut self, name: &str, shape: &[usize], lo: f64, hi: f64) -> ParamId {
        let t: Tensor<f64> = uniform_sample(&mut self.rng, shape, 1.0).expect("valid shape");
        self.store.add(name, t.map(|v| lo + (hi - lo) * (v + 1.0) / 2.0))
    }

    /// Adds noise to every parameter so zero or constant initialisations do
    /// not hide gradient paths.
    fn jitter(&mut self, std: f64) {
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            let cur = self.store.get(id).clone();
            let noise: Tensor<f64> = gaussian_sample(&mut self.rng, cur.shape()).expect("valid shape");
            self.store.set(id, cur.add(&noise.scale(std)).expect("same shape")).expect("same shape");
        }
    }

    fn projection(&mut self, shape: &[usize]) -> Tensor<f64> {
        gaussian_sample(&mut self.rng, shape).expect("valid shape")
    }

    fn case(self, name: &str, kind: CaseKind, loss: LossFn) -> Case {
        Case { name: name.to_string(), kind, store: self.store, loss }
    }
}

/// Loss = random projection of a unary op's output.
fn unary(name: &str, seed: u64, shape: &[usize], lo: f64, hi: f64, op: impl Fn(&mut Graph<f64>, Var) -> Result<Var> + 'static) -> Case {
    let mut b = Builder::new(seed);
    let x = b.uniform("x", shape, lo, hi);
    let mut probe = Graph::new();
    probe.bind_params(&b.store, false).expect("finite");
    let out_shape = {
        let xv = probe.param(x);
        let y = op(&mut probe, xv).expect("probe");
        probe.shape(y).to_vec()
    };
    let w = b.projection(&out_shape);
    b.case(
        name,
        CaseKind::Primitive,
        Box::new(move |g| {
            let xv = g.param(x);
            let y = op(g, xv)?;
            g.weighted_sum(y, &w)
        }),
    )
}

fn binary(name: &str, seed: u64, sa: &[usize], sb: &[usize], op: impl Fn(&mut Graph<f64>, Var, Var) -> Result<Var> + 'static) -> Case {
    let mut b = Builder::new(seed);
    let x = b.uniform("a", sa, -1.0, 1.0);
    let y = b.uniform("b", sb, -1.0, 1.0);
    let mut probe = Graph::new();
    probe.bind_params(&b.store, false).expect("finite");
    let out_shape = {
        let (xv, yv) = (probe.param(x), probe.param(y));
        let o = op(&mut probe, xv, yv).expect("probe");
        probe.shape(o).to_vec()
    };
    let w = b.projection(&out_shape);
    b.case(
        name,
        CaseKind::Primitive,
        Box::new(move |g| {
            let (xv, yv) = (g.param(x), g.param(y));
            let o = op(g, xv, yv)?;
            g.weighted_sum(o, &w)
        }),
    )
}

/// Every differentiable primitive of the tape.
pub fn primitive_cases() -> Vec<Case> {
    let mut cases = vec![
        binary("add", 1, &[3, 4], &[3, 4], |g, a, b| g.add(a, b)),
        binary("sub", 2, &[3, 4], &[3, 4], |g, a, b| g.sub(a, b)),
        binary("mul", 3, &[3, 4], &[3, 4], |g, a, b| g.mul(a, b)),
        unary("scale", 4, &[5], -1.0, 1.0, |g, x| g.scale(x, -2.5)),
        unary("silu", 5, &[6], -3.0, 3.0, |g, x| g.silu(x)),
        unary("softplus", 6, &[6], -3.0, 3.0, |g, x| g.softplus(x)),
        unary("neg_exp", 7, &[6], -2.0, 1.0, |g, x| g.neg_exp(x)),
        unary("sum", 8, &[2, 3], -1.0, 1.0, |g, x| g.sum(x)),
        unary("mean", 9, &[2, 3], -1.0, 1.0, |g, x| g.mean(x)),
        binary("mse", 10, &[2, 3], &[2, 3], |g, a, b| g.mse(a, b)),
        unary("softmax", 11, &[2, 3, 4], -2.0, 2.0, |g, x| g.softmax(x, 1)),
        binary("linear", 12, &[2, 3, 4], &[4, 5], |g, x, w| g.linear(x, w, None)),
        unary("reshape", 13, &[2, 6], -1.0, 1.0, |g, x| g.reshape(x, &[3, 4])),
        unary("permute", 14, &[2, 3, 4], -1.0, 1.0, |g, x| g.permute(x, &[1, 2, 0])),
        binary("concat", 15, &[2, 1, 3], &[2, 2, 3], |g, a, b| g.concat(a, b, 1)),
        unary("narrow", 16, &[2, 5, 2], -1.0, 1.0, |g, x| g.narrow(x, 1, 1, 3)),
        unary("flip", 17, &[2, 4, 3], -1.0, 1.0, |g, x| g.flip(x, 1)),
        unary("upsample2x", 18, &[1, 2, 2, 3], -1.0, 1.0, |g, x| g.upsample2x(x)),
        binary("film", 19, &[4, 2, 2, 2], &[2, 4], |g, x, ss| g.film(x, ss)),
    ];
    {
        let mut b = Builder::new(20);
        let x = b.normal("x", &[1, 3, 4], 1.0);
        let y = b.normal("y", &[1, 3, 4], 1.0);
        let w = b.projection(&[1, 2, 3, 3]);
        cases.push(b.case(
            "head_matmul",
            CaseKind::Primitive,
            Box::new(move |g| {
                let s = g.head_matmul(g.param(x), HeadLayout::Interleaved, false, g.param(y), HeadLayout::Interleaved, true, HeadLayout::Blocked, 2, 0.7)?;
                g.weighted_sum(s, &w)
            }),
        ));
    }
    {
        let mut b = Builder::new(21);
        let p = b.normal("p", &[1, 2, 3, 3], 1.0);
        let v = b.normal("v", &[1, 3, 4], 1.0);
        let w = b.projection(&[1, 3, 4]);
        cases.push(b.case(
            "head_matmul (blocked x interleaved^T)",
            CaseKind::Primitive,
            Box::new(move |g| {
                let vt = g.head_matmul(g.param(v), HeadLayout::Interleaved, true, g.param(v), HeadLayout::Interleaved, false, HeadLayout::Blocked, 2, 1.0)?;
                let s = g.head_matmul(g.param(p), HeadLayout::Blocked, false, g.param(v), HeadLayout::Interleaved, false, HeadLayout::Interleaved, 2, 1.0)?;
                let a = g.weighted_sum(s, &w)?;
                let b = g.sum(vt)?;
                g.add(a, b)
            }),
        ));
    }
    {
        let mut b = Builder::new(22);
        let x = b.normal("x", &[2, 3, 5], 1.0);
        let gamma = b.uniform("gamma", &[5], 0.5, 1.5);
        let beta = b.normal("beta", &[5], 0.3);
        let w = b.projection(&[2, 3, 5]);
        cases.push(b.case(
            "layer_norm",
            CaseKind::Primitive,
            Box::new(move |g| {
                let y = g.layer_norm(g.param(x), g.param(gamma), g.param(beta))?;
                g.weighted_sum(y, &w)
            }),
        ));
    }
    {
        let mut b = Builder::new(23);
        let x = b.normal("x", &[2, 4, 2, 3], 1.0);
        let gamma = b.uniform("gamma", &[4], 0.5, 1.5);
        let beta = b.normal("beta", &[4], 0.3);
        let w = b.projection(&[2, 4, 2, 3]);
        cases.push(b.case(
            "group_norm",
            CaseKind::Primitive,
            Box::new(move |g| {
                let y = g.group_norm(g.param(x), 2, g.param(gamma), g.param(beta))?;
                g.weighted_sum(y, &w)
            }),
        ));
    }
    for (name, k, stride, pad, hw) in [("conv2d 3x3", 3, 1, 1, 4), ("conv2d 3x3 stride 2", 3, 2, 1, 4), ("conv2d 1x1", 1, 1, 0, 3)] {
        let mut b = Builder::new(24 + k as u64 + stride as u64);
        let x = b.normal("x", &[2, 2, hw, hw], 1.0);
        let wt = b.normal("w", &[3, 2, k, k], 0.5);
        let bias = b.normal("b", &[3], 0.5);
        let out = (hw + 2 * pad - k) / stride + 1;
        let w = b.projection(&[2, 3, out, out]);
        cases.push(b.case(
            name,
            CaseKind::Primitive,
            Box::new(move |g| {
                let y = g.conv2d(g.param(x), g.param(wt), Some(g.param(bias)), stride, pad)?;
                g.weighted_sum(y, &w)
            }),
        ));
    }
    {
        let mut b = Builder::new(30);
        let x = b.normal("x", &[2, 5, 3], 1.0);
        let wt = b.normal("w", &[3, 4], 0.5);
        let bias = b.normal("b", &[3], 0.5);
        let w = b.projection(&[2, 5, 3]);
        cases.push(b.case(
            "causal_conv1d",
            CaseKind::Primitive,
            Box::new(move |g| {
                let y = g.causal_conv1d(g.param(x), g.param(wt), g.param(bias))?;
                g.weighted_sum(y, &w)
            }),
        ));
    }
    for (name, mode) in [("selective_scan", Discretization::Euler), ("selective_scan (exact)", Discretization::Exact)] {
        let mut b = Builder::new(31);
        let (gs, l, d, n) = (2, 5, 3, 4);
        let u = b.normal("u", &[gs, l, d], 1.0);
        let delta = b.uniform("delta", &[gs, l, d], 0.1, 0.8);
        let a = b.uniform("a", &[d, n], -2.0, -0.3);
        let bm = b.normal("b", &[gs, l, n], 1.0);
        let c = b.normal("c", &[gs, l, n], 1.0);
        let ds = b.normal("d", &[d], 1.0);
        let w = b.projection(&[gs, l, d]);
        cases.push(b.case(
            name,
            CaseKind::Primitive,
            Box::new(move |g| {
                let [u, delta, a, bm, c, ds] = [u, delta, a, bm, c, ds].map(|p| g.param(p));
                let y = g.selective_scan(u, delta, a, bm, c, ds, mode, ScanAlgorithm::Parallel)?;
                g.weighted_sum(y, &w)
            }),
        ));
    }
    cases
}

/// Gated SSM block on `[2, frames, channels]`. Step sizes start larger than
/// the training default so the state-matrix gradients are well above the
/// finite-difference noise floor.
pub fn ssm_case(name: &str, seed: u64, directions: &'static [Direction], frames: usize, channels: usize) -> Case {
    let mut b = Builder::new(seed);
    let cfg = SsmConfig { state: 3, dt_min: 0.05, dt_max: 0.5, ..SsmConfig::default() };
    let rng = b.rng.fork(1);
    let block = MambaParams::new(&mut b.store, &rng, "ssm", channels, cfg, directions).expect("valid config");
    b.jitter(0.2);
    let x = b.normal("x", &[2, frames, channels], 1.0);
    let w = b.projection(&[2, frames, channels]);
    b.case(
        name,
        CaseKind::Layer,
        Box::new(move |g| {
            let y = block.forward(g, g.param(x))?;
            g.weighted_sum(y, &w)
        }),
    )
}

/// One case per composite layer type.
pub fn layer_cases() -> Vec<Case> {
    let mut cases = vec![
        ssm_case("ssm block (forward)", 40, &[Direction::Forward], 3, 4),
        ssm_case("ssm block (backward)", 41, &[Direction::Backward], 3, 4),
        ssm_case("bidirectional ssm block", 42, &[Direction::Forward, Direction::Backward], 3, 4),
    ];
    let cfg = AttentionConfig { heads: 2, head_dim: 3 };
    {
        let mut b = Builder::new(43);
        let rng = b.rng.fork(1);
        let attn = AttentionParams::new(&mut b.store, &rng, "attn", 4, cfg).expect("valid config");
        b.jitter(0.1);
        let x = b.normal("x", &[2, 3, 4], 1.0);
        let w = b.projection(&[2, 3, 4]);
        cases.push(b.case(
            "temporal attention",
            CaseKind::Layer,
            Box::new(move |g| {
                let y = attn.temporal_forward(g, g.param(x))?;
                g.weighted_sum(y, &w)
            }),
        ));
    }
    {
        let mut b = Builder::new(44);
        let rng = b.rng.fork(1);
        let attn = AttentionParams::new(&mut b.store, &rng, "attn", 4, cfg).expect("valid config");
        b.jitter(0.1);
        let x = b.normal("x", &[2, 4, 2, 3], 1.0);
        let w = b.projection(&[2, 4, 2, 3]);
        cases.push(b.case(
            "spatial linear attention",
            CaseKind::Layer,
            Box::new(move |g| {
                let y = attn.spatial_forward(g, g.param(x))?;
                g.weighted_sum(y, &w)
            }),
        ));
    }
    {
        let mut b = Builder::new(45);
        let rng = b.rng.fork(1);
        let block = ResBlock::new(&mut b.store, &rng, "res", 4, 8, 6, 2).expect("valid config");
        b.jitter(0.1);
        let x = b.normal("x", &[2, 4, 3, 3], 1.0);
        let emb = b.normal("emb", &[1, 6], 1.0);
        let w = b.projection(&[2, 8, 3, 3]);
        cases.push(b.case(
            "residual conv block",
            CaseKind::Layer,
            Box::new(move |g| {
                let y = block.forward(g, g.param(x), g.param(emb))?;
                g.weighted_sum(y, &w)
            }),
        ));
    }
    {
        let mut b = Builder::new(46);
        let rng = b.rng.fork(1);
        let mlp = TimeEmbedding::new(&mut b.store, &rng, "time", 8, 6).expect("valid config");
        b.jitter(0.1);
        let w = b.projection(&[2, 6]);
        cases.push(b.case(
            "time-embedding mlp",
            CaseKind::Layer,
            Box::new(move |g| {
                let y = mlp.forward(g, &[3, 17])?;
                g.weighted_sum(y, &w)
            }),
        ));
    }
    cases
}

/// Primitives followed by layers.
pub fn standard_suite() -> Vec<Case> {
    let mut c = primitive_cases();
    c.extend(layer_cases());
    c
}
