//! Discretisation and the selective-scan recurrence.
//!
//! Per group `g`, channel `d` and state index `n` the recurrence is
//! `s_k = exp(delta_k a) * s_{k-1} + bbar_k * u_k`, `y_k = <c_k, s_k> + D u_k`,
//! with `s_0 = 0`. Layouts: `u`, `delta`, `y` are `[G, L, D]`; `b`, `c` are
//! `[G, L, N]`; `a` is `[D, N]`; `d_skip` is `[D]`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the input matrix is discretised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Discretization {
    /// `bbar = delta * b`.
    #[default]
    Euler,
    /// `bbar = (exp(delta * a) - 1) / a * b`.
    Exact,
}

/// Which evaluation order computes the recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanAlgorithm {
    Sequential,
    /// Work-efficient up-sweep/down-sweep prefix scan over `(abar, bbar u)` pairs.
    #[default]
    Parallel,
}

/// `(abar, bbar)` for one (step, channel, state) entry.
#[inline]
pub fn discretize_step<S: Scalar>(a: S, b: S, delta: S, mode: Discretization) -> (S, S) {
    let da = delta * a;
    let abar = da.exp();
    let bbar = match mode {
        Discretization::Euler => delta * b,
        Discretization::Exact => da.exp_m1() / a * b,
    };
    (abar, bbar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ScanDims {
    pub g: usize,
    pub l: usize,
    pub d: usize,
    pub n: usize,
}

impl ScanDims {
    pub(crate) fn check<S: Scalar>(
        u: &Tensor<S>,
        delta: &Tensor<S>,
        a: &Tensor<S>,
        b: &Tensor<S>,
        c: &Tensor<S>,
        d_skip: &Tensor<S>,
    ) -> Result<Self> {
        let us = u.shape();
        if us.len() != 3 {
            return Err(Error::shape("selective_scan u", &[0, 0, 0], us));
        }
        let (g, l, d) = (us[0], us[1], us[2]);
        if a.ndim() != 2 || a.shape()[0] != d {
            return Err(Error::shape("selective_scan A", &[d, a.shape().last().copied().unwrap_or(0)], a.shape()));
        }
        let n = a.shape()[1];
        if delta.shape() != us {
            return Err(Error::shape("selective_scan delta", us, delta.shape()));
        }
        for (what, t) in [("selective_scan B", b), ("selective_scan C", c)] {
            if t.shape() != [g, l, n] {
                return Err(Error::shape(what, &[g, l, n], t.shape()));
            }
        }
        if d_skip.shape() != [d] {
            return Err(Error::shape("selective_scan D", &[d], d_skip.shape()));
        }
        Ok(Self { g, l, d, n })
    }
}

pub(crate) fn check_signs<S: Scalar>(a: &Tensor<S>, delta: &Tensor<S>) -> Result<()> {
    if let Some((index, v)) = delta.data().iter().enumerate().find(|(_, v)| **v <= S::zero()) {
        return Err(Error::SignViolation { what: "delta", sign: "positive", index, value: v.as_f64() });
    }
    if let Some((index, v)) = a.data().iter().enumerate().find(|(_, v)| **v >= S::zero()) {
        return Err(Error::SignViolation { what: "A", sign: "negative", index, value: v.as_f64() });
    }
    Ok(())
}

/// Borrowed inputs of one group.
pub(crate) struct GroupInputs<'a, S> {
    pub u: &'a [S],
    pub delta: &'a [S],
    pub b: &'a [S],
    pub c: &'a [S],
}

pub(crate) struct Shared<'a, S> {
    pub dims: ScanDims,
    pub a: &'a [S],
    pub d_skip: &'a [S],
    pub mode: Discretization,
}

impl<S: Scalar> Shared<'_, S> {
    fn group<'a>(&self, g: usize, u: &'a [S], delta: &'a [S], b: &'a [S], c: &'a [S]) -> GroupInputs<'a, S> {
        let ScanDims { l, d, n, .. } = self.dims;
        GroupInputs {
            u: &u[g * l * d..(g + 1) * l * d],
            delta: &delta[g * l * d..(g + 1) * l * d],
            b: &b[g * l * n..(g + 1) * l * n],
            c: &c[g * l * n..(g + 1) * l * n],
        }
    }
}

/// `abar` and `bbar` (`[l, n]` each) for channel `ch` of one group.
fn discretize_channel<S: Scalar>(sh: &Shared<'_, S>, gi: &GroupInputs<'_, S>, ch: usize, abar: &mut [S], bbar: &mut [S]) {
    let ScanDims { l, d, n, .. } = sh.dims;
    let a = &sh.a[ch * n..(ch + 1) * n];
    for k in 0..l {
        let dt = gi.delta[k * d + ch];
        let (ak, bk) = (&mut abar[k * n..(k + 1) * n], &mut bbar[k * n..(k + 1) * n]);
        let b = &gi.b[k * n..(k + 1) * n];
        for j in 0..n {
            ak[j] = dt * a[j];
        }
        match sh.mode {
            Discretization::Euler => {
                for j in 0..n {
                    bk[j] = dt * b[j];
                }
            }
            Discretization::Exact => {
                for j in 0..n {
                    bk[j] = ak[j].exp_m1() / a[j] * b[j];
                }
            }
        }
    }
    S::exp_slice(&mut abar[..l * n]);
}

/// Dot product with eight independent partial sums, which vectorises and
/// is deterministic for a given length.
#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(S::zero(), |t, (x, y)| t + *x * *y);
    let mut acc = [S::zero(); 8];
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn scan_group_seq<S: Scalar>(sh: &Shared<'_, S>, gi: &GroupInputs<'_, S>, y: &mut [S]) {
    let ScanDims { l, d, n, .. } = sh.dims;
    let mut state = vec![S::zero(); n];
    let mut abar = vec![S::zero(); l * n];
    let mut bbar = vec![S::zero(); l * n];
    for ch in 0..d {
        discretize_channel(sh, gi, ch, &mut abar, &mut bbar);
        state.fill(S::zero());
        for k in 0..l {
            let u = gi.u[k * d + ch];
            let row = k * n..(k + 1) * n;
            for ((s, a), b) in state.iter_mut().zip(&abar[row.clone()]).zip(&bbar[row.clone()]) {
                *s = *a * *s + *b * u;
            }
            y[k * d + ch] = dot(&gi.c[row], &state) + sh.d_skip[ch] * u;
        }
    }
}

/// In-place exclusive scan of `(pa, pb)` pairs (`n` lanes each, `len` a power
/// of two) under `(a2, b2) o (a1, b1) = (a2 a1, a2 b1 + b2)`, earlier first.
/// Lanes of element `lft` and of the later element `rgt`.
fn pair<S>(buf: &mut [S], lft: usize, rgt: usize, n: usize) -> (&mut [S], &mut [S]) {
    let (lo, hi) = buf.split_at_mut(rgt * n);
    (&mut lo[lft * n..(lft + 1) * n], &mut hi[..n])
}

fn blelloch_exclusive<S: Scalar>(pa: &mut [S], pb: &mut [S], len: usize, n: usize) {
    let mut s = 1;
    while s < len {
        for i in (0..len).step_by(2 * s) {
            let (la, ra) = pair(pa, i + s - 1, i + 2 * s - 1, n);
            let (lb, rb) = pair(pb, i + s - 1, i + 2 * s - 1, n);
            for (((ra, la), rb), lb) in ra.iter_mut().zip(la.iter()).zip(rb.iter_mut()).zip(lb.iter()) {
                *rb = *ra * *lb + *rb;
                *ra *= *la;
            }
        }
        s *= 2;
    }
    let last = (len - 1) * n;
    pa[last..last + n].fill(S::one());
    pb[last..last + n].fill(S::zero());
    let mut s = len / 2;
    while s >= 1 {
        for i in (0..len).step_by(2 * s) {
            let (la, ra) = pair(pa, i + s - 1, i + 2 * s - 1, n);
            let (lb, rb) = pair(pb, i + s - 1, i + 2 * s - 1, n);
            for (((ra, la), rb), lb) in ra.iter_mut().zip(la.iter_mut()).zip(rb.iter_mut()).zip(lb.iter_mut()) {
                let (ta, tb) = (*la, *lb);
                *la = *ra;
                *lb = *rb;
                *rb = ta * *rb + tb;
                *ra = ta * *ra;
            }
        }
        s /= 2;
    }
}

fn scan_group_par<S: Scalar>(sh: &Shared<'_, S>, gi: &GroupInputs<'_, S>, y: &mut [S]) {
    let ScanDims { l, d, n, .. } = sh.dims;
    let len = l.next_power_of_two();
    let mut pa = vec![S::one(); len * n];
    let mut pb = vec![S::zero(); len * n];
    // per-step (abar, bbar u), kept for the inclusive fix-up
    let mut step_a = vec![S::zero(); l * n];
    let mut step_b = vec![S::zero(); l * n];
    for ch in 0..d {
        discretize_channel(sh, gi, ch, &mut step_a, &mut step_b);
        for k in 0..l {
            let u = gi.u[k * d + ch];
            for v in &mut step_b[k * n..(k + 1) * n] {
                *v *= u;
            }
        }
        pa[..l * n].copy_from_slice(&step_a);
        pb[..l * n].copy_from_slice(&step_b);
        pa[l * n..].fill(S::one());
        pb[l * n..].fill(S::zero());
        blelloch_exclusive(&mut pa, &mut pb, len, n);
        for k in 0..l {
            let u = gi.u[k * d + ch];
            let row = k * n..(k + 1) * n;
            // inclusive state = this step applied after the exclusive prefix
            for ((p, a), b) in pb[row.clone()].iter_mut().zip(&step_a[row.clone()]).zip(&step_b[row.clone()]) {
                *p = *a * *p + *b;
            }
            y[k * d + ch] = dot(&gi.c[row.clone()], &pb[row]) + sh.d_skip[ch] * u;
        }
    }
}

/// Forward kernel over all groups; groups run in parallel.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_forward<S: Scalar>(
    dims: ScanDims,
    mode: Discretization,
    algo: ScanAlgorithm,
    u: &[S],
    delta: &[S],
    a: &[S],
    b: &[S],
    c: &[S],
    d_skip: &[S],
) -> Vec<S> {
    let sh = Shared { dims, a, d_skip, mode };
    let stride = dims.l * dims.d;
    let mut y = vec![S::zero(); dims.g * stride];
    y.par_chunks_mut(stride).enumerate().for_each(|(g, yg)| {
        let gi = sh.group(g, u, delta, b, c);
        match algo {
            ScanAlgorithm::Sequential => scan_group_seq(&sh, &gi, yg),
            ScanAlgorithm::Parallel => scan_group_par(&sh, &gi, yg),
        }
    });
    y
}

/// Gradients of the scan with respect to each input.
pub(crate) struct ScanGrads<S> {
    pub du: Vec<S>,
    pub ddelta: Vec<S>,
    pub da: Vec<S>,
    pub db: Vec<S>,
    pub dc: Vec<S>,
    pub dd: Vec<S>,
}

struct GroupGrads<S> {
    du: Vec<S>,
    ddelta: Vec<S>,
    db: Vec<S>,
    dc: Vec<S>,
    da: Vec<S>,
    dd: Vec<S>,
}

/// Reverse-mode adjoint of one group. States are recomputed per channel
/// rather than stored by the forward pass, so memory stays O(L N) per worker.
fn scan_group_backward<S: Scalar>(sh: &Shared<'_, S>, gi: &GroupInputs<'_, S>, dy: &[S]) -> GroupGrads<S> {
    let ScanDims { l, d, n, .. } = sh.dims;
    let mut out = GroupGrads {
        du: vec![S::zero(); l * d],
        ddelta: vec![S::zero(); l * d],
        db: vec![S::zero(); l * n],
        dc: vec![S::zero(); l * n],
        da: vec![S::zero(); d * n],
        dd: vec![S::zero(); d],
    };
    let mut states = vec![S::zero(); (l + 1) * n];
    let mut step_a = vec![S::zero(); l * n];
    let mut step_b = vec![S::zero(); l * n];
    let mut lambda = vec![S::zero(); n];
    let mut next_abar = vec![S::zero(); n];
    let mut scratch = vec![S::zero(); n];
    let exact = sh.mode == Discretization::Exact;
    for ch in 0..d {
        discretize_channel(sh, gi, ch, &mut step_a, &mut step_b);
        // states[k + 1] holds s_k
        for k in 0..l {
            let u = gi.u[k * d + ch];
            for j in 0..n {
                states[(k + 1) * n + j] = step_a[k * n + j] * states[k * n + j] + step_b[k * n + j] * u;
            }
        }
        lambda.fill(S::zero());
        next_abar.fill(S::zero());
        if !exact {
            let a = &sh.a[ch * n..][..n];
            for k in (0..l).rev() {
                let (u, dt, g) = (gi.u[k * d + ch], gi.delta[k * d + ch], dy[k * d + ch]);
                let at = k * n;
                let (sa, sb) = (&step_a[at..][..n], &step_b[at..][..n]);
                let (s_prev, s_cur) = (&states[at..][..n], &states[at + n..][..n]);
                let (b, c) = (&gi.b[at..][..n], &gi.c[at..][..n]);
                let dc = &mut out.dc[at..][..n];
                let db = &mut out.db[at..][..n];
                let da = &mut out.da[ch * n..][..n];
                let (lambda, scratch, next_abar) = (&mut lambda[..n], &mut scratch[..n], &mut next_abar[..n]);
                for j in 0..n {
                    dc[j] += g * s_cur[j];
                    // lambda_k = c_k dy_k + abar_{k+1} lambda_{k+1}
                    lambda[j] = c[j] * g + next_abar[j] * lambda[j];
                    // d(abar) * abar, shared by the delta and A gradients
                    scratch[j] = lambda[j] * s_prev[j] * sa[j];
                    da[j] += scratch[j] * dt;
                    db[j] += lambda[j] * u * dt;
                }
                next_abar.copy_from_slice(sa);
                out.dd[ch] += g * u;
                out.du[k * d + ch] = sh.d_skip[ch] * g + dot(lambda, sb);
                out.ddelta[k * d + ch] = dot(scratch, a) + u * dot(lambda, b);
            }
            continue;
        }
        for k in (0..l).rev() {
            let (u, dt, g) = (gi.u[k * d + ch], gi.delta[k * d + ch], dy[k * d + ch]);
            let mut du = sh.d_skip[ch] * g;
            let mut ddelta = S::zero();
            out.dd[ch] += g * u;
            for j in 0..n {
                let a = sh.a[ch * n + j];
                let b = gi.b[k * n + j];
                let (abar, bbar) = (step_a[k * n + j], step_b[k * n + j]);
                let s_prev = states[k * n + j];
                out.dc[k * n + j] += g * states[(k + 1) * n + j];
                // lambda_k = c_k dy_k + abar_{k+1} lambda_{k+1}
                lambda[j] = gi.c[k * n + j] * g + next_abar[j] * lambda[j];
                next_abar[j] = abar;
                let d_abar = lambda[j] * s_prev;
                let d_bbar = lambda[j] * u;
                du += lambda[j] * bbar;
                ddelta += d_abar * abar * a;
                out.da[ch * n + j] += d_abar * abar * dt;
                // bbar = expm1(dt a) / a * b
                let f = (dt * a).exp_m1() / a;
                out.db[k * n + j] += d_bbar * f;
                let df = d_bbar * b;
                ddelta += df * abar;
                out.da[ch * n + j] += df * (dt * abar * a - (abar - S::one())) / (a * a);
            }
            out.du[k * d + ch] = du;
            out.ddelta[k * d + ch] = ddelta;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_backward<S: Scalar>(
    dims: ScanDims,
    mode: Discretization,
    u: &[S],
    delta: &[S],
    a: &[S],
    b: &[S],
    c: &[S],
    d_skip: &[S],
    dy: &[S],
) -> ScanGrads<S> {
    let sh = Shared { dims, a, d_skip, mode };
    let ScanDims { g, l, d, n } = dims;
    let parts: Vec<GroupGrads<S>> = (0..g)
        .into_par_iter()
        .map(|gi| scan_group_backward(&sh, &sh.group(gi, u, delta, b, c), &dy[gi * l * d..(gi + 1) * l * d]))
        .collect();
    let mut grads = ScanGrads {
        du: Vec::with_capacity(g * l * d),
        ddelta: Vec::with_capacity(g * l * d),
        da: vec![S::zero(); d * n],
        db: Vec::with_capacity(g * l * n),
        dc: Vec::with_capacity(g * l * n),
        dd: vec![S::zero(); d],
    };
    // reduce in group order so the result does not depend on the thread count
    for p in parts {
        grads.du.extend_from_slice(&p.du);
        grads.ddelta.extend_from_slice(&p.ddelta);
        grads.db.extend_from_slice(&p.db);
        grads.dc.extend_from_slice(&p.dc);
        for (acc, v) in grads.da.iter_mut().zip(&p.da) {
            *acc += *v;
        }
        for (acc, v) in grads.dd.iter_mut().zip(&p.dd) {
            *acc += *v;
        }
    }
    grads
}

/// Input-independent parameters of the scan: diagonal state matrix `A`
/// (`[D, N]`, strictly negative) and skip weights (`[D]`).
#[derive(Debug, Clone)]
pub struct SsmCore<S: Scalar> {
    pub a: Tensor<S>,
    pub d_skip: Tensor<S>,
}

/// Input-dependent tensors of the scan.
#[derive(Debug, Clone)]
pub struct SelectiveInputs<S: Scalar> {
    /// `[G, L, D]`
    pub u: Tensor<S>,
    /// `[G, L, N]`
    pub b: Tensor<S>,
    /// `[G, L, N]`
    pub c: Tensor<S>,
    /// `[G, L, D]`, strictly positive.
    pub delta: Tensor<S>,
}

/// Discretises every (group, step, channel, state) entry; outputs are
/// `[G, L, D, N]`.
pub fn zoh_discretize<S: Scalar>(
    a: &Tensor<S>,
    b_sel: &Tensor<S>,
    delta: &Tensor<S>,
    mode: Discretization,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (ds, bs) = (delta.shape(), b_sel.shape());
    if a.ndim() != 2 || ds.len() != 3 || bs.len() != 3 || ds[..2] != bs[..2] || a.shape()[0] != ds[2] || a.shape()[1] != bs[2] {
        return Err(Error::shape("zoh_discretize", a.shape(), &[ds.last().copied().unwrap_or(0), bs.last().copied().unwrap_or(0)]));
    }
    check_signs(a, delta)?;
    let (g, l, d, n) = (ds[0], ds[1], ds[2], bs[2]);
    let mut abar = Vec::with_capacity(g * l * d * n);
    let mut bbar = Vec::with_capacity(g * l * d * n);
    for gl in 0..g * l {
        for ch in 0..d {
            for j in 0..n {
                let (x, y) = discretize_step(a.data()[ch * n + j], b_sel.data()[gl * n + j], delta.data()[gl * d + ch], mode);
                abar.push(x);
                bbar.push(y);
            }
        }
    }
    let shape = vec![g, l, d, n];
    Ok((Tensor::from_parts(shape.clone(), abar), Tensor::from_parts(shape, bbar)))
}

fn run<S: Scalar>(core: &SsmCore<S>, x: &SelectiveInputs<S>, mode: Discretization, algo: ScanAlgorithm) -> Result<Tensor<S>> {
    let dims = ScanDims::check(&x.u, &x.delta, &core.a, &x.b, &x.c, &core.d_skip)?;
    check_signs(&core.a, &x.delta)?;
    let y = scan_forward(dims, mode, algo, x.u.data(), x.delta.data(), core.a.data(), x.b.data(), x.c.data(), core.d_skip.data());
    let out = Tensor::from_parts(x.u.shape().to_vec(), y);
    if !out.is_finite() {
        return Err(Error::NonFinite { op: "selective_scan" });
    }
    Ok(out)
}

/// Reference recurrence, strictly left to right.
pub fn selective_scan_seq<S: Scalar>(core: &SsmCore<S>, inputs: &SelectiveInputs<S>, mode: Discretization) -> Result<Tensor<S>> {
    run(core, inputs, mode, ScanAlgorithm::Sequential)
}

/// Same contract as [`selective_scan_seq`], evaluated with a work-efficient
/// associative prefix scan.
pub fn selective_scan_par<S: Scalar>(core: &SsmCore<S>, inputs: &SelectiveInputs<S>, mode: Discretization) -> Result<Tensor<S>> {
    run(core, inputs, mode, ScanAlgorithm::Parallel)
}
