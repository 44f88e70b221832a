mod common;

use common::jitter;
use proptest::prelude::*;
use ssmvdm_core::rng::gaussian_sample;
use ssmvdm_core::ssm::{bidirectional_mamba_forward, mamba_block_forward, Direction, MambaParams, SsmConfig};
use ssmvdm_core::{Graph, ParamStore, Rng, Tensor};

struct Block {
    params: MambaParams,
    store: ParamStore<f64>,
}

fn block(seed: u64, channels: usize, directions: &[Direction]) -> Block {
    let mut store = ParamStore::new();
    let cfg = SsmConfig { state: 4, ..SsmConfig::default() };
    let params = MambaParams::new(&mut store, &Rng::new(seed), "blk", channels, cfg, directions).unwrap();
    jitter(&mut store, &mut Rng::new(seed ^ 0x5eed), 0.2);
    Block { params, store }
}

#[derive(Clone, Copy)]
enum Mode {
    Branch(Direction),
    All,
}

fn run(b: &Block, x: &Tensor<f64>, mode: Mode) -> Tensor<f64> {
    let mut g = Graph::new();
    g.bind_params(&b.store, false).unwrap();
    let xv = g.input(x.clone()).unwrap();
    let y = match mode {
        Mode::Branch(d) => mamba_block_forward(&mut g, &b.params, xv, d).unwrap(),
        Mode::All => b.params.forward(&mut g, xv).unwrap(),
    };
    g.value(y).clone()
}

/// Adds `delta * (ch + 1)` to channel `ch` of step `k` in every group. The
/// shift is not constant across channels, so the block's layer norm cannot
/// cancel it.
fn perturb(x: &Tensor<f64>, k: usize, delta: f64) -> Tensor<f64> {
    let s = x.shape();
    let (l, c) = (s[1], s[2]);
    let mut data = x.to_vec();
    for gi in 0..s[0] {
        for ch in 0..c {
            data[(gi * l + k) * c + ch] += delta * (ch + 1) as f64;
        }
    }
    Tensor::new(s, data).unwrap()
}

fn step(y: &Tensor<f64>, gi: usize, k: usize) -> &[f64] {
    let s = y.shape();
    let at = (gi * s[1] + k) * s[2];
    &y.data()[at..at + s[2]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn forward_branch_ignores_the_future(seed in any::<u64>(), l in 2usize..=12, c in 2usize..=6, k_frac in 0.0f64..1.0) {
        let b = block(seed, c, &[Direction::Forward]);
        let x: Tensor<f64> = gaussian_sample(&mut Rng::new(seed).fork(1), &[2, l, c]).unwrap();
        let k = 1 + ((l - 1) as f64 * k_frac) as usize % (l - 1);
        let y0 = run(&b, &x, Mode::Branch(Direction::Forward));
        let y1 = run(&b, &perturb(&x, k, 0.7), Mode::Branch(Direction::Forward));
        for gi in 0..2 {
            for j in 0..k {
                prop_assert_eq!(step(&y0, gi, j), step(&y1, gi, j));
            }
        }
        // the perturbation does propagate forward, so the check is not vacuous
        if k + 1 < l {
            prop_assert!(step(&y0, 0, l - 1) != step(&y1, 0, l - 1));
        }
    }

    #[test]
    fn backward_branch_ignores_the_past(seed in any::<u64>(), l in 2usize..=12, c in 2usize..=6, k_frac in 0.0f64..1.0) {
        let b = block(seed, c, &[Direction::Backward]);
        let x: Tensor<f64> = gaussian_sample(&mut Rng::new(seed).fork(1), &[2, l, c]).unwrap();
        let k = ((l - 1) as f64 * k_frac) as usize % (l - 1);
        let y0 = run(&b, &x, Mode::All);
        let y1 = run(&b, &perturb(&x, k, 0.7), Mode::All);
        for gi in 0..2 {
            for j in k + 1..l {
                prop_assert_eq!(step(&y0, gi, j), step(&y1, gi, j));
            }
        }
        if k > 0 {
            prop_assert!(step(&y0, 0, 0) != step(&y1, 0, 0));
        }
    }

    #[test]
    fn tied_bidirectional_block_commutes_with_time_reversal(seed in any::<u64>(), l in 1usize..=10, c in 1usize..=6) {
        let mut b = block(seed, c, &[Direction::Forward, Direction::Backward]);
        b.params.tie_branches(&mut b.store, 0, 1).unwrap();
        let x: Tensor<f64> = gaussian_sample(&mut Rng::new(seed).fork(2), &[3, l, c]).unwrap();
        let flip = |t: &Tensor<f64>| {
            let s = t.shape();
            let mut out = Vec::with_capacity(t.numel());
            for gi in 0..s[0] {
                for k in (0..s[1]).rev() {
                    out.extend_from_slice(step(t, gi, k));
                }
            }
            Tensor::new(s, out).unwrap()
        };
        let direct = run(&b, &x, Mode::All);
        let mirrored = flip(&run(&b, &flip(&x), Mode::All));
        prop_assert!(direct.max_abs_diff(&mirrored).unwrap() < 1e-10);
    }
}

#[test]
fn bidirectional_block_is_not_causal() {
    let b = block(11, 4, &[Direction::Forward, Direction::Backward]);
    let x: Tensor<f64> = gaussian_sample(&mut Rng::new(3), &[1, 6, 4]).unwrap();
    let mut g = Graph::new();
    g.bind_params(&b.store, false).unwrap();
    let xv = g.input(x.clone()).unwrap();
    let yv = bidirectional_mamba_forward(&mut g, &b.params, xv).unwrap();
    let y0 = g.value(yv).clone();
    let y1 = run(&b, &perturb(&x, 5, 0.7), Mode::All);
    let change = step(&y0, 0, 0).iter().zip(step(&y1, 0, 0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(change > 1e-6, "perturbing the last step moved step 0 by only {change}");
}

#[test]
fn fresh_block_is_the_identity() {
    let mut store = ParamStore::<f64>::new();
    let params = MambaParams::bidirectional(&mut store, &Rng::new(0), "b", 8, SsmConfig::default()).unwrap();
    let x: Tensor<f64> = gaussian_sample(&mut Rng::new(1), &[3, 5, 8]).unwrap();
    let y = run(&Block { params, store }, &x, Mode::All);
    assert_eq!(y.data(), x.data());
}

#[test]
fn block_preserves_shape_and_rejects_wrong_width() {
    let mut store = ParamStore::<f32>::new();
    let params = MambaParams::bidirectional(&mut store, &Rng::new(0), "b", 32, SsmConfig::default()).unwrap();
    let mut g = Graph::new();
    g.bind_params(&store, false).unwrap();
    let x = g.input(gaussian_sample(&mut Rng::new(1), &[12, 16, 32]).unwrap()).unwrap();
    let y = params.forward(&mut g, x).unwrap();
    assert_eq!(g.shape(y), &[12, 16, 32]);
    let bad = g.input(Tensor::zeros(&[2, 4, 31]).unwrap()).unwrap();
    assert!(params.forward(&mut g, bad).is_err());
    assert_eq!(params.config.expand, 2);
    assert_eq!(params.config.state, 16);
}

