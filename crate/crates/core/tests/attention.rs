mod common;

use common::jitter;
use proptest::prelude::*;
use ssmvdm_core::attention::{spatial_linear_attention_forward, temporal_attention_forward, AttentionConfig, AttentionParams};
use ssmvdm_core::memory::ArenaScope;
use ssmvdm_core::rng::gaussian_sample;
use ssmvdm_core::{Graph, ParamStore, Rng, Tensor};

fn layer(seed: u64, channels: usize, heads: usize) -> (AttentionParams, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let cfg = AttentionConfig { heads, head_dim: 8 };
    let p = AttentionParams::new(&mut store, &Rng::new(seed), "attn", channels, cfg).unwrap();
    jitter(&mut store, &mut Rng::new(seed).fork(9), 0.1);
    (p, store)
}

fn temporal(p: &AttentionParams, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    g.bind_params(store, false).unwrap();
    let xv = g.input(x.clone()).unwrap();
    let y = temporal_attention_forward(&mut g, p, xv).unwrap();
    g.value(y).clone()
}

fn spatial(p: &AttentionParams, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    g.bind_params(store, false).unwrap();
    let xv = g.input(x.clone()).unwrap();
    let y = spatial_linear_attention_forward(&mut g, p, xv).unwrap();
    g.value(y).clone()
}

/// `x + W_o^T (value of the single token) + b_o`, token by token.
fn single_token_oracle(p: &AttentionParams, store: &ParamStore<f64>, token: &[f64]) -> Vec<f64> {
    let c = token.len();
    let inner = p.config.inner();
    let mean = token.iter().sum::<f64>() / c as f64;
    let var = token.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
    let (gamma, beta) = (store.get(p.ln_gamma).data(), store.get(p.ln_beta).data());
    let h: Vec<f64> = (0..c).map(|i| (token[i] - mean) / (var + 1e-5).sqrt() * gamma[i] + beta[i]).collect();
    let wv = store.get(p.wv).data();
    let v: Vec<f64> = (0..inner).map(|j| (0..c).map(|i| h[i] * wv[i * inner + j]).sum()).collect();
    let (wo, bo) = (store.get(p.wo).data(), store.get(p.bo).data());
    (0..c).map(|o| token[o] + bo[o] + (0..inner).map(|j| v[j] * wo[j * c + o]).sum::<f64>()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn temporal_attention_is_permutation_equivariant(seed in any::<u64>(), l in 1usize..=7, heads in 1usize..=3) {
        let c = 6;
        let (p, store) = layer(seed, c, heads);
        let x: Tensor<f64> = gaussian_sample(&mut Rng::new(seed).fork(1), &[2, l, c]).unwrap();
        // rotate the sequence by one
        let perm: Vec<usize> = (0..l).map(|k| (k + 1) % l).collect();
        let permute = |t: &Tensor<f64>| {
            let mut out = Vec::with_capacity(t.numel());
            for gi in 0..2 {
                for &k in &perm {
                    out.extend_from_slice(&t.data()[(gi * l + k) * c..][..c]);
                }
            }
            Tensor::new(&[2, l, c], out).unwrap()
        };
        let a = permute(&temporal(&p, &store, &x));
        let b = temporal(&p, &store, &permute(&x));
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }
}

#[test]
fn single_step_attends_only_to_itself() {
    let (p, store) = layer(1, 5, 2);
    let x: Tensor<f64> = gaussian_sample(&mut Rng::new(2), &[3, 1, 5]).unwrap();
    let y = temporal(&p, &store, &x);
    for gi in 0..3 {
        let want = single_token_oracle(&p, &store, &x.data()[gi * 5..][..5]);
        for (a, b) in y.data()[gi * 5..][..5].iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_queries_and_keys_average_values_uniformly() {
    let (p, mut store) = layer(3, 4, 1);
    store.set(p.wq, Tensor::zeros(&[4, 8]).unwrap()).unwrap();
    store.set(p.wk, Tensor::zeros(&[4, 8]).unwrap()).unwrap();
    let l = 5;
    let x: Tensor<f64> = gaussian_sample(&mut Rng::new(4), &[1, l, 4]).unwrap();
    let y = temporal(&p, &store, &x);
    // every output minus its residual is the same averaged value
    let mixed: Vec<Vec<f64>> = (0..l).map(|k| (0..4).map(|o| y.data()[k * 4 + o] - x.data()[k * 4 + o]).collect()).collect();
    let per_token: Vec<Vec<f64>> = (0..l)
        .map(|k| {
            let tok = &x.data()[k * 4..][..4];
            single_token_oracle(&p, &store, tok).iter().zip(tok).map(|(a, b)| a - b).collect()
        })
        .collect();
    for o in 0..4 {
        let avg = per_token.iter().map(|v| v[o]).sum::<f64>() / l as f64;
        for row in &mixed {
            assert!((row[o] - avg).abs() < 1e-12);
        }
    }
}

#[test]
fn spatial_single_position_reduces_to_value_projection() {
    let (p, store) = layer(5, 6, 2);
    let x: Tensor<f64> = gaussian_sample(&mut Rng::new(6), &[4, 6, 1, 1]).unwrap();
    let y = spatial(&p, &store, &x);
    for n in 0..4 {
        let want = single_token_oracle(&p, &store, &x.data()[n * 6..][..6]);
        for (a, b) in y.data()[n * 6..][..6].iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn both_layers_preserve_shape() {
    let mut store = ParamStore::<f32>::new();
    let p = AttentionParams::new(&mut store, &Rng::new(0), "a", 32, AttentionConfig::from_base_channels(32).unwrap()).unwrap();
    let mut g = Graph::new();
    g.bind_params(&store, false).unwrap();
    let x = g.input(gaussian_sample(&mut Rng::new(1), &[8, 32, 8, 8]).unwrap()).unwrap();
    let y = p.spatial_forward(&mut g, x).unwrap();
    assert_eq!(g.shape(y), &[8, 32, 8, 8]);
    let t = g.input(gaussian_sample(&mut Rng::new(2), &[3, 7, 32]).unwrap()).unwrap();
    let y = p.temporal_forward(&mut g, t).unwrap();
    assert_eq!(g.shape(y), &[3, 7, 32]);
    let bad = g.input(Tensor::zeros(&[3, 7, 16]).unwrap()).unwrap();
    assert!(p.temporal_forward(&mut g, bad).is_err());
}

#[test]
fn base_channels_set_heads_of_width_64() {
    let cfg = AttentionConfig::from_base_channels(64).unwrap();
    assert_eq!((cfg.heads, cfg.head_dim), (8, 64));
    assert!(AttentionConfig::from_base_channels(12).is_err());
}

/// Peak bytes of a training-mode spatial forward at side `s`.
fn spatial_peak(s: usize) -> f64 {
    let mut store = ParamStore::<f32>::new();
    let p = AttentionParams::new(&mut store, &Rng::new(0), "a", 16, AttentionConfig { heads: 2, head_dim: 8 }).unwrap();
    let x: Tensor<f32> = gaussian_sample(&mut Rng::new(1), &[2, 16, s, s]).unwrap();
    let scope = ArenaScope::open(None);
    let mut g = Graph::new();
    g.bind_params(&store, true).unwrap();
    let xv = g.input(x).unwrap();
    p.spatial_forward(&mut g, xv).unwrap();
    scope.peak_bytes() as f64
}

#[test]
fn spatial_attention_memory_is_linear_in_positions() {
    // 4x the positions costs about 4x the bytes, far from the 16x of a
    // position-by-position score matrix
    let ratio = spatial_peak(32) / spatial_peak(16);
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
}
