mod common;

use common::jitter;
use ssmvdm_core::rng::gaussian_sample;
use ssmvdm_core::unet::{TemporalKind, UNetConfig, VideoUNet};
use ssmvdm_core::{Rng, Tensor};

fn tiny(kind: TemporalKind, frames: usize) -> UNetConfig {
    let mut cfg = UNetConfig::new(8, kind, frames, 1, 8, 8);
    cfg.multipliers = vec![1, 2];
    cfg.time_dim = 16;
    cfg
}

fn jittered(cfg: UNetConfig, seed: u64) -> VideoUNet<f64> {
    let mut m = VideoUNet::build(cfg, &Rng::new(seed)).unwrap();
    jitter(&mut m.params, &mut Rng::new(seed).fork(77), 0.05);
    m
}

const KINDS: [TemporalKind; 3] = [TemporalKind::SsmBidirectional, TemporalKind::SsmUnidirectional, TemporalKind::Attention];

#[test]
fn output_shape_equals_input_shape() {
    let model = VideoUNet::<f32>::build(UNetConfig::new(8, TemporalKind::SsmBidirectional, 8, 1, 16, 16), &Rng::new(0)).unwrap();
    let x: Tensor<f32> = gaussian_sample(&mut Rng::new(1), &[1, 8, 1, 16, 16]).unwrap();
    assert_eq!(model.predict(&x, &[10]).unwrap().shape(), &[1, 8, 1, 16, 16]);
    let wrong: Tensor<f32> = Tensor::zeros(&[1, 8, 1, 16, 8]).unwrap();
    assert!(model.predict(&wrong, &[10]).is_err());
}

#[test]
fn stages_halve_resolution_and_heads_follow_base() {
    let cfg = UNetConfig::new(32, TemporalKind::Attention, 4, 1, 32, 32);
    let sides: Vec<usize> = cfg.stage_resolutions().iter().map(|r| r.0).collect();
    assert_eq!(sides, vec![32, 16, 8, 4]);
    let cfg = UNetConfig::new(64, TemporalKind::Attention, 4, 1, 32, 32);
    assert_eq!((cfg.attention().heads, cfg.attention().head_dim), (8, 64));
    let bad = UNetConfig::new(32, TemporalKind::Attention, 4, 1, 36, 36);
    assert!(VideoUNet::<f32>::build(bad, &Rng::new(0)).is_err());
}

#[test]
fn temporal_kind_swap_leaves_spatial_parameters_identical() {
    let models: Vec<VideoUNet<f64>> = KINDS.iter().map(|&k| VideoUNet::build(tiny(k, 3), &Rng::new(4)).unwrap()).collect();
    let spatial = |m: &VideoUNet<f64>| -> Vec<(String, Vec<f64>)> {
        m.params
            .iter()
            .filter(|p| !VideoUNet::<f64>::is_temporal_param(&p.name))
            .map(|p| (p.name.clone(), p.value.to_vec()))
            .collect()
    };
    let reference = spatial(&models[0]);
    assert!(!reference.is_empty());
    for m in &models[1..] {
        assert_eq!(spatial(m), reference);
    }
}

#[test]
fn permuting_the_batch_permutes_the_outputs() {
    for kind in KINDS {
        let m = jittered(tiny(kind, 3), 5);
        let a: Tensor<f64> = gaussian_sample(&mut Rng::new(1), &[1, 3, 1, 8, 8]).unwrap();
        let b: Tensor<f64> = gaussian_sample(&mut Rng::new(2), &[1, 3, 1, 8, 8]).unwrap();
        let ab = Tensor::stack(&[a.index_axis0(0).unwrap(), b.index_axis0(0).unwrap()]).unwrap();
        let ba = Tensor::stack(&[b.index_axis0(0).unwrap(), a.index_axis0(0).unwrap()]).unwrap();
        let y_ab = m.predict(&ab, &[3, 90]).unwrap();
        let y_ba = m.predict(&ba, &[90, 3]).unwrap();
        for i in 0..2 {
            let diff = y_ab.index_axis0(i).unwrap().max_abs_diff(&y_ba.index_axis0(1 - i).unwrap()).unwrap();
            assert!(diff < 1e-12, "{kind}: {diff}");
        }
    }
}

/// Largest output change per frame when frame `k` of the input moves.
fn frame_response(m: &VideoUNet<f64>, k: usize) -> Vec<f64> {
    let frames = m.config.frames;
    let x: Tensor<f64> = gaussian_sample(&mut Rng::new(3), &[1, frames, 1, 8, 8]).unwrap();
    let mut moved = x.to_vec();
    for v in &mut moved[k * 64..(k + 1) * 64] {
        *v += 0.5;
    }
    let y0 = m.predict(&x, &[20]).unwrap();
    let y1 = m.predict(&Tensor::new(x.shape(), moved).unwrap(), &[20]).unwrap();
    (0..frames)
        .map(|f| y0.data()[f * 64..][..64].iter().zip(&y1.data()[f * 64..][..64]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect()
}

#[test]
fn temporal_layers_couple_frames_and_their_absence_does_not() {
    for kind in KINDS {
        let r = frame_response(&jittered(tiny(kind, 4), 6), 0);
        assert!(r[1..].iter().any(|&d| d > 1e-8), "{kind}: {r:?}");
    }
    let r = frame_response(&jittered(tiny(TemporalKind::None, 4), 6), 1);
    assert!(r[1] > 1e-8);
    assert!(r.iter().enumerate().all(|(f, &d)| f == 1 || d == 0.0), "{r:?}");
}

#[test]
fn noise_level_changes_the_prediction() {
    let m = jittered(tiny(TemporalKind::SsmBidirectional, 3), 8);
    let x: Tensor<f64> = gaussian_sample(&mut Rng::new(9), &[1, 3, 1, 8, 8]).unwrap();
    let d = m.predict(&x, &[1]).unwrap().max_abs_diff(&m.predict(&x, &[256]).unwrap()).unwrap();
    assert!(d > 1e-6, "{d}");
}

#[test]
fn ssm_and_attention_variants_have_matching_size_at_base_64() {
    let count = |kind| VideoUNet::<f32>::build(UNetConfig::new(64, kind, 2, 3, 8, 8), &Rng::new(0)).unwrap().num_params() as f64;
    let (ssm, attn) = (count(TemporalKind::SsmBidirectional), count(TemporalKind::Attention));
    let gap = (ssm - attn).abs() / attn;
    assert!(gap < 0.05, "ssm {ssm} attention {attn} gap {gap}");
}
