use ssmvdm_core::data::{generate_clips, SynthKind, SynthSpec, VideoFile};
use ssmvdm_core::diffusion::NoiseSchedule;
use ssmvdm_core::optim::AdamConfig;
use ssmvdm_core::train::{Trainer, TrainConfig};
use ssmvdm_core::unet::{TemporalKind, UNetConfig, VideoUNet};
use ssmvdm_core::{Error, Rng};

fn clips(frames: usize) -> Vec<VideoFile> {
    generate_clips(&SynthSpec::new(SynthKind::BouncingShape, frames, 8), 3).unwrap().into_iter().map(|c| c.1).collect()
}

fn trainer(kind: TemporalKind, data: &[VideoFile]) -> ssmvdm_core::Result<Trainer<f32>> {
    let mut cfg = UNetConfig::new(8, kind, 2, 1, 8, 8);
    cfg.multipliers = vec![1, 2];
    cfg.time_dim = 16;
    let model = VideoUNet::build(cfg, &Rng::new(0))?;
    let tc = TrainConfig { batch: 4, adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() }, ema_decay: 0.9, seed: 5 };
    Trainer::new(model, NoiseSchedule::default(), data, &tc)
}

#[test]
fn untrained_loss_is_the_noise_energy() {
    // the output convolution starts at zero, so the first loss is mean(eps^2)
    for kind in [TemporalKind::SsmBidirectional, TemporalKind::Attention] {
        let loss = trainer(kind, &clips(2)).unwrap().train_step().unwrap();
        assert!((loss - 1.0).abs() < 0.2, "{kind}: {loss}");
    }
}

#[test]
fn resumed_run_reproduces_the_remaining_losses() {
    let data = clips(2);
    let mut straight = trainer(TemporalKind::SsmBidirectional, &data).unwrap();
    let all: Vec<f64> = (0..5).map(|_| straight.train_step().unwrap()).collect();
    let mut first = trainer(TemporalKind::SsmBidirectional, &data).unwrap();
    for _ in 0..2 {
        first.train_step().unwrap();
    }
    let bytes = first.checkpoint().to_bytes();
    let ckpt = ssmvdm_core::checkpoint::Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    let mut resumed = Trainer::resume(&ckpt, &data).unwrap();
    assert_eq!(resumed.step, 2);
    let rest: Vec<f64> = (0..3).map(|_| resumed.train_step().unwrap()).collect();
    assert_eq!(rest, all[2..]);
    assert!(all.iter().all(|l| l.is_finite()));
}

#[test]
fn mismatched_clip_extents_fail_before_training() {
    assert!(matches!(trainer(TemporalKind::Attention, &clips(4)), Err(Error::Data(_))));
    assert!(matches!(trainer(TemporalKind::Attention, &[]), Err(Error::Data(_))));
}
