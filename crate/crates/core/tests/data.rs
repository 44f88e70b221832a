use std::fs;

use proptest::prelude::*;
use ssmvdm_core::data::*;
use ssmvdm_core::{Error, Rng};

fn spec(kind: SynthKind, frames: usize, res: usize, seed: u64) -> SynthSpec {
    let mut s = SynthSpec::new(kind, frames, res);
    s.seed = seed;
    s
}

fn correlation(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - ma) * (y as f64 - mb)).sum();
    let va: f64 = a.iter().map(|&x| (x as f64 - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|&y| (y as f64 - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Coverage sums to the square's area in every frame: the shape is
    /// never clipped, so its pixel mass is conserved over long horizons.
    #[test]
    fn shape_mass_is_conserved(seed in any::<u64>(), frames in 2usize..=64, res in 8usize..=24) {
        let clip = gen_bouncing_shape(&spec(SynthKind::BouncingShape, frames, res, seed), &mut Rng::new(seed)).unwrap();
        let mass = |k: usize| clip.frame(k).iter().map(|&v| (v as f64 + 1.0) / 2.0).sum::<f64>();
        let first = mass(0);
        prop_assert!(first > 0.0);
        for k in 1..frames {
            prop_assert!((mass(k) - first).abs() < 1e-3 * res as f64, "frame {k}: {} vs {first}", mass(k));
        }
        prop_assert!(clip.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn unit_velocity_shifts_one_pixel_right(seed in any::<u64>(), res in 8usize..=24) {
        let mut s = spec(SynthKind::BouncingShape, 2, res, seed);
        s.velocity = Some((1.0, 0.0));
        let clip = gen_bouncing_shape(&s, &mut Rng::new(seed)).unwrap();
        let (f0, f1) = (clip.frame(0), clip.frame(1));
        // a background last column means the step did not reach the wall
        prop_assume!((0..res).all(|r| f0[r * res + res - 1] == -1.0));
        for r in 0..res {
            prop_assert_eq!(f1[r * res], -1.0);
            for c in 1..res {
                prop_assert!((f1[r * res + c] - f0[r * res + c - 1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mirrored_frames_are_exact_partners(seed in any::<u64>(), half in 1usize..=16, res in 8usize..=20, channels in prop_oneof![Just(1usize), Just(3)]) {
        let mut s = spec(SynthKind::MirroredSequence, 2 * half, res, seed);
        s.channels = channels;
        let clip = gen_mirrored_sequence(&s, &mut Rng::new(seed)).unwrap();
        let l = 2 * half;
        for k in 0..l {
            let partner = hflip_frame(clip.frame(l - 1 - k), res);
            prop_assert_eq!(clip.frame(k), &partner[..]);
            let r = correlation(clip.frame(k), &partner);
            prop_assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn video_bytes_round_trip_exactly(f in 1usize..5, c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let data: Vec<f32> = (0..f * c * h * w).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
        let v = VideoFile::new(f, c, h, w, data).unwrap();
        let bytes = v.to_bytes();
        let back = VideoFile::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &v);
        prop_assert_eq!(back.to_bytes(), bytes.clone());
        let cut = (seed as usize) % bytes.len();
        prop_assert!(VideoFile::from_bytes(&bytes[..cut]).is_err());
    }

    #[test]
    fn quantization_round_trip_is_within_one_level(v in -1.0f32..=1.0) {
        prop_assert!((dequantize(quantize(v)) - v).abs() <= 1.0 / 255.0 + 1e-7);
    }
}

#[test]
fn still_shape_gives_identical_frames() {
    let mut s = spec(SynthKind::BouncingShape, 6, 16, 3);
    s.velocity = Some((0.0, 0.0));
    let clip = gen_bouncing_shape(&s, &mut Rng::new(3)).unwrap();
    for k in 1..6 {
        assert_eq!(clip.frame(k), clip.frame(0));
    }
}

#[test]
fn generator_contract_errors() {
    let mut s = spec(SynthKind::BouncingShape, 4, 16, 0);
    s.size = (10.0, 20.0);
    assert!(matches!(gen_bouncing_shape(&s, &mut Rng::new(0)), Err(Error::Config(_))));
    let odd = spec(SynthKind::MirroredSequence, 5, 16, 0);
    assert!(matches!(gen_mirrored_sequence(&odd, &mut Rng::new(0)), Err(Error::Config(_))));
    let two = gen_mirrored_sequence(&spec(SynthKind::MirroredSequence, 2, 16, 0), &mut Rng::new(0)).unwrap();
    assert_eq!(two.frame(0), &hflip_frame(two.frame(1), 16)[..]);
}

#[test]
fn datasets_are_deterministic_and_seeds_distinct() {
    let s = spec(SynthKind::BouncingShape, 4, 8, 42);
    let a = generate_clips(&s, 8).unwrap();
    let b = generate_clips(&s, 8).unwrap();
    assert_eq!(a, b);
    for i in 0..8 {
        for j in i + 1..8 {
            assert_ne!(a[i].1, a[j].1);
        }
    }
    assert!(matches!(generate_clips(&s, 0), Err(Error::Config(_))));
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let clips = generate_clips(&spec(SynthKind::MirroredSequence, 4, 8, 1), 8).unwrap();
    let paths = write_dataset(&out, &clips, false).unwrap();
    assert_eq!(paths.len(), 8);
    let manifest = fs::read_to_string(out.join(MANIFEST)).unwrap();
    assert_eq!(manifest.lines().count(), 8);
    let loaded = load_dataset(&out).unwrap();
    assert_eq!(loaded, clips.iter().map(|c| c.1.clone()).collect::<Vec<_>>());
    let first = fs::read(&paths[0]).unwrap();
    assert!(matches!(write_dataset(&out, &clips, false), Err(Error::Config(_))));
    write_dataset(&out, &clips, true).unwrap();
    assert_eq!(fs::read(&paths[0]).unwrap(), first);
}

#[test]
fn mixed_extents_and_empty_directories_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(list_dataset(dir.path()), Err(Error::Data(_))));
    write_video(&dir.path().join("a.vvid"), &VideoFile::new(2, 1, 2, 2, vec![0.0; 8]).unwrap()).unwrap();
    write_video(&dir.path().join("b.vvid"), &VideoFile::new(3, 1, 2, 2, vec![0.0; 12]).unwrap()).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Data(_))));
}

#[test]
fn file_round_trip_and_frame_exports() {
    let dir = tempfile::tempdir().unwrap();
    let clip = gen_bouncing_shape(&spec(SynthKind::BouncingShape, 5, 8, 2), &mut Rng::new(2)).unwrap();
    let path = dir.path().join("c.vvid");
    write_video(&path, &clip).unwrap();
    assert_eq!(read_video(&path).unwrap(), clip);
    let frames = export_frames_pgm(&clip, &dir.path().join("frames")).unwrap();
    assert_eq!(frames.len(), 5);
    let bytes = fs::read(&frames[0]).unwrap();
    assert!(bytes.starts_with(b"P5\n8 8\n255\n"));
    assert_eq!(bytes.len(), b"P5\n8 8\n255\n".len() + 64);
}
