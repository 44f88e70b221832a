//! Synthetic clips, the binary clip container, frame export and dataset
//! directories.

mod dataset;
mod export;
mod synth;
mod video;

pub use dataset::{clip_seed, generate_clips, list_dataset, load_dataset, prepare_out_dir, write_dataset, MANIFEST};
pub use export::{dequantize, export_frames_pgm, quantize};
pub use synth::{gen_bouncing_shape, gen_mirrored_sequence, generate, hflip_frame, SynthKind, SynthSpec};
pub use video::{read_video, write_video, VideoFile, VIDEO_MAGIC, VIDEO_VERSION};
