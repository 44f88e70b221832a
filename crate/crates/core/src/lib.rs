//! Video diffusion with selective state-space temporal layers.

pub mod attention;
pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod memory;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod ssm;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
