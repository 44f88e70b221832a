//! Selective state-space temporal layers.

mod block;
mod op;
mod scan;

pub use block::{bidirectional_mamba_forward, mamba_block_forward, BranchParams, Direction, MambaParams, SsmConfig};
pub use scan::{
    discretize_step, selective_scan_par, selective_scan_seq, zoh_discretize, Discretization, ScanAlgorithm, SelectiveInputs, SsmCore,
};
