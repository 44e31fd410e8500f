//! Decoder-only transformer: configuration, parameters, forward and backward
//! passes, weighted cross-entropy, and checkpoints.
//!
//! Everything runs in `f64`. Blocks are pre-norm, positions are sinusoidal unless
//! `learned_positions` is set, and the output projection is tied to the token
//! embedding unless `share_input_output_embed` is cleared.

mod checkpoint;
mod config;
pub mod linalg;
mod params;
mod transformer;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Preset, DESK_PARAM_LIMIT};
pub use params::{ParamLayout, Params, TensorSpec};
pub use transformer::{sinusoidal_positions, weighted_loss, weighted_loss_grad, Transformer, WeightedSequence};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("input of length {len} exceeds max_positions {max}")]
    TooLong { len: usize, max: usize },
    #[error("all loss weights are zero")]
    ZeroWeights,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
