//! Dual-branch masked transformer with a shared linear quantile head.

mod batch;
mod checkpoint;
mod complexity;
mod config;
mod network;
mod params;

pub use batch::Batch;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use complexity::{count_parameters, estimate_flops, estimate_flops_at, layer_parameters};
pub use config::{InputSwitches, ModelConfig};
pub use network::{
    embed_and_position, encode, pool_history, positional_encoding, quantile_head, select_future, BranchVars, DropoutCtx,
    Forward, LayerVars, Mode, Network,
};
pub use params::{BranchLayout, LayerLayout, Param, ParamLayout, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] sqf_autodiff::AutodiffError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
