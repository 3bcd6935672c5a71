//! Loss, optimizer, learning-rate schedule and the epoch loop.

mod adam;
mod loss;
mod scheduler;
mod trainer;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use loss::{batch_loss, loss_and_grad, pinball, pinball_slope, temporal_weight, LossWeights};
pub use scheduler::PlateauScheduler;
pub use trainer::{batch_gradients, train, CheckpointSink, EpochRecord, TrainOutcome, GRADIENT_SHARD};

use serde::{Deserialize, Serialize};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<sqf_autodiff::AutodiffError> for TrainError {
    fn from(e: sqf_autodiff::AutodiffError) -> Self {
        match e {
            sqf_autodiff::AutodiffError::NonFinite { .. } => TrainError::Numeric(e.to_string()),
            other => TrainError::Model(ModelError::from(other)),
        }
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Optimisation settings. Which inputs the model sees is part of
/// [`crate::model::ModelConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub lr_min: f64,
    /// Decay rate of the temporal loss weights.
    pub alpha: f64,
    pub use_temporal_weights: bool,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            lr: 1e-4,
            lr_factor: 0.2,
            lr_patience: 20,
            lr_min: 5e-5,
            alpha: 0.5,
            use_temporal_weights: true,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive and finite");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must lie in (0, 1)");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr) {
            return bad("lr_min must be positive and no larger than lr");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive and finite");
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            temporal: self.use_temporal_weights,
        }
    }

    pub fn scheduler(&self) -> PlateauScheduler {
        PlateauScheduler::new(self.lr, self.lr_factor, self.lr_patience, self.lr_min)
    }
}
