use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::pipeline::{FUTURE_WIDTH, HISTORY_WIDTH};

/// Which inputs reach the network. A disabled input is zeroed (or, for the
/// future branch, replaced by a learned constant embedding).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSwitches {
    pub future: bool,
    /// History weather covariates (raw and engineered channels).
    pub history: bool,
    /// Past NDVI on history tokens.
    pub target: bool,
    pub feature_engineering: bool,
}

impl Default for InputSwitches {
    fn default() -> Self {
        Self {
            future: true,
            history: true,
            target: true,
            feature_engineering: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Encoder layers in each branch.
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub history_width: usize,
    pub future_width: usize,
    pub horizon: usize,
    /// Sort each predicted row so quantiles never cross.
    pub quantile_sort: bool,
    pub inputs: InputSwitches,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 8,
            n_heads: 8,
            ffn_dim: 512,
            dropout: 0.1,
            history_width: HISTORY_WIDTH,
            future_width: FUTURE_WIDTH,
            horizon: 3,
            quantile_sort: false,
            inputs: InputSwitches::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.ffn_dim == 0 || self.horizon == 0 {
            return err("d_model, n_heads, ffn_dim and horizon must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return err(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.history_width != self.future_width + 1 {
            return err(format!(
                "history width {} must be future width {} plus one",
                self.history_width, self.future_width
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.head_dim(), 16);
    }

    #[test]
    fn indivisible_heads_are_rejected() {
        let c = ModelConfig {
            d_model: 30,
            n_heads: 4,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = ModelConfig {
            quantile_sort: true,
            inputs: InputSwitches {
                target: false,
                ..Default::default()
            },
            ..Default::default()
        };
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
