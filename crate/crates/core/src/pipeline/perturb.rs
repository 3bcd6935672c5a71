//! Horizon-dependent multiplicative noise on future weather.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::domain::WeatherRow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Relative noise level at unit scaling.
    pub base_noise: f64,
    /// Scaling factor reached at the last future day.
    pub target_g_last: f64,
    pub rng_seed: u64,
    pub enabled: bool,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            base_noise: 0.1,
            target_g_last: 2.0,
            rng_seed: 0,
            enabled: true,
        }
    }
}

impl PerturbationConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_noise >= 0.0 && self.base_noise.is_finite()) {
            return Err(PipelineError::Argument(format!("base_noise {} must be >= 0", self.base_noise)));
        }
        if !(self.target_g_last >= 1.0 && self.target_g_last.is_finite()) {
            return Err(PipelineError::Argument(format!(
                "target_g_last {} must be >= 1",
                self.target_g_last
            )));
        }
        Ok(())
    }
}

/// Source of standard normal draws.
pub trait NoiseSource {
    fn standard_normal(&mut self) -> f64;
}

pub struct GaussianNoise(ChaCha8Rng);

impl GaussianNoise {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl NoiseSource for GaussianNoise {
    fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }
}

/// Always draws zero.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normal(&mut self) -> f64 {
        0.0
    }
}

/// `g_k = 1 + beta * dt_k` with `beta = (g_last - 1) / dt_K`, so the factor is
/// `g_last` at the final offset.
pub fn horizon_scaling(offsets: &[f64], g_last: f64) -> Vec<f64> {
    let Some(&last) = offsets.last() else {
        return Vec::new();
    };
    let beta = (g_last - 1.0) / last;
    offsets.iter().map(|&dt| 1.0 + beta * dt).collect()
}

/// Perturbs every raw variable of day `k` as `x * (1 + base_noise * g_k * eps)`
/// with noise drawn from a stream seeded by `config.rng_seed`.
pub fn perturb_future(rows: &[WeatherRow], offsets: &[f64], config: &PerturbationConfig) -> Vec<WeatherRow> {
    perturb_future_with(rows, offsets, config, &mut GaussianNoise::new(config.rng_seed))
}

/// As [`perturb_future`] with an explicit noise source. Draws are taken day by
/// day in variable order.
pub fn perturb_future_with(
    rows: &[WeatherRow],
    offsets: &[f64],
    config: &PerturbationConfig,
    noise: &mut impl NoiseSource,
) -> Vec<WeatherRow> {
    if !config.enabled {
        return rows.to_vec();
    }
    let g = horizon_scaling(offsets, config.target_g_last);
    rows.iter()
        .zip(g)
        .map(|(row, gk)| {
            let mut a = row.to_array();
            for x in &mut a {
                *x *= 1.0 + config.base_noise * gk * noise.standard_normal();
            }
            WeatherRow::from_array(a)
        })
        .collect()
}
