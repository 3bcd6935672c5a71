//! Run configuration: one TOML table per module plus paths and seeds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sqf_core::ingest::SyntheticConfig;
use sqf_core::model::ModelConfig;
use sqf_core::pipeline::{PerturbationConfig, SampleConfig, YearSplit};
use sqf_core::seed::derive_seed;
use sqf_core::train::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Observation table; defaults to `<output_dir>/targets.csv`.
    pub targets: Option<PathBuf>,
    /// Daily weather table; defaults to `<output_dir>/weather.csv`.
    pub weather: Option<PathBuf>,
    /// Per-pixel band table, used instead of `targets` when given.
    pub pixels: Option<PathBuf>,
    /// Cube to climate-group map; defaults to `<output_dir>/groups.csv` when
    /// that file exists.
    pub groups: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub batch_size: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { batch_size: 256 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. When set, every component seed is derived from it and
    /// the per-section seeds are overwritten.
    pub seed: Option<u64>,
    /// Seed of the parameter initialisation.
    pub init_seed: u64,
    pub paths: Paths,
    pub synthetic: SyntheticConfig,
    pub samples: SampleConfig,
    pub perturbation: PerturbationConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: YearSplit,
    pub eval: EvalSettings,
}

/// Component seeds are kept below 2^63 so that they fit TOML integers.
fn component_seed(master: u64, label: &str) -> u64 {
    derive_seed(master, label) >> 1
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    /// Replaces component seeds by ones derived from the master seed, if
    /// any, and clears it so the resolved file stands on its own.
    pub fn resolve_seeds(&mut self) {
        if let Some(m) = self.seed.take() {
            self.synthetic.rng_seed = component_seed(m, "synthetic");
            self.perturbation.rng_seed = component_seed(m, "perturbation");
            self.train.rng_seed = component_seed(m, "train");
            self.init_seed = component_seed(m, "init");
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let field = |name: &str, e: String| CliError::config(format!("[{name}] {e}"));
        self.synthetic.validate().map_err(|e| field("synthetic", e.to_string()))?;
        self.perturbation.validate().map_err(|e| field("perturbation", e.to_string()))?;
        self.model.validate().map_err(|e| field("model", e.to_string()))?;
        self.train.validate().map_err(|e| field("train", e.to_string()))?;
        self.split.validate().map_err(|e| field("split", e.to_string()))?;
        if self.samples.history_len == 0 || self.samples.horizon == 0 || self.samples.shift == 0 {
            return Err(field("samples", "history_len, horizon and shift must be positive".into()));
        }
        if self.samples.horizon != self.model.horizon {
            return Err(field(
                "model",
                format!("horizon {} differs from samples.horizon {}", self.model.horizon, self.samples.horizon),
            ));
        }
        if self.eval.batch_size == 0 {
            return Err(field("eval", "batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::config(format!("cannot serialise configuration: {e}")))
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }

    pub fn targets_path(&self) -> PathBuf {
        self.paths.targets.clone().unwrap_or_else(|| self.out("targets.csv"))
    }

    pub fn weather_path(&self) -> PathBuf {
        self.paths.weather.clone().unwrap_or_else(|| self.out("weather.csv"))
    }

    pub fn groups_path(&self) -> Option<PathBuf> {
        match &self.paths.groups {
            Some(p) => Some(p.clone()),
            None => Some(self.out("groups.csv")).filter(|p| p.exists()),
        }
    }
}
