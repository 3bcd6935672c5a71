//! From raw series and weather to scaled model-ready samples.

mod cache;
mod features;
mod interpolate;
mod perturb;
mod samples;
mod scaler;
mod split;
mod schema;
mod windows;

use crate::domain::TimeStamp;

pub use cache::{read_samples, write_samples, CacheHeader, CACHE_MAGIC};
pub use features::{
    between_target_features, cyclical_encoding, engineered_features, rolling_features, COLD_BELOW, HOT_ABOVE,
    ROLLING_WINDOWS,
};
pub use interpolate::interpolate_gaps;
pub use perturb::{
    horizon_scaling, perturb_future, perturb_future_with, GaussianNoise, NoiseSource, PerturbationConfig, ZeroNoise,
};
pub use samples::{
    build_samples, fit_sample_scaler, prepare_dataset, prepare_series, scale_samples, SampleConfig,
};
pub use split::{scale_splits, PreparedSplits, YearSplit};
pub use scaler::{apply_scaler, fit_scaler, invert_scaler, NeumaierSum, ScalerParams, VariableScaler, SCALER_EPS};
pub use schema::{
    schema_hash, FeatureRole, FeatureSchema, CYCLICAL, ENGINEERED, FUTURE_WIDTH, HISTORY_WIDTH, RAW, TARGET_CHANNEL,
};
pub use windows::{generate_windows, generate_windows_masked, Window};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("cube {cube_id}: {observed} observed points, at least two are needed to interpolate")]
    InsufficientData { cube_id: String, observed: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("cube {cube_id}: weather does not cover {first}..={last}")]
    Coverage {
        cube_id: String,
        first: TimeStamp,
        last: TimeStamp,
    },
    #[error("cube {cube_id}, window starting at acquisition {window}: {source}")]
    Window {
        cube_id: String,
        window: usize,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("no weather record for cube {0}")]
    MissingWeather(String),
    #[error("cannot fit scaler for {0}: no values")]
    EmptyFit(String),
    #[error("sample cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
