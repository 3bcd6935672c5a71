//! Probabilistic forecasting of sparse, irregularly sampled vegetation-index
//! series with daily weather covariates.

pub mod binio;
pub mod domain;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod train;

pub use sqf_autodiff as autodiff;
pub use sqf_autodiff::Scalar;

pub use domain::{ForecastSample, ObservationSeries, QuantilePrediction, TimeStamp};
pub use eval::MetricReport;
pub use model::{Checkpoint, ModelConfig, Network};
pub use pipeline::{PerturbationConfig, SampleConfig, ScalerParams};
pub use train::TrainConfig;

pub type Network64 = model::Network<f64>;
pub type Network32 = model::Network<f32>;
pub type Checkpoint64 = model::Checkpoint<f64>;
pub type Checkpoint32 = model::Checkpoint<f32>;
