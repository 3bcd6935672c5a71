//! Point and probabilistic metrics, the Diebold-Mariano test and evaluation
//! reports.

mod dm;
mod metrics;
mod report;

pub use dm::{diebold_mariano, newey_west_variance, DieboldMariano, DEFAULT_DM_LAG};
pub use metrics::{
    crps_from_quantiles, interval_coverage, mase, mean_bias, mean_pinball, mean_pinball_row, naive_scale,
    point_metrics, r_squared, sample_mase, MaseSummary, PointMetrics,
};
pub use report::{
    evaluate, evaluate_predictions, predict_ndvi, read_scatter_csv, write_scatter_csv, BaselineMetrics, Evaluation,
    GroupMetrics, MetricReport, ScatterRow, StepMetrics, CRPS_NOTE,
};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("schema mismatch: checkpoint has {checkpoint:016x}, samples have {samples:016x}")]
    SchemaMismatch { checkpoint: u64, samples: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
