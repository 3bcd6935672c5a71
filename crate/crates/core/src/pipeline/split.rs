use serde::{Deserialize, Serialize};

use super::{fit_sample_scaler, scale_samples, PipelineError, Result, ScalerParams};
use crate::domain::ForecastSample;

/// Train and validation splits by the calendar year of each sample's last
/// history day.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YearSplit {
    pub train_years: Vec<i32>,
    pub val_years: Vec<i32>,
}

impl Default for YearSplit {
    fn default() -> Self {
        Self {
            train_years: vec![2017, 2018, 2019],
            val_years: vec![2020],
        }
    }
}

impl YearSplit {
    pub fn validate(&self) -> Result<()> {
        if self.train_years.is_empty() || self.val_years.is_empty() {
            return Err(PipelineError::Argument("both splits need at least one year".into()));
        }
        if let Some(y) = self.train_years.iter().find(|y| self.val_years.contains(y)) {
            return Err(PipelineError::Argument(format!("year {y} is in both splits")));
        }
        Ok(())
    }

    /// Samples from years in neither list are dropped.
    pub fn split(&self, samples: Vec<ForecastSample>) -> Result<(Vec<ForecastSample>, Vec<ForecastSample>)> {
        self.validate()?;
        let mut train = Vec::new();
        let mut val = Vec::new();
        for s in samples {
            let year = s.last_history_day.year();
            if self.train_years.contains(&year) {
                train.push(s);
            } else if self.val_years.contains(&year) {
                val.push(s);
            }
        }
        Ok((train, val))
    }
}

/// Scaled splits with the scaler fitted on the training part.
#[derive(Clone, Debug)]
pub struct PreparedSplits {
    pub train: Vec<ForecastSample>,
    pub val: Vec<ForecastSample>,
    pub scaler: ScalerParams,
}

pub fn scale_splits(samples: Vec<ForecastSample>, split: &YearSplit) -> Result<PreparedSplits> {
    let (mut train, mut val) = split.split(samples)?;
    if train.is_empty() {
        return Err(PipelineError::EmptyFit("training split has no samples".into()));
    }
    let scaler = fit_sample_scaler(&train)?;
    scale_samples(&mut train, &scaler)?;
    scale_samples(&mut val, &scaler)?;
    Ok(PreparedSplits { train, val, scaler })
}
