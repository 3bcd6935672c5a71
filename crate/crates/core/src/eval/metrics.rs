use serde::{Deserialize, Serialize};

use crate::domain::QUANTILE_LEVELS;
use crate::pipeline::NeumaierSum;
use crate::train::pinball;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// `None` when every truth value is zero.
    pub wmape: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let s: NeumaierSum = values.inspect(|_| n += 1).collect();
    s.value() / n as f64
}

pub fn point_metrics(y: &[f64], y_hat: &[f64]) -> PointMetrics {
    assert_eq!(y.len(), y_hat.len());
    assert!(!y.is_empty(), "point metrics need at least one pair");
    let err = || y.iter().zip(y_hat).map(|(a, b)| a - b);
    let abs_sum: NeumaierSum = err().map(f64::abs).collect();
    let truth_sum: NeumaierSum = y.iter().map(|v| v.abs()).collect();
    PointMetrics {
        rmse: mean(err().map(|e| e * e)).sqrt(),
        mae: abs_sum.value() / y.len() as f64,
        wmape: (truth_sum.value() > 0.0).then(|| abs_sum.value() / truth_sum.value()),
    }
}

/// Mean one-step absolute change over the history values; `None` when fewer
/// than two values are present or the series is flat.
pub fn naive_scale(history: &[f64]) -> Option<f64> {
    if history.len() < 2 {
        return None;
    }
    let s = mean(history.windows(2).map(|w| (w[1] - w[0]).abs()));
    (s > 0.0).then_some(s)
}

/// Forecast MAE of one sample relative to its in-sample naive MAE.
pub fn sample_mase(y: &[f64], y_hat: &[f64], history: &[f64]) -> Option<f64> {
    let scale = naive_scale(history)?;
    Some(mean(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs())) / scale)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaseSummary {
    /// Mean of per-sample ratios; `None` when no sample had a usable scale.
    pub value: Option<f64>,
    pub used: usize,
    pub excluded: usize,
}

/// Averages per-sample MASE, excluding samples without a usable scale.
pub fn mase<'a>(rows: impl IntoIterator<Item = (&'a [f64], &'a [f64], &'a [f64])>) -> MaseSummary {
    let mut sum = NeumaierSum::default();
    let (mut used, mut excluded) = (0, 0);
    for (y, y_hat, history) in rows {
        match sample_mase(y, y_hat, history) {
            Some(v) => {
                sum.add(v);
                used += 1;
            }
            None => excluded += 1,
        }
    }
    MaseSummary {
        value: (used > 0).then(|| sum.value() / used as f64),
        used,
        excluded,
    }
}

/// Twice the mean pinball loss over the three quantile levels.
pub fn crps_from_quantiles(y: f64, q: &[f64; 3]) -> f64 {
    2.0 * mean_pinball_row(y, q)
}

pub fn mean_pinball_row(y: f64, q: &[f64; 3]) -> f64 {
    (0..3).map(|k| pinball(y, q[k], QUANTILE_LEVELS[k])).sum::<f64>() / 3.0
}

/// Unweighted mean pinball loss over all `(truth, quantile row)` pairs.
pub fn mean_pinball(y: &[f64], q: &[[f64; 3]]) -> f64 {
    assert_eq!(y.len(), q.len());
    let s: NeumaierSum = y
        .iter()
        .zip(q)
        .flat_map(|(&t, row)| (0..3).map(move |k| pinball(t, row[k], QUANTILE_LEVELS[k])))
        .collect();
    s.value() / (3 * y.len()) as f64
}

/// Fraction of truths inside `[q10, q90]`, bounds included.
pub fn interval_coverage(y: &[f64], q: &[[f64; 3]]) -> f64 {
    assert_eq!(y.len(), q.len());
    let hits = y.iter().zip(q).filter(|(t, r)| r[0] <= **t && **t <= r[2]).count();
    hits as f64 / y.len() as f64
}

/// `1 - SSE/SST` around the truth mean; `None` for constant truths.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Option<f64> {
    let m = mean(y.iter().copied());
    let sst: NeumaierSum = y.iter().map(|v| (v - m).powi(2)).collect();
    let sse: NeumaierSum = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).collect();
    (sst.value() > 0.0).then(|| 1.0 - sse.value() / sst.value())
}

/// Mean of prediction minus truth.
pub fn mean_bias(y: &[f64], y_hat: &[f64]) -> f64 {
    mean(y.iter().zip(y_hat).map(|(a, b)| b - a))
}
