use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{EvalError, Result};
use crate::pipeline::NeumaierSum;

/// Truncation lag for a three-step horizon.
pub const DEFAULT_DM_LAG: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DieboldMariano {
    pub mean_difference: f64,
    /// Long-run variance of the loss differential.
    pub variance: f64,
    /// `None` when the variance estimate is not positive.
    pub statistic: Option<f64>,
    /// Two-sided, from the standard normal limit.
    pub p_value: Option<f64>,
    pub degenerate: bool,
}

/// Bartlett-weighted autocovariance sum of `d` around its mean.
pub fn newey_west_variance(d: &[f64], lag: usize) -> f64 {
    let n = d.len();
    let m = d.iter().copied().collect::<NeumaierSum>().value() / n as f64;
    let c: Vec<f64> = d.iter().map(|v| v - m).collect();
    let gamma = |k: usize| (k..n).map(|t| c[t] * c[t - k]).collect::<NeumaierSum>().value() / n as f64;
    let mut v = gamma(0);
    for k in 1..=lag {
        v += 2.0 * (1.0 - k as f64 / (lag + 1) as f64) * gamma(k);
    }
    v
}

/// Tests equal predictive accuracy of two loss sequences; positive
/// statistics mean `loss_a` is larger on average.
pub fn diebold_mariano(loss_a: &[f64], loss_b: &[f64], lag: usize) -> Result<DieboldMariano> {
    if loss_a.len() != loss_b.len() {
        return Err(EvalError::Argument(format!(
            "loss sequences differ in length ({} vs {})",
            loss_a.len(),
            loss_b.len()
        )));
    }
    let n = loss_a.len();
    if n < lag + 2 {
        return Err(EvalError::Argument(format!("{n} losses are too few for lag {lag}")));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(DieboldMariano {
            mean_difference: 0.0,
            variance: 0.0,
            statistic: Some(0.0),
            p_value: Some(1.0),
            degenerate: false,
        });
    }
    let mean_difference = d.iter().copied().collect::<NeumaierSum>().value() / n as f64;
    let variance = newey_west_variance(&d, lag);
    // rounding in the mean leaves a residue around 1e-32 for constant input
    let scale = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if variance.partial_cmp(&(1e-24 * scale)) != Some(std::cmp::Ordering::Greater) {
        return Ok(DieboldMariano {
            mean_difference,
            variance,
            statistic: None,
            p_value: None,
            degenerate: true,
        });
    }
    let statistic = mean_difference / (variance / n as f64).sqrt();
    Ok(DieboldMariano {
        mean_difference,
        variance,
        statistic: Some(statistic),
        p_value: Some(erfc(statistic.abs() / std::f64::consts::SQRT_2)),
        degenerate: false,
    })
}
