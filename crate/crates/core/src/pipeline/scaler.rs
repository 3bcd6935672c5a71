//! Global arcsinh robust scaling.

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};

/// Stabilizer added to the variance before the square root.
pub const SCALER_EPS: f64 = 1e-8;

/// Kahan-Babuska-Neumaier compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableScaler {
    pub mu: f64,
    pub sigma2: f64,
    pub eps: f64,
}

impl VariableScaler {
    pub fn scale(&self) -> f64 {
        (self.sigma2 + self.eps).sqrt()
    }

    pub fn apply(&self, x: f64) -> f64 {
        ((x - self.mu) / self.scale()).asinh()
    }

    pub fn invert(&self, y: f64) -> f64 {
        self.mu + y.sinh() * self.scale()
    }

    /// Derivative of `invert` at `y`.
    pub fn invert_slope(&self, y: f64) -> f64 {
        y.cosh() * self.scale()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub variables: Vec<VariableScaler>,
}

impl ScalerParams {
    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.variables.iter().enumerate() {
            if !(v.sigma2 >= 0.0 && v.eps > 0.0 && v.mu.is_finite() && v.sigma2.is_finite()) {
                return Err(PipelineError::Argument(format!("scaler {i} is invalid: {v:?}")));
            }
        }
        Ok(())
    }
}

/// Population mean and variance per variable, two passes with compensated
/// sums.
pub fn fit_scaler(columns: &[Vec<f64>]) -> Result<ScalerParams> {
    let variables = columns
        .iter()
        .enumerate()
        .map(|(i, col)| {
            if col.is_empty() {
                return Err(PipelineError::EmptyFit(format!("variable {i}")));
            }
            let n = col.len() as f64;
            let mu = col.iter().copied().collect::<NeumaierSum>().value() / n;
            let sigma2 = col.iter().map(|x| (x - mu) * (x - mu)).collect::<NeumaierSum>().value() / n;
            Ok(VariableScaler {
                mu,
                sigma2,
                eps: SCALER_EPS,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalerParams { variables })
}

pub fn apply_scaler(x: f64, params: &VariableScaler) -> f64 {
    params.apply(x)
}

pub fn invert_scaler(y: f64, params: &VariableScaler) -> f64 {
    params.invert(y)
}
