use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::domain::ObservationSeries;

/// A run of `history + horizon` consecutive acquisitions starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub history: usize,
    pub horizon: usize,
}

impl Window {
    pub fn history_range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.history
    }

    pub fn target_range(&self) -> std::ops::Range<usize> {
        self.start + self.history..self.end()
    }

    pub fn end(&self) -> usize {
        self.start + self.history + self.horizon
    }
}

fn candidates(len: usize, p: usize, h: usize, shift: usize) -> Result<impl Iterator<Item = Window>> {
    if p == 0 || h == 0 || shift == 0 {
        return Err(PipelineError::Argument(format!(
            "history ({p}), horizon ({h}) and shift ({shift}) must be positive"
        )));
    }
    let n = if len < p + h { 0 } else { (len - p - h) / shift + 1 };
    Ok((0..n).map(move |i| Window {
        start: i * shift,
        history: p,
        horizon: h,
    }))
}

/// Sliding windows over acquisition indices; windows touching any point
/// without a value are dropped.
pub fn generate_windows(series: &ObservationSeries, p: usize, h: usize, shift: usize) -> Result<Vec<Window>> {
    Ok(candidates(series.len(), p, h, shift)?
        .filter(|w| series.points[w.start..w.end()].iter().all(|pt| pt.value.is_some()))
        .collect())
}

/// Like [`generate_windows`] but keeps windows whose history has gaps, as long
/// as one history value exists; every target must still have a value.
pub fn generate_windows_masked(series: &ObservationSeries, p: usize, h: usize, shift: usize) -> Result<Vec<Window>> {
    Ok(candidates(series.len(), p, h, shift)?
        .filter(|w| {
            let pts = &series.points;
            pts[w.target_range()].iter().all(|pt| pt.value.is_some())
                && pts[w.history_range()].iter().any(|pt| pt.value.is_some())
        })
        .collect())
}
