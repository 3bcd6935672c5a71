use super::{PipelineError, Result};
use crate::domain::ObservationSeries;

/// Time-aware linear interpolation of cloudy points between their nearest
/// observed neighbours. Leading and trailing cloudy points stay absent.
pub fn interpolate_gaps(series: &ObservationSeries) -> Result<ObservationSeries> {
    let observed: Vec<usize> = series
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.observed && p.value.is_some())
        .map(|(i, _)| i)
        .collect();
    if observed.len() < 2 {
        return Err(PipelineError::InsufficientData {
            cube_id: series.cube_id.clone(),
            observed: observed.len(),
        });
    }
    let mut out = series.clone();
    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let t0 = series.points[a].timestamp.day() as f64;
        let t1 = series.points[b].timestamp.day() as f64;
        let y0 = series.points[a].value.unwrap_or_default();
        let y1 = series.points[b].value.unwrap_or_default();
        for p in &mut out.points[a + 1..b] {
            let t = p.timestamp.day() as f64;
            p.value = Some(y0 + (t - t0) / (t1 - t0) * (y1 - y0));
        }
    }
    Ok(out)
}
