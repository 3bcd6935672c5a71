use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{IngestError, Result};
use crate::domain::{ObsPoint, ObservationSeries, TimeStamp};

/// One pixel of one acquisition. Reflectances are unitless and non-negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelRecord {
    pub cube_id: String,
    pub day: TimeStamp,
    pub row: u32,
    pub col: u32,
    pub b02: f64,
    pub b03: f64,
    pub b04: f64,
    pub b8a: f64,
    pub cloud: bool,
}

/// Declared cube geometry. When `acquisitions` is given, every listed day
/// must carry at least one pixel record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelLayout {
    pub rows: u32,
    pub cols: u32,
    pub acquisitions: Option<Vec<TimeStamp>>,
}

impl PixelLayout {
    pub fn grid(rows: u32, cols: u32) -> Self {
        Self {
            rows,
            cols,
            acquisitions: None,
        }
    }
}

/// Normalized difference of near infrared and red reflectance.
pub fn ndvi_from_bands(b8a: f64, b04: f64) -> Result<f64> {
    let denominator = b8a + b04;
    if denominator.is_nan() || denominator <= 0.0 {
        return Err(IngestError::UndefinedPixel { denominator });
    }
    Ok((b8a - b04) / denominator)
}

/// Averages clear-sky pixel NDVI per acquisition day for a single cube.
/// Days whose pixels are all cloudy (or undefined) become unobserved points.
pub fn series_from_pixels(pixels: &[PixelRecord], layout: &PixelLayout) -> Result<ObservationSeries> {
    let Some(first) = pixels.first() else {
        return Err(IngestError::Config("no pixel records".into()));
    };
    let cube_id = first.cube_id.clone();
    // Keyed by (row, col) so the sum order never depends on input order.
    let mut days: BTreeMap<TimeStamp, BTreeMap<(u32, u32), Option<f64>>> = BTreeMap::new();
    for px in pixels {
        if px.cube_id != cube_id {
            return Err(IngestError::MixedCubes(cube_id, px.cube_id.clone()));
        }
        if px.row >= layout.rows || px.col >= layout.cols {
            return Err(IngestError::PixelOutsideGrid {
                cube_id,
                row: px.row,
                col: px.col,
                rows: layout.rows,
                cols: layout.cols,
            });
        }
        let value = if px.cloud {
            None
        } else {
            match ndvi_from_bands(px.b8a, px.b04) {
                Ok(v) => Some(v),
                Err(e) => {
                    warn!("cube {cube_id} {} pixel ({}, {}) skipped: {e}", px.day, px.row, px.col);
                    None
                }
            }
        };
        days.entry(px.day).or_default().insert((px.row, px.col), value);
    }
    if let Some(acq) = &layout.acquisitions {
        if let Some(day) = acq.iter().find(|d| !days.contains_key(d)) {
            return Err(IngestError::EmptyAcquisition {
                cube_id,
                day: day.date(),
            });
        }
    }
    let points = days
        .into_iter()
        .map(|(day, px)| {
            let clear: Vec<f64> = px.values().flatten().copied().collect();
            if clear.is_empty() {
                return ObsPoint::cloudy(day);
            }
            let mean = clear.iter().sum::<f64>() / clear.len() as f64;
            let v = if (-1.0..=1.0).contains(&mean) {
                mean
            } else {
                warn!("cube {cube_id} {day}: NDVI {mean} clamped to [-1, 1]");
                mean.clamp(-1.0, 1.0)
            };
            ObsPoint::observed(day, v)
        })
        .collect();
    Ok(ObservationSeries::new(cube_id, points))
}

/// Groups a mixed pixel table by cube (in order of first appearance) and
/// builds one series per cube. The grid is taken as the bounding box of each
/// cube's pixels.
pub fn series_from_pixel_table(pixels: &[PixelRecord]) -> Result<Vec<ObservationSeries>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<PixelRecord>> = BTreeMap::new();
    for px in pixels {
        if !groups.contains_key(&px.cube_id) {
            order.push(px.cube_id.clone());
        }
        groups.entry(px.cube_id.clone()).or_default().push(px.clone());
    }
    order
        .iter()
        .map(|id| {
            let g = &groups[id];
            let rows = g.iter().map(|p| p.row).max().unwrap_or(0) + 1;
            let cols = g.iter().map(|p| p.col).max().unwrap_or(0) + 1;
            series_from_pixels(g, &PixelLayout::grid(rows, cols))
        })
        .collect()
}
