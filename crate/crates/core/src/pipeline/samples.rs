//! Assembly of history and future tokens for every window of a cube.

use std::collections::HashMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{cyclical_encoding, engineered_features};
use super::interpolate::interpolate_gaps;
use super::perturb::{perturb_future, PerturbationConfig};
use super::scaler::{fit_scaler, ScalerParams};
use super::schema::{CYCLICAL, ENGINEERED, FUTURE_WIDTH, HISTORY_WIDTH, RAW, TARGET_CHANNEL};
use super::windows::{generate_windows, generate_windows_masked, Window};
use super::{PipelineError, Result};
use crate::domain::{DailyWeather, ForecastSample, ObservationSeries, TimeStamp};
use crate::seed::derive_seed;

const BT: std::ops::Range<usize> = 6..9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub history_len: usize,
    pub horizon: usize,
    /// Acquisitions between consecutive window starts.
    pub shift: usize,
    /// Fill cloudy gaps by interpolation. When off, cloudy history points are
    /// masked and windows with cloudy targets are dropped.
    pub interpolate: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            history_len: 3,
            horizon: 3,
            shift: 4,
            interpolate: true,
        }
    }
}

/// Interpolates (when configured) and windows one series.
pub fn prepare_series(series: &ObservationSeries, config: &SampleConfig) -> Result<(ObservationSeries, Vec<Window>)> {
    let (p, h, shift) = (config.history_len, config.horizon, config.shift);
    if config.interpolate {
        let filled = interpolate_gaps(series)?;
        let windows = generate_windows(&filled, p, h, shift)?;
        Ok((filled, windows))
    } else {
        let windows = generate_windows_masked(series, p, h, shift)?;
        Ok((series.clone(), windows))
    }
}

fn sample_seed(base: u64, cube_id: &str, start: usize) -> u64 {
    derive_seed(base, &format!("perturb/{cube_id}/{start}"))
}

fn coverage(weather: &DailyWeather, first: i64, last: i64) -> PipelineError {
    PipelineError::Coverage {
        cube_id: weather.cube_id.clone(),
        first: TimeStamp::from_day(first),
        last: TimeStamp::from_day(last),
    }
}

fn push_common(token: &mut Vec<f64>, raw: [f64; 6], engineered: [f64; 9], day: TimeStamp) -> Result<()> {
    token.extend_from_slice(&raw);
    token.extend_from_slice(&engineered);
    token.extend_from_slice(&cyclical_encoding(day.day_of_year())?);
    Ok(())
}

fn build_one(
    series: &ObservationSeries,
    weather: &DailyWeather,
    w: Window,
    perturbation: &PerturbationConfig,
) -> Result<ForecastSample> {
    let pts = &series.points;
    let hist = &pts[w.history_range()];
    let targets = &pts[w.target_range()];
    let last_hist = hist[hist.len() - 1].timestamp;
    let last_target = targets[targets.len() - 1].timestamp;
    let l = (last_target.day() - last_hist.day()) as usize;

    // Future raw weather is perturbed before any future feature is derived.
    let first_future = last_hist.day() + 1;
    let future_rows = weather
        .span(first_future, last_target.day())
        .ok_or_else(|| coverage(weather, first_future, last_target.day()))?;
    let offsets: Vec<f64> = (1..=l).map(|k| k as f64).collect();
    let cfg = PerturbationConfig {
        rng_seed: sample_seed(perturbation.rng_seed, &series.cube_id, w.start),
        ..perturbation.clone()
    };
    let mut view = weather.clone();
    if cfg.enabled {
        let mut perturbed = perturb_future(future_rows, &offsets, &cfg);
        for r in &mut perturbed {
            r.rainfall = r.rainfall.max(0.0);
            r.humidity = r.humidity.clamp(0.0, 100.0);
        }
        let a = view.index_of(first_future).unwrap_or_default();
        view.rows[a..a + l].copy_from_slice(&perturbed);
    }
    let raw_at = |day: TimeStamp| {
        view.row_at(day.day())
            .map(|r| r.to_array())
            .ok_or_else(|| coverage(weather, day.day(), day.day()))
    };

    let p = hist.len();
    let mut history_tokens = Vec::with_capacity(p * HISTORY_WIDTH);
    let mut history_mask = Vec::with_capacity(p);
    let mut history_ndvi = Vec::with_capacity(p);
    let mut history_bt_valid = Vec::with_capacity(p);
    for (j, pt) in hist.iter().enumerate() {
        let idx = w.start + j;
        let prev = (idx > 0).then(|| pts[idx - 1].timestamp);
        let (eng, valid) = engineered_features(&view, prev, pt.timestamp)?;
        push_common(&mut history_tokens, raw_at(pt.timestamp)?, eng, pt.timestamp)?;
        history_tokens.push(pt.value.unwrap_or(0.0));
        history_mask.push(pt.value.is_some());
        history_ndvi.push(pt.value);
        history_bt_valid.push(valid);
    }

    let mut future_tokens = Vec::with_capacity(l * FUTURE_WIDTH);
    let mut prev = last_hist;
    let mut next_target = 0;
    for k in 1..=l as i64 {
        let day = last_hist.offset(k);
        let (eng, _) = engineered_features(&view, Some(prev), day)?;
        push_common(&mut future_tokens, raw_at(day)?, eng, day)?;
        if next_target < targets.len() && targets[next_target].timestamp == day {
            prev = day;
            next_target += 1;
        }
    }

    let raw_targets: Vec<f64> = targets.iter().map(|t| t.value.unwrap_or_default()).collect();
    Ok(ForecastSample {
        cube_id: series.cube_id.clone(),
        history_width: HISTORY_WIDTH,
        future_width: FUTURE_WIDTH,
        history_tokens,
        history_mask,
        future_tokens,
        future_mask: vec![true; l],
        selection_indices: targets
            .iter()
            .map(|t| (t.timestamp.day() - last_hist.day() - 1) as usize)
            .collect(),
        targets: raw_targets.clone(),
        raw_targets,
        history_ndvi,
        target_days: targets.iter().map(|t| t.timestamp).collect(),
        last_history_day: last_hist,
        delta_days: targets.iter().map(|t| (t.timestamp.day() - last_hist.day()) as f64).collect(),
        history_bt_valid,
        scaled: false,
    })
}

/// Builds one sample per window of an already prepared series. Samples are
/// in physical units unless `scaler` is given.
pub fn build_samples(
    series: &ObservationSeries,
    weather: &DailyWeather,
    windows: &[Window],
    perturbation: &PerturbationConfig,
    scaler: Option<&ScalerParams>,
) -> Result<Vec<ForecastSample>> {
    perturbation.validate()?;
    let mut out = windows
        .iter()
        .map(|&w| {
            build_one(series, weather, w, perturbation).map_err(|e| PipelineError::Window {
                cube_id: series.cube_id.clone(),
                window: w.start,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = scaler {
        scale_samples(&mut out, s)?;
    }
    Ok(out)
}

/// Prepares and builds unscaled samples for every cube, in input order.
/// Cubes with fewer than two observations contribute no samples.
pub fn prepare_dataset(
    series: &[ObservationSeries],
    weather: &[DailyWeather],
    config: &SampleConfig,
    perturbation: &PerturbationConfig,
) -> Result<Vec<ForecastSample>> {
    let by_id: HashMap<&str, &DailyWeather> = weather.iter().map(|w| (w.cube_id.as_str(), w)).collect();
    let per_cube = series
        .par_iter()
        .map(|s| {
            let w = by_id
                .get(s.cube_id.as_str())
                .ok_or_else(|| PipelineError::MissingWeather(s.cube_id.clone()))?;
            match prepare_series(s, config) {
                Ok((prepared, windows)) => build_samples(&prepared, w, &windows, perturbation, None),
                Err(PipelineError::InsufficientData { cube_id, observed }) => {
                    warn!("cube {cube_id} skipped: only {observed} observed points");
                    Ok(Vec::new())
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cube.into_iter().flatten().collect())
}

/// Fits one scaler per history channel on unscaled samples, pooling history
/// and future token values. Between-target features without a preceding
/// acquisition and masked NDVI are excluded; targets join the NDVI column.
pub fn fit_sample_scaler(samples: &[ForecastSample]) -> Result<ScalerParams> {
    let mut columns = vec![Vec::new(); HISTORY_WIDTH];
    for s in samples {
        if s.scaled {
            return Err(PipelineError::Argument("scaler must be fitted on unscaled samples".into()));
        }
        for j in 0..s.history_len() {
            let tok = s.history_token(j);
            for c in 0..FUTURE_WIDTH {
                if BT.contains(&c) && !s.history_bt_valid[j] {
                    continue;
                }
                columns[c].push(tok[c]);
            }
            if let Some(v) = s.history_ndvi[j] {
                columns[TARGET_CHANNEL].push(v);
            }
        }
        for tok in s.future_tokens.chunks(s.future_width) {
            for (c, &v) in tok.iter().enumerate() {
                columns[c].push(v);
            }
        }
        columns[TARGET_CHANNEL].extend_from_slice(&s.raw_targets);
    }
    debug_assert_eq!(RAW.len() + ENGINEERED.len() + CYCLICAL.len(), FUTURE_WIDTH);
    fit_scaler(&columns)
}

/// Scales tokens and targets in place. Masked NDVI and invalid between-target
/// features are set to zero in scaled units.
pub fn scale_samples(samples: &mut [ForecastSample], scaler: &ScalerParams) -> Result<()> {
    if scaler.len() != HISTORY_WIDTH {
        return Err(PipelineError::Argument(format!(
            "scaler has {} variables, expected {HISTORY_WIDTH}",
            scaler.len()
        )));
    }
    let vars = &scaler.variables;
    for s in samples.iter_mut() {
        if s.scaled {
            return Err(PipelineError::Argument(format!("sample of cube {} is already scaled", s.cube_id)));
        }
        let hw = s.history_width;
        for j in 0..s.history_len() {
            let tok = &mut s.history_tokens[j * hw..(j + 1) * hw];
            for (c, v) in tok.iter_mut().enumerate() {
                let keep = match c {
                    TARGET_CHANNEL => s.history_mask[j],
                    c if BT.contains(&c) => s.history_bt_valid[j],
                    _ => true,
                };
                *v = if keep { vars[c].apply(*v) } else { 0.0 };
            }
        }
        for tok in s.future_tokens.chunks_mut(s.future_width) {
            for (c, v) in tok.iter_mut().enumerate() {
                *v = vars[c].apply(*v);
            }
        }
        s.targets = s.raw_targets.iter().map(|&y| vars[TARGET_CHANNEL].apply(y)).collect();
        s.scaled = true;
    }
    Ok(())
}
