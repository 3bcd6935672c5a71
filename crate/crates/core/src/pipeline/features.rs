//! Day-of-year encoding and cumulative weather features.

use std::f64::consts::PI;

use super::{PipelineError, Result};
use crate::domain::{DailyWeather, TimeStamp, WeatherRow};

/// A day is cold when its temperature is strictly below this (°C).
pub const COLD_BELOW: f64 = 10.0;
/// A day is hot when its temperature is strictly above this (°C).
pub const HOT_ABOVE: f64 = 30.0;
pub const ROLLING_WINDOWS: [i64; 2] = [7, 14];

/// Fourier features of the day of year over a 366-day cycle, harmonics 1 to 3,
/// ordered `(sin1, cos1, sin2, cos2, sin3, cos3)`.
pub fn cyclical_encoding(day_of_year: u32) -> Result<[f64; 6]> {
    if !(1..=366).contains(&day_of_year) {
        return Err(PipelineError::Argument(format!("day of year {day_of_year} outside [1, 366]")));
    }
    let base = 2.0 * PI * f64::from(day_of_year - 1) / 366.0;
    let mut out = [0.0; 6];
    for s in 0..3 {
        let angle = base * (s + 1) as f64;
        out[2 * s] = angle.sin();
        out[2 * s + 1] = angle.cos();
    }
    Ok(out)
}

/// Rainfall total, cold-day count and hot-day count over `rows`.
fn accumulate(rows: &[WeatherRow]) -> [f64; 3] {
    let rain = rows.iter().map(|r| r.rainfall).sum();
    let cold = rows.iter().filter(|r| r.temperature < COLD_BELOW).count() as f64;
    let hot = rows.iter().filter(|r| r.temperature > HOT_ABOVE).count() as f64;
    [rain, cold, hot]
}

fn span(weather: &DailyWeather, first: i64, last: i64) -> Result<&[WeatherRow]> {
    weather.span(first, last).ok_or_else(|| PipelineError::Coverage {
        cube_id: weather.cube_id.clone(),
        first: TimeStamp::from_day(first),
        last: TimeStamp::from_day(last),
    })
}

/// `(rain, cold, hot)` over the half-open interval `(prev_day, cur_day]`.
pub fn between_target_features(weather: &DailyWeather, prev_day: TimeStamp, cur_day: TimeStamp) -> Result<[f64; 3]> {
    if prev_day >= cur_day {
        return Err(PipelineError::Argument(format!("interval ({prev_day}, {cur_day}] is empty")));
    }
    Ok(accumulate(span(weather, prev_day.day() + 1, cur_day.day())?))
}

/// `(rain, cold, hot)` over the `w` days ending at and including `at_day`.
pub fn rolling_features(weather: &DailyWeather, at_day: TimeStamp, w: i64) -> Result<[f64; 3]> {
    if w < 1 {
        return Err(PipelineError::Argument(format!("rolling window {w} must be positive")));
    }
    Ok(accumulate(span(weather, at_day.day() - w + 1, at_day.day())?))
}

/// The nine engineered channels at `at_day`: between-target features since
/// `prev_day` followed by the 7- and 14-day rolling features. Without a
/// previous acquisition the between-target block is zero and the returned
/// flag is false.
pub fn engineered_features(weather: &DailyWeather, prev_day: Option<TimeStamp>, at_day: TimeStamp) -> Result<([f64; 9], bool)> {
    let mut out = [0.0; 9];
    let valid = match prev_day {
        Some(prev) => {
            out[..3].copy_from_slice(&between_target_features(weather, prev, at_day)?);
            true
        }
        None => false,
    };
    for (k, &w) in ROLLING_WINDOWS.iter().enumerate() {
        out[3 + 3 * k..6 + 3 * k].copy_from_slice(&rolling_features(weather, at_day, w)?);
    }
    Ok((out, valid))
}
