//! Domain types shared by every stage: timestamps, observation series, daily
//! weather, forecast samples and quantile predictions.

use std::fmt;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Day indices count days since 1970-01-01.
pub const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => unreachable!(),
};

/// Gregorian day of the year (1-based; Feb 29 is day 60 in leap years) for an
/// epoch day index.
pub fn day_of_year(day: i64) -> u32 {
    date_of(day).ordinal()
}

fn date_of(day: i64) -> NaiveDate {
    if day >= 0 {
        EPOCH + Days::new(day as u64)
    } else {
        EPOCH - Days::new(day.unsigned_abs())
    }
}

/// A calendar day, stored as its epoch index together with its day of year.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTimeStamp")]
pub struct TimeStamp {
    day: i64,
    day_of_year: u32,
}

#[derive(Deserialize)]
struct RawTimeStamp {
    day: i64,
    day_of_year: u32,
}

impl TryFrom<RawTimeStamp> for TimeStamp {
    type Error = String;

    fn try_from(raw: RawTimeStamp) -> Result<Self, Self::Error> {
        let ts = TimeStamp::from_day(raw.day);
        if ts.day_of_year != raw.day_of_year {
            return Err(format!(
                "day {} has day-of-year {}, not {}",
                raw.day, ts.day_of_year, raw.day_of_year
            ));
        }
        Ok(ts)
    }
}

impl TimeStamp {
    pub fn from_day(day: i64) -> Self {
        Self {
            day,
            day_of_year: day_of_year(day),
        }
    }

    pub fn from_date(date: NaiveDate) -> Self {
        Self::from_day((date - EPOCH).num_days())
    }

    /// Parses an ISO-8601 calendar date (`YYYY-MM-DD`).
    pub fn parse(s: &str) -> Result<Self, chrono::ParseError> {
        Ok(Self::from_date(NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")?))
    }

    pub fn day(self) -> i64 {
        self.day
    }

    pub fn day_of_year(self) -> u32 {
        self.day_of_year
    }

    pub fn date(self) -> NaiveDate {
        date_of(self.day)
    }

    pub fn year(self) -> i32 {
        self.date().year()
    }

    pub fn offset(self, days: i64) -> Self {
        Self::from_day(self.day + days)
    }
}

impl fmt::Display for TimeStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.date().format("%Y-%m-%d"))
    }
}

/// One acquisition of the target series. `value` is absent for cloudy
/// acquisitions until interpolation fills it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsPoint {
    pub timestamp: TimeStamp,
    pub value: Option<f64>,
    pub observed: bool,
}

impl ObsPoint {
    pub fn observed(timestamp: TimeStamp, value: f64) -> Self {
        Self {
            timestamp,
            value: Some(value),
            observed: true,
        }
    }

    pub fn cloudy(timestamp: TimeStamp) -> Self {
        Self {
            timestamp,
            value: None,
            observed: false,
        }
    }
}

/// Irregular per-cube NDVI series over acquisition days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub cube_id: String,
    pub points: Vec<ObsPoint>,
}

impl ObservationSeries {
    pub fn new(cube_id: impl Into<String>, points: Vec<ObsPoint>) -> Self {
        Self {
            cube_id: cube_id.into(),
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn observed_count(&self) -> usize {
        self.points.iter().filter(|p| p.observed).count()
    }

    pub fn first_day(&self) -> Option<TimeStamp> {
        self.points.first().map(|p| p.timestamp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesRule {
    NonIncreasingDay,
    ObservedWithoutValue,
    UnobservedWithValue,
    ValueOutOfRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub rule: SeriesRule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "point {}: {}", self.index, self.message)
    }
}

/// Checks the raw (pre-interpolation) series invariants. An empty result means
/// the series is valid.
pub fn validate_series(series: &ObservationSeries) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, p) in series.points.iter().enumerate() {
        if i > 0 && p.timestamp.day() <= series.points[i - 1].timestamp.day() {
            out.push(Violation {
                index: i,
                rule: SeriesRule::NonIncreasingDay,
                message: format!(
                    "day {} does not follow day {}",
                    p.timestamp,
                    series.points[i - 1].timestamp
                ),
            });
        }
        match (p.observed, p.value) {
            (true, None) => out.push(Violation {
                index: i,
                rule: SeriesRule::ObservedWithoutValue,
                message: "observed point has no value".into(),
            }),
            (false, Some(_)) => out.push(Violation {
                index: i,
                rule: SeriesRule::UnobservedWithValue,
                message: "cloudy point carries a value".into(),
            }),
            (true, Some(v)) if !(-1.0..=1.0).contains(&v) => out.push(Violation {
                index: i,
                rule: SeriesRule::ValueOutOfRange,
                message: format!("NDVI {v} outside [-1, 1]"),
            }),
            _ => {}
        }
    }
    out
}

pub const WEATHER_VARIABLES: [&str; 6] = [
    "wind",
    "humidity",
    "radiation",
    "rainfall",
    "pressure",
    "temperature",
];

/// One day of weather: wind (m/s), relative humidity (%), shortwave radiation
/// (W/m²), rainfall (mm), sea-level pressure (hPa), temperature (°C).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeatherRow {
    pub wind: f64,
    pub humidity: f64,
    pub radiation: f64,
    pub rainfall: f64,
    pub pressure: f64,
    pub temperature: f64,
}

impl WeatherRow {
    pub fn to_array(self) -> [f64; 6] {
        [
            self.wind,
            self.humidity,
            self.radiation,
            self.rainfall,
            self.pressure,
            self.temperature,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            wind: a[0],
            humidity: a[1],
            radiation: a[2],
            rainfall: a[3],
            pressure: a[4],
            temperature: a[5],
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(name) = WEATHER_VARIABLES
            .iter()
            .zip(self.to_array())
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
        {
            out.push(format!("{name} is not finite"));
        }
        if !(0.0..=100.0).contains(&self.humidity) {
            out.push(format!("humidity {} outside [0, 100]", self.humidity));
        }
        if self.rainfall < 0.0 {
            out.push(format!("negative rainfall {}", self.rainfall));
        }
        out
    }
}

/// Dense daily weather for one cube, starting at `start_day` with no gaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyWeather {
    pub cube_id: String,
    pub start_day: TimeStamp,
    pub rows: Vec<WeatherRow>,
}

impl DailyWeather {
    pub fn new(cube_id: impl Into<String>, start_day: TimeStamp, rows: Vec<WeatherRow>) -> Self {
        Self {
            cube_id: cube_id.into(),
            start_day,
            rows,
        }
    }

    /// Last covered day, inclusive.
    pub fn end_day(&self) -> TimeStamp {
        self.start_day.offset(self.rows.len() as i64 - 1)
    }

    pub fn index_of(&self, day: i64) -> Option<usize> {
        let off = day - self.start_day.day();
        (off >= 0 && (off as usize) < self.rows.len()).then_some(off as usize)
    }

    pub fn row_at(&self, day: i64) -> Option<&WeatherRow> {
        self.index_of(day).map(|i| &self.rows[i])
    }

    /// True when every day in `first..=last` has a row.
    pub fn covers(&self, first: i64, last: i64) -> bool {
        first > last || (self.index_of(first).is_some() && self.index_of(last).is_some())
    }

    /// Rows for the inclusive day range, or `None` when not fully covered.
    pub fn span(&self, first: i64, last: i64) -> Option<&[WeatherRow]> {
        if first > last {
            return Some(&[]);
        }
        let a = self.index_of(first)?;
        let b = self.index_of(last)?;
        Some(&self.rows[a..=b])
    }
}

/// One model-ready instance. Token matrices are row-major; history tokens are
/// at acquisition resolution, future tokens at daily resolution spanning
/// `(last_history_day, last target day]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastSample {
    pub cube_id: String,
    pub history_width: usize,
    pub future_width: usize,
    pub history_tokens: Vec<f64>,
    pub history_mask: Vec<bool>,
    pub future_tokens: Vec<f64>,
    pub future_mask: Vec<bool>,
    pub selection_indices: Vec<usize>,
    /// Targets in the units of the tokens (scaled once the sample is scaled).
    pub targets: Vec<f64>,
    /// Targets in NDVI units.
    pub raw_targets: Vec<f64>,
    /// History NDVI in NDVI units; absent where the history point is masked.
    pub history_ndvi: Vec<Option<f64>>,
    pub target_days: Vec<TimeStamp>,
    pub last_history_day: TimeStamp,
    pub delta_days: Vec<f64>,
    /// False for history tokens whose between-target features had no
    /// preceding acquisition (those features are zero).
    pub history_bt_valid: Vec<bool>,
    pub scaled: bool,
}

impl ForecastSample {
    pub fn history_len(&self) -> usize {
        self.history_mask.len()
    }

    pub fn future_len(&self) -> usize {
        self.future_mask.len()
    }

    pub fn horizon(&self) -> usize {
        self.targets.len()
    }

    pub fn history_token(&self, i: usize) -> &[f64] {
        &self.history_tokens[i * self.history_width..(i + 1) * self.history_width]
    }

    pub fn future_token(&self, i: usize) -> &[f64] {
        &self.future_tokens[i * self.future_width..(i + 1) * self.future_width]
    }

    /// Most recent unmasked history NDVI, in NDVI units.
    pub fn last_observed_ndvi(&self) -> Option<f64> {
        self.history_ndvi.iter().rev().find_map(|v| *v)
    }
}

/// Lists violated sample invariants; empty when the sample is well formed.
pub fn validate_sample(s: &ForecastSample) -> Vec<String> {
    let mut out = Vec::new();
    let p = s.history_mask.len();
    let l = s.future_mask.len();
    let h = s.targets.len();
    if s.history_tokens.len() != p * s.history_width {
        out.push("history token matrix does not match p x F_h".into());
    }
    if s.future_tokens.len() != l * s.future_width {
        out.push("future token matrix does not match L x F_f".into());
    }
    if s.history_width != s.future_width + 1 {
        out.push("history width must exceed future width by one".into());
    }
    for (name, len) in [
        ("selection_indices", s.selection_indices.len()),
        ("raw_targets", s.raw_targets.len()),
        ("target_days", s.target_days.len()),
        ("delta_days", s.delta_days.len()),
    ] {
        if len != h {
            out.push(format!("{name} has length {len}, expected {h}"));
        }
    }
    if s.history_ndvi.len() != p || s.history_bt_valid.len() != p {
        out.push("history side vectors must have length p".into());
    }
    if !s.history_mask.iter().any(|&m| m) {
        out.push("every history position is masked".into());
    }
    for w in s.selection_indices.windows(2) {
        if w[1] <= w[0] {
            out.push("selection indices not strictly increasing".into());
        }
    }
    for (k, &idx) in s.selection_indices.iter().enumerate() {
        if idx >= l {
            out.push(format!("selection index {idx} outside future length {l}"));
            continue;
        }
        if !s.future_mask[idx] {
            out.push(format!("selection index {idx} points at a masked day"));
        }
        if let Some(day) = s.target_days.get(k) {
            let expected = day.day() - s.last_history_day.day() - 1;
            if expected != idx as i64 {
                out.push(format!("selection index {idx} does not match target day {day}"));
            }
        }
    }
    for (k, (&d, day)) in s.delta_days.iter().zip(&s.target_days).enumerate() {
        if d != (day.day() - s.last_history_day.day()) as f64 {
            out.push(format!("delta_days[{k}] inconsistent with target day"));
        }
        if d <= 0.0 {
            out.push(format!("delta_days[{k}] = {d} is not positive"));
        }
        if k > 0 && d <= s.delta_days[k - 1] {
            out.push(format!("delta_days[{k}] not increasing"));
        }
    }
    if s.history_tokens.iter().chain(&s.future_tokens).any(|v| !v.is_finite()) {
        out.push("non-finite token value".into());
    }
    out
}

/// Quantile levels predicted for every horizon step.
pub const QUANTILE_LEVELS: [f64; 3] = [0.1, 0.5, 0.9];

/// Per-sample `h x 3` matrix of predicted quantiles at [`QUANTILE_LEVELS`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantilePrediction<T = f64> {
    pub values: Vec<[T; 3]>,
}

impl<T: Scalar> QuantilePrediction<T> {
    pub fn new(values: Vec<[T; 3]>) -> Self {
        Self { values }
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn median(&self) -> Vec<T> {
        self.values.iter().map(|r| r[1]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn is_non_crossing(&self) -> bool {
        self.values.iter().all(|r| r[0] <= r[1] && r[1] <= r[2])
    }

    /// Sorts each row so quantiles are non-decreasing across levels.
    pub fn sort_rows(&mut self) {
        for r in &mut self.values {
            r.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        }
    }

    pub fn map<U: Scalar>(&self, mut f: impl FnMut(T) -> U) -> QuantilePrediction<U> {
        QuantilePrediction {
            values: self.values.iter().map(|r| [f(r[0]), f(r[1]), f(r[2])]).collect(),
        }
    }
}
