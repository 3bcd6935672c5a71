//! Seeded synthetic cubes: AR(1) weather around seasonal means and a latent
//! NDVI that follows the season plus smoothed weather anomalies.

use std::f64::consts::PI;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{IngestError, Result};
use crate::domain::{DailyWeather, ObsPoint, ObservationSeries, TimeStamp, WeatherRow};
use crate::seed::derive_seed;

/// Days between consecutive acquisitions.
pub const REVISIT_DAYS: i64 = 5;
/// Weather days generated before the first acquisition, enough for the
/// longest rolling window.
pub const WEATHER_LEAD_DAYS: i64 = 20;
/// Time constant (days) of the exponential smoothing of the weather driver.
pub const DRIVER_TIMESCALE: f64 = 10.0;
pub const NDVI_NOISE_SD: f64 = 0.01;
pub const FIRST_YEAR: i32 = 2017;
pub const YEARS: usize = 4;
pub const GROUPS: [&str; 3] = ["arid", "temperate", "cold"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_cubes: usize,
    pub n_days: usize,
    pub seasonal_amplitude: f64,
    pub weather_coupling: f64,
    pub cloud_probability: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_cubes: 240,
            n_days: 150,
            seasonal_amplitude: 0.25,
            weather_coupling: 0.08,
            cloud_probability: 0.3,
            rng_seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.cloud_probability) {
            return Err(IngestError::Config(format!(
                "cloud_probability {} must lie in [0, 1)",
                self.cloud_probability
            )));
        }
        if self.n_cubes == 0 || self.n_days == 0 {
            return Err(IngestError::Config("n_cubes and n_days must be positive".into()));
        }
        if !self.seasonal_amplitude.is_finite() || !self.weather_coupling.is_finite() {
            return Err(IngestError::Config("amplitudes must be finite".into()));
        }
        Ok(())
    }

    pub fn acquisitions_per_cube(&self) -> usize {
        self.n_days.div_ceil(REVISIT_DAYS as usize)
    }
}

/// Noise-free-of-clouds daily latent NDVI over the acquisition span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTruth {
    pub cube_id: String,
    pub start_day: TimeStamp,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub series: Vec<ObservationSeries>,
    pub weather: Vec<DailyWeather>,
    pub truth: Vec<DenseTruth>,
    /// (cube_id, climate group) pairs.
    pub groups: Vec<(String, String)>,
}

pub fn cube_id(i: usize) -> String {
    format!("cube{i:04}")
}

/// Seed of the stream that decides which acquisitions of cube `i` are cloudy.
/// One uniform draw per acquisition, in order; cloudy iff the draw is below
/// the cloud probability.
pub fn cloud_stream_seed(rng_seed: u64, i: usize) -> u64 {
    derive_seed(rng_seed, &format!("synthetic/clouds/{i}"))
}

struct Climate {
    temp_mean: f64,
    temp_amp: f64,
    rain_mean: f64,
    level: (f64, f64),
}

fn climate(group: usize) -> Climate {
    match group {
        0 => Climate {
            temp_mean: 22.0,
            temp_amp: 9.0,
            rain_mean: 0.8,
            level: (0.15, 0.35),
        },
        1 => Climate {
            temp_mean: 14.0,
            temp_amp: 8.0,
            rain_mean: 2.2,
            level: (0.30, 0.55),
        },
        _ => Climate {
            temp_mean: 5.0,
            temp_amp: 11.0,
            rain_mean: 1.6,
            level: (0.25, 0.50),
        },
    }
}

struct Ar1 {
    phi: f64,
    noise: Normal<f64>,
    state: f64,
}

impl Ar1 {
    fn new(phi: f64, sd: f64) -> Self {
        // innovations scaled so the stationary standard deviation is `sd`
        let innovation = sd * (1.0 - phi * phi).sqrt();
        Self {
            phi,
            noise: Normal::new(0.0, innovation).expect("finite sd"),
            state: 0.0,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        self.state = self.phi * self.state + self.noise.sample(rng);
        self.state
    }
}

fn generate_cube(config: &SyntheticConfig, i: usize) -> (ObservationSeries, DailyWeather, DenseTruth, (String, String)) {
    let id = cube_id(i);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, &format!("synthetic/cube/{i}")));
    let group = i % GROUPS.len();
    let c = climate(group);

    let year = FIRST_YEAR + (i % YEARS) as i32;
    let start_ordinal = rng.random_range(1..=200u32);
    let start = TimeStamp::from_date(NaiveDate::from_yo_opt(year, start_ordinal).expect("valid ordinal"));
    let weather_start = start.offset(-WEATHER_LEAD_DAYS);
    let total_days = WEATHER_LEAD_DAYS as usize + config.n_days;

    let level = rng.random_range(c.level.0..c.level.1);
    let amplitude = config.seasonal_amplitude * rng.random_range(0.6..1.4);
    let peak_doy = 190.0 + rng.random_range(-25.0..25.0);

    let mut temp_anom = Ar1::new(0.8, 3.0);
    let mut rain_anom = Ar1::new(0.6, 2.5);
    let mut hum_anom = Ar1::new(0.7, 6.0);
    let mut rad_anom = Ar1::new(0.5, 30.0);
    let mut wind_anom = Ar1::new(0.6, 1.5);
    let mut pres_anom = Ar1::new(0.85, 5.0);
    let ndvi_noise = Normal::new(0.0, NDVI_NOISE_SD).expect("finite sd");

    let mut rows = Vec::with_capacity(total_days);
    let mut driver = Vec::with_capacity(total_days);
    let mut smoothed = 0.0;
    let lambda = 1.0 / DRIVER_TIMESCALE;
    for k in 0..total_days {
        let day = weather_start.offset(k as i64);
        let phase = 2.0 * PI * (f64::from(day.day_of_year()) - 1.0) / 365.0;
        let season = -phase.cos(); // -1 in January, +1 in early July
        let ta = temp_anom.next(&mut rng);
        let ra = rain_anom.next(&mut rng);
        let temperature = c.temp_mean + c.temp_amp * season + ta;
        let rainfall = (c.rain_mean * (1.0 - 0.4 * season) + ra).max(0.0);
        let humidity = (65.0 - 1.2 * (temperature - 15.0) + 4.0 * rainfall + hum_anom.next(&mut rng)).clamp(0.0, 100.0);
        let radiation = (190.0 + 110.0 * season - 10.0 * rainfall + rad_anom.next(&mut rng)).max(0.0);
        let wind = (3.5 + wind_anom.next(&mut rng)).abs();
        let pressure = 1013.0 - 0.6 * rainfall + pres_anom.next(&mut rng);
        rows.push(WeatherRow {
            wind,
            humidity,
            radiation,
            rainfall,
            pressure,
            temperature,
        });
        // wet and mild anomalies green the canopy, hot and dry ones brown it
        let z = 0.5 * ra / 2.5 - 0.5 * ta / 3.0;
        smoothed = (1.0 - lambda) * smoothed + lambda * z;
        driver.push(smoothed);
    }
    let mean = driver.iter().sum::<f64>() / driver.len() as f64;
    let sd = (driver.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / driver.len() as f64)
        .sqrt()
        .max(1e-12);

    let values: Vec<f64> = (0..config.n_days)
        .map(|k| {
            let day = start.offset(k as i64);
            let phase = 2.0 * PI * (f64::from(day.day_of_year()) - peak_doy) / 365.0;
            let d = (driver[WEATHER_LEAD_DAYS as usize + k] - mean) / sd;
            (level + amplitude * phase.cos() + config.weather_coupling * d + ndvi_noise.sample(&mut rng)).clamp(-1.0, 1.0)
        })
        .collect();

    let mut clouds = ChaCha8Rng::seed_from_u64(cloud_stream_seed(config.rng_seed, i));
    let points = (0..config.n_days)
        .step_by(REVISIT_DAYS as usize)
        .map(|k| {
            let ts = start.offset(k as i64);
            if clouds.random::<f64>() < config.cloud_probability {
                ObsPoint::cloudy(ts)
            } else {
                ObsPoint::observed(ts, values[k])
            }
        })
        .collect();

    (
        ObservationSeries::new(id.clone(), points),
        DailyWeather::new(id.clone(), weather_start, rows),
        DenseTruth {
            cube_id: id.clone(),
            start_day: start,
            values,
        },
        (id, GROUPS[group].to_string()),
    )
}

/// Generates `n_cubes` cubes. Cube `i` starts in year `2017 + i % 4` on a
/// random day of year in `[1, 200]`, belongs to climate group `i % 3`, and
/// is acquired every five days over `n_days` days.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let cubes: Vec<_> = (0..config.n_cubes)
        .into_par_iter()
        .map(|i| generate_cube(config, i))
        .collect();
    let mut out = SyntheticDataset {
        series: Vec::with_capacity(cubes.len()),
        weather: Vec::with_capacity(cubes.len()),
        truth: Vec::with_capacity(cubes.len()),
        groups: Vec::with_capacity(cubes.len()),
    };
    for (s, w, t, g) in cubes {
        out.series.push(s);
        out.weather.push(w);
        out.truth.push(t);
        out.groups.push(g);
    }
    Ok(out)
}
