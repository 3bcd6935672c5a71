//! Loading targets, weather and pixels from CSV, NDVI from band reflectances,
//! and a seeded synthetic data generator.

mod csv_io;
mod pixels;
mod synthetic;

use std::path::PathBuf;

use chrono::NaiveDate;

pub use csv_io::{
    read_groups_csv, read_pixels_csv, read_targets_csv, read_weather_csv, write_groups_csv,
    write_targets_csv, write_weather_csv,
};
pub use pixels::{ndvi_from_bands, series_from_pixel_table, series_from_pixels, PixelLayout, PixelRecord};
pub use synthetic::{generate_synthetic, DenseTruth, SyntheticConfig, SyntheticDataset};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Validation {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("weather for cube {cube_id} has a gap: {missing} is missing")]
    WeatherGap { cube_id: String, missing: NaiveDate },
    #[error("undefined NDVI: b8a + b04 = {denominator} is not positive")]
    UndefinedPixel { denominator: f64 },
    #[error("cube {cube_id}: acquisition {day} has no pixel records")]
    EmptyAcquisition { cube_id: String, day: NaiveDate },
    #[error("cube {cube_id}: pixel ({row}, {col}) outside a {rows}x{cols} grid")]
    PixelOutsideGrid {
        cube_id: String,
        row: u32,
        col: u32,
        rows: u32,
        cols: u32,
    },
    #[error("pixel records mix cubes {0} and {1}")]
    MixedCubes(String, String),
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, IngestError>;
