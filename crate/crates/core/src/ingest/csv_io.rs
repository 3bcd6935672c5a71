use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Writer};
use log::warn;

use super::pixels::PixelRecord;
use super::{IngestError, Result};
use crate::domain::{DailyWeather, ObsPoint, ObservationSeries, TimeStamp, WeatherRow, WEATHER_VARIABLES};

const TARGET_HEADER: [&str; 4] = ["cube_id", "date", "ndvi", "observed"];
const WEATHER_HEADER: [&str; 8] = [
    "cube_id",
    "date",
    "wind",
    "humidity",
    "radiation",
    "rainfall",
    "pressure",
    "temperature",
];
const PIXEL_HEADER: [&str; 9] = ["cube_id", "date", "row", "col", "b02", "b03", "b04", "b8a", "cloud"];
const GROUP_HEADER: [&str; 2] = ["cube_id", "koppen_group"];

struct Rows<'a> {
    path: &'a Path,
    records: Vec<(u64, StringRecord)>,
}

impl Rows<'_> {
    fn parse_err(&self, line: u64, message: impl Into<String>) -> IngestError {
        IngestError::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn invalid(&self, line: u64, message: impl Into<String>) -> IngestError {
        IngestError::Validation {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn number(&self, line: u64, field: &str, raw: &str) -> Result<f64> {
        raw.trim()
            .parse::<f64>()
            .map_err(|_| self.parse_err(line, format!("{field}: '{raw}' is not a number")))
    }

    fn date(&self, line: u64, raw: &str) -> Result<TimeStamp> {
        TimeStamp::parse(raw).map_err(|_| self.parse_err(line, format!("date: '{raw}' is not YYYY-MM-DD")))
    }

    fn flag(&self, line: u64, field: &str, raw: &str) -> Result<bool> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(self.parse_err(line, format!("{field}: '{raw}' is not a boolean"))),
        }
    }
}

fn load<'a>(path: &'a Path, header: &[&str]) -> Result<Rows<'a>> {
    let io = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let mut reader = ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let parse = |line: u64, e: csv::Error| IngestError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    };
    let found = reader.headers().map_err(|e| parse(1, e))?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(IngestError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header '{}', found '{}'", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse(line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        records.push((line, rec));
    }
    Ok(Rows { path, records })
}

/// Groups rows by cube id in order of first appearance.
fn by_cube<T>(items: Vec<(String, u64, T)>) -> Vec<(String, Vec<(u64, T)>)> {
    let mut order = Vec::new();
    let mut map: BTreeMap<String, Vec<(u64, T)>> = BTreeMap::new();
    for (id, line, item) in items {
        if !map.contains_key(&id) {
            order.push(id.clone());
        }
        map.entry(id).or_default().push((line, item));
    }
    order
        .into_iter()
        .map(|id| {
            let v = map.remove(&id).unwrap_or_default();
            (id, v)
        })
        .collect()
}

/// Reads `cube_id,date,ndvi,observed` rows. Rows of a cube must appear in
/// strictly increasing date order; `ndvi` is empty for cloudy rows.
pub fn read_targets_csv(path: impl AsRef<Path>) -> Result<Vec<ObservationSeries>> {
    let path = path.as_ref();
    let rows = load(path, &TARGET_HEADER)?;
    let mut items = Vec::with_capacity(rows.records.len());
    for (line, rec) in &rows.records {
        let line = *line;
        let day = rows.date(line, &rec[1])?;
        let observed = rows.flag(line, "observed", &rec[3])?;
        let raw = rec[2].trim();
        let point = match (observed, raw.is_empty()) {
            (true, true) => return Err(rows.invalid(line, "observed row without an ndvi value")),
            (false, false) => return Err(rows.invalid(line, "cloudy row must leave ndvi empty")),
            (false, true) => ObsPoint::cloudy(day),
            (true, false) => {
                let v = rows.number(line, "ndvi", raw)?;
                if !v.is_finite() {
                    return Err(rows.parse_err(line, format!("ndvi: '{raw}' is not finite")));
                }
                let clamped = v.clamp(-1.0, 1.0);
                if clamped != v {
                    warn!("{}:{line}: NDVI {v} clamped to [-1, 1]", path.display());
                }
                ObsPoint::observed(day, clamped)
            }
        };
        items.push((rec[0].to_string(), line, point));
    }
    by_cube(items)
        .into_iter()
        .map(|(id, pts)| {
            for w in pts.windows(2) {
                if w[1].1.timestamp <= w[0].1.timestamp {
                    return Err(rows.invalid(
                        w[1].0,
                        format!("cube {id}: date {} does not follow {}", w[1].1.timestamp, w[0].1.timestamp),
                    ));
                }
            }
            Ok(ObservationSeries::new(id, pts.into_iter().map(|(_, p)| p).collect()))
        })
        .collect()
}

/// Reads daily weather rows; each cube must cover a contiguous range of days.
pub fn read_weather_csv(path: impl AsRef<Path>) -> Result<Vec<DailyWeather>> {
    let path = path.as_ref();
    let rows = load(path, &WEATHER_HEADER)?;
    let mut items = Vec::with_capacity(rows.records.len());
    for (line, rec) in &rows.records {
        let line = *line;
        let day = rows.date(line, &rec[1])?;
        let mut vals = [0.0; 6];
        for (k, name) in WEATHER_VARIABLES.iter().enumerate() {
            vals[k] = rows.number(line, name, &rec[k + 2])?;
        }
        let row = WeatherRow::from_array(vals);
        if let Some(problem) = row.problems().into_iter().next() {
            return Err(rows.invalid(line, problem));
        }
        items.push((rec[0].to_string(), line, (day, row)));
    }
    by_cube(items)
        .into_iter()
        .map(|(id, days)| {
            let start = days[0].1 .0;
            for (k, (line, (day, _))) in days.iter().enumerate() {
                let expected = start.offset(k as i64);
                if *day > expected {
                    return Err(IngestError::WeatherGap {
                        cube_id: id.clone(),
                        missing: expected.date(),
                    });
                }
                if *day < expected {
                    return Err(rows.invalid(*line, format!("cube {id}: date {day} is out of order or repeated")));
                }
            }
            let data = days.into_iter().map(|(_, (_, r))| r).collect();
            Ok(DailyWeather::new(id, start, data))
        })
        .collect()
}

pub fn read_pixels_csv(path: impl AsRef<Path>) -> Result<Vec<PixelRecord>> {
    let path = path.as_ref();
    let rows = load(path, &PIXEL_HEADER)?;
    let mut out = Vec::with_capacity(rows.records.len());
    for (line, rec) in &rows.records {
        let line = *line;
        let int = |field: &str, raw: &str| {
            raw.trim()
                .parse::<u32>()
                .map_err(|_| rows.parse_err(line, format!("{field}: '{raw}' is not a non-negative integer")))
        };
        let band = |field: &str, raw: &str| -> Result<f64> {
            let v = rows.number(line, field, raw)?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(rows.invalid(line, format!("{field}: reflectance {v} must be finite and non-negative")));
            }
            Ok(v)
        };
        out.push(PixelRecord {
            cube_id: rec[0].to_string(),
            day: rows.date(line, &rec[1])?,
            row: int("row", &rec[2])?,
            col: int("col", &rec[3])?,
            b02: band("b02", &rec[4])?,
            b03: band("b03", &rec[5])?,
            b04: band("b04", &rec[6])?,
            b8a: band("b8a", &rec[7])?,
            cloud: rows.flag(line, "cloud", &rec[8])?,
        });
    }
    Ok(out)
}

pub fn read_groups_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let rows = load(path, &GROUP_HEADER)?;
    let mut out = BTreeMap::new();
    for (line, rec) in &rows.records {
        if out.insert(rec[0].to_string(), rec[1].to_string()).is_some() {
            return Err(rows.invalid(*line, format!("cube {} listed twice", &rec[0])));
        }
    }
    Ok(out)
}

fn writer(path: &Path) -> Result<Writer<File>> {
    let file = File::create(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Writer::from_writer(file))
}

fn write_err(path: &Path) -> impl Fn(csv::Error) -> IngestError + '_ {
    move |e| IngestError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// Floats are written with Rust's shortest round-trip formatting, so reading
/// a written file reproduces the values exactly.
pub fn write_targets_csv(path: impl AsRef<Path>, series: &[ObservationSeries]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let err = write_err(path);
    w.write_record(TARGET_HEADER).map_err(&err)?;
    for s in series {
        for p in &s.points {
            let v = p.value.filter(|_| p.observed).map(|v| v.to_string()).unwrap_or_default();
            w.write_record([s.cube_id.as_str(), &p.timestamp.to_string(), &v, if p.observed { "true" } else { "false" }])
                .map_err(&err)?;
        }
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_weather_csv(path: impl AsRef<Path>, weather: &[DailyWeather]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let err = write_err(path);
    w.write_record(WEATHER_HEADER).map_err(&err)?;
    for cube in weather {
        for (k, row) in cube.rows.iter().enumerate() {
            let mut rec = vec![cube.cube_id.clone(), cube.start_day.offset(k as i64).to_string()];
            rec.extend(row.to_array().iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(&err)?;
        }
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_groups_csv(path: impl AsRef<Path>, groups: &[(String, String)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let err = write_err(path);
    w.write_record(GROUP_HEADER).map_err(&err)?;
    for (id, g) in groups {
        w.write_record([id, g]).map_err(&err)?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}
