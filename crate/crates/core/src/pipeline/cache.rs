//! `SQF1` sample cache.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header:  b"SQF1" | u32 version = 1 | u64 schema_hash | u64 n_samples
//!          | u32 F_h | u32 F_f | u32 p | u32 h
//! sample:  str cube_id | u8 scaled | i64 last_history_day | u32 L
//!          | p*F_h f64 history_tokens | p u8 history_mask
//!          | p (u8 present, f64 value) history_ndvi | p u8 history_bt_valid
//!          | L*F_f f64 future_tokens | L u8 future_mask
//!          | h (u32 selection, f64 target, f64 raw_target, i64 target_day, f64 delta_days)
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8; days are epoch-day indices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{PipelineError, Result};
use crate::binio::{LeReader, LeWriter};
use crate::domain::{ForecastSample, TimeStamp};

pub const CACHE_MAGIC: &[u8; 4] = b"SQF1";
const VERSION: u32 = 1;
const MAX_FUTURE_LEN: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheHeader {
    pub schema_hash: u64,
    pub n_samples: u64,
    pub history_width: usize,
    pub future_width: usize,
    pub history_len: usize,
    pub horizon: usize,
}

fn cache_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Cache(msg.into())
}

/// Writes samples sharing one geometry. An empty set records zero geometry.
pub fn write_samples(path: impl AsRef<Path>, schema_hash: u64, samples: &[ForecastSample]) -> Result<()> {
    let mut w = LeWriter(BufWriter::new(File::create(path)?));
    let first = samples.first();
    let (fh, ff, p, h) = first.map_or((0, 0, 0, 0), |s| (s.history_width, s.future_width, s.history_len(), s.horizon()));
    w.bytes(CACHE_MAGIC)?;
    w.u32(VERSION)?;
    w.u64(schema_hash)?;
    w.u64(samples.len() as u64)?;
    for v in [fh, ff, p, h] {
        w.len(v)?;
    }
    for s in samples {
        if (s.history_width, s.future_width, s.history_len(), s.horizon()) != (fh, ff, p, h) {
            return Err(cache_err(format!("sample of cube {} has a different geometry", s.cube_id)));
        }
        w.str(&s.cube_id)?;
        w.u8(u8::from(s.scaled))?;
        w.i64(s.last_history_day.day())?;
        w.len(s.future_len())?;
        w.f64s(&s.history_tokens)?;
        w.flags(&s.history_mask)?;
        for v in &s.history_ndvi {
            w.u8(u8::from(v.is_some()))?;
            w.f64(v.unwrap_or(0.0))?;
        }
        w.flags(&s.history_bt_valid)?;
        w.f64s(&s.future_tokens)?;
        w.flags(&s.future_mask)?;
        for k in 0..h {
            w.len(s.selection_indices[k])?;
            w.f64(s.targets[k])?;
            w.f64(s.raw_targets[k])?;
            w.i64(s.target_days[k].day())?;
            w.f64(s.delta_days[k])?;
        }
    }
    w.0.flush()?;
    Ok(())
}

fn read_header<R: Read>(r: &mut LeReader<R>) -> Result<CacheHeader> {
    let magic: [u8; 4] = r.array()?;
    if &magic != CACHE_MAGIC {
        return Err(cache_err(format!("bad magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(cache_err(format!("unsupported version {version}")));
    }
    Ok(CacheHeader {
        schema_hash: r.u64()?,
        n_samples: r.u64()?,
        history_width: r.len(4096)?,
        future_width: r.len(4096)?,
        history_len: r.len(4096)?,
        horizon: r.len(4096)?,
    })
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<(CacheHeader, Vec<ForecastSample>)> {
    let mut r = LeReader(BufReader::new(File::open(path)?));
    let hd = read_header(&mut r)?;
    let (p, h) = (hd.history_len, hd.horizon);
    let mut out = Vec::new();
    for _ in 0..hd.n_samples {
        let cube_id = r.str()?;
        let scaled = r.flag()?;
        let last_history_day = TimeStamp::from_day(r.i64()?);
        let l = r.len(MAX_FUTURE_LEN)?;
        let history_tokens = r.f64s(p * hd.history_width)?;
        let history_mask = r.flags(p)?;
        let history_ndvi = (0..p)
            .map(|_| {
                let present = r.flag()?;
                let v = r.f64()?;
                Ok(present.then_some(v))
            })
            .collect::<std::io::Result<Vec<_>>>()?;
        let history_bt_valid = r.flags(p)?;
        let future_tokens = r.f64s(l * hd.future_width)?;
        let future_mask = r.flags(l)?;
        let mut s = ForecastSample {
            cube_id,
            history_width: hd.history_width,
            future_width: hd.future_width,
            history_tokens,
            history_mask,
            future_tokens,
            future_mask,
            selection_indices: Vec::with_capacity(h),
            targets: Vec::with_capacity(h),
            raw_targets: Vec::with_capacity(h),
            history_ndvi,
            target_days: Vec::with_capacity(h),
            last_history_day,
            delta_days: Vec::with_capacity(h),
            history_bt_valid,
            scaled,
        };
        for _ in 0..h {
            s.selection_indices.push(r.len(MAX_FUTURE_LEN)?);
            s.targets.push(r.f64()?);
            s.raw_targets.push(r.f64()?);
            s.target_days.push(TimeStamp::from_day(r.i64()?));
            s.delta_days.push(r.f64()?);
        }
        out.push(s);
    }
    let mut trailing = [0u8; 1];
    if r.0.read(&mut trailing)? != 0 {
        return Err(cache_err("trailing bytes after last sample"));
    }
    Ok((hd, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, SyntheticConfig};
    use crate::pipeline::{fit_sample_scaler, prepare_dataset, scale_samples, PerturbationConfig, SampleConfig};

    #[test]
    fn synthetic_samples_round_trip_bit_exactly() {
        let d = generate_synthetic(&SyntheticConfig {
            n_cubes: 4,
            ..Default::default()
        })
        .unwrap();
        let mut samples =
            prepare_dataset(&d.series, &d.weather, &SampleConfig::default(), &PerturbationConfig::default()).unwrap();
        let scaler = fit_sample_scaler(&samples).unwrap();
        scale_samples(&mut samples, &scaler).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.sqf");
        write_samples(&path, 77, &samples).unwrap();
        let (hd, back) = read_samples(&path).unwrap();
        assert_eq!(hd.schema_hash, 77);
        assert_eq!(hd.n_samples as usize, samples.len());
        assert_eq!(back, samples);

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"SQF1");
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_samples(&path).is_err());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.sqf");
        std::fs::write(&path, b"NOPE0000000000000000000000000000000000").unwrap();
        assert!(matches!(read_samples(&path), Err(PipelineError::Cache(_))));
    }

    #[test]
    fn empty_cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.sqf");
        write_samples(&path, 1, &[]).unwrap();
        assert!(read_samples(&path).unwrap().1.is_empty());
    }
}
