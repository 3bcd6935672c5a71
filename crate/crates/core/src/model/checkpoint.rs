//! `SQFM` checkpoint files.
//!
//! All integers and floats are little-endian; `str` is a u32 byte length
//! followed by UTF-8.
//!
//! ```text
//! b"SQFM" | u32 version = 1 | u64 schema_hash
//! | str config            JSON {"model": ModelConfig, "metadata": any}
//! | u32 n_scalers | n_scalers * (f64 mu, f64 sigma2, f64 eps)
//! | u32 n_params  | n_params * (str name | u32 rank | rank * u32 dim | prod(dim) * f64)
//! ```
//!
//! Parameter values are always stored as doubles, whatever the in-memory
//! scalar type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Param, ParamStore};
use super::{ModelConfig, ModelError, Network, Result};
use crate::binio::{LeReader, LeWriter};
use crate::pipeline::{ScalerParams, VariableScaler};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SQFM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub network: Network<T>,
    pub scaler: ScalerParams,
    pub schema_hash: u64,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ConfigBlock {
    model: ModelConfig,
    metadata: serde_json::Value,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_to(&mut buf, ckpt)?;
    // write the whole file at once so a failed save never leaves a torn file
    let path = path.as_ref();
    let tmp = path.with_extension("sqfm.tmp");
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(&buf)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_to<T: Scalar>(out: &mut Vec<u8>, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut w = LeWriter(out);
    w.bytes(CHECKPOINT_MAGIC)?;
    w.u32(VERSION)?;
    w.u64(ckpt.schema_hash)?;
    let block = ConfigBlock {
        model: ckpt.network.config.clone(),
        metadata: ckpt.metadata.clone(),
    };
    w.str(&serde_json::to_string(&block).map_err(|e| bad(e.to_string()))?)?;
    w.len(ckpt.scaler.len())?;
    for v in &ckpt.scaler.variables {
        w.f64(v.mu)?;
        w.f64(v.sigma2)?;
        w.f64(v.eps)?;
    }
    let params = &ckpt.network.store.params;
    w.len(params.len())?;
    for p in params {
        w.str(&p.name)?;
        w.len(p.shape.len())?;
        for &d in &p.shape {
            w.len(d)?;
        }
        for &v in &p.data {
            w.f64(v.as_f64())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let mut r = LeReader(BufReader::new(File::open(path)?));
    let magic: [u8; 4] = r.array()?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let schema_hash = r.u64()?;
    let block: ConfigBlock = serde_json::from_str(&r.str()?).map_err(|e| bad(format!("config block: {e}")))?;
    let n_scalers = r.len(1 << 16)?;
    let variables = (0..n_scalers)
        .map(|_| {
            Ok(VariableScaler {
                mu: r.f64()?,
                sigma2: r.f64()?,
                eps: r.f64()?,
            })
        })
        .collect::<std::io::Result<Vec<_>>>()?;
    let n_params = r.len(1 << 20)?;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.str()?;
        let rank = r.len(8)?;
        let shape = (0..rank).map(|_| r.len(1 << 28)).collect::<std::io::Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n > 1 << 28 {
            return Err(bad(format!("parameter {name} is implausibly large")));
        }
        let data = (0..n).map(|_| r.f64().map(T::lit)).collect::<std::io::Result<Vec<_>>>()?;
        params.push(Param { name, shape, data });
    }
    let mut trailing = [0u8; 1];
    if r.0.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes"));
    }
    let store = ParamStore::from_params(&block.model, params).map_err(bad)?;
    Ok(Checkpoint {
        network: Network::from_store(block.model, store)?,
        scaler: ScalerParams { variables },
        schema_hash,
        metadata: block.metadata,
    })
}
