//! Model files.
//!
//! MLP file layout: the 8-byte magic `COOPMLP1`, a little-endian `u64`
//! header length, a JSON header (`MlpHeader`), then `num_params`
//! little-endian `f64` values in parameter order. Mixtures are plain JSON
//! ([`MixtureRecord`]).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{GaussianMixture, MixtureRecord, MlpConfig, MlpDenoiser};
use crate::numerics::Real;

const MAGIC: &[u8; 8] = b"COOPMLP1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpHeader {
    pub config: MlpConfig,
    pub num_params: usize,
}

pub fn write_mlp<T: Real, W: Write>(model: &MlpDenoiser<T>, mut out: W) -> Result<()> {
    let header = serde_json::to_vec(&MlpHeader { config: model.config().clone(), num_params: model.num_params() })?;
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    for p in model.params() {
        out.write_all(&p.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_mlp<T: Real, R: Read>(mut input: R) -> Result<MlpDenoiser<T>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 24 {
        return Err(Error::Format(format!("implausible header length {len}")));
    }
    let mut header = vec![0u8; len];
    input.read_exact(&mut header)?;
    let header: MlpHeader = serde_json::from_slice(&header)?;
    let mut params = Vec::with_capacity(header.num_params);
    let mut buf = [0u8; 8];
    for _ in 0..header.num_params {
        input.read_exact(&mut buf)?;
        params.push(T::of(f64::from_le_bytes(buf)));
    }
    if input.read(&mut buf)? != 0 {
        return Err(Error::Format("trailing bytes after parameter block".into()));
    }
    MlpDenoiser::from_parts(header.config, params)
}

pub fn save_mlp<T: Real>(model: &MlpDenoiser<T>, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_mlp(model, &mut bytes)?;
    crate::cli::write_atomic(path, &bytes)
}

pub fn load_mlp<T: Real>(path: &Path) -> Result<MlpDenoiser<T>> {
    read_mlp(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn save_mixture<T: Real>(gm: &GaussianMixture<T>, path: &Path) -> Result<()> {
    crate::cli::write_atomic(path, &serde_json::to_vec_pretty(&gm.to_record())?)
}

pub fn load_mixture<T: Real>(path: &Path) -> Result<GaussianMixture<T>> {
    let rec: MixtureRecord = serde_json::from_slice(&std::fs::read(path)?)?;
    GaussianMixture::from_record(&rec)
}
