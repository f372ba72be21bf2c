//! Checkpoints: a JSON manifest (config + tensor index) next to a little-endian blob.
//!
//! `model.json` pairs with `model.bin`. Exports use `f32`; training checkpoints use
//! `f64` so a resumed run continues bit-exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::network::LladaModel;
use super::params::ParamSet;
use super::ModelError;

pub const CHECKPOINT_FORMAT: &str = "llada-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: Dtype,
    pub config: ModelConfig,
    pub blob: String,
    pub blob_sha256: String,
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
    /// Additional tensors such as optimizer moments.
    #[serde(default)]
    pub extra: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub model: LladaModel,
    pub dtype: Dtype,
    pub extra: ParamSet,
    pub metadata: serde_json::Value,
}

pub fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

fn write_tensors<'a>(
    blob: &mut Vec<u8>,
    dtype: Dtype,
    tensors: impl Iterator<Item = (&'a str, &'a Array2<f64>)>,
) -> Vec<TensorEntry> {
    let mut entries = Vec::new();
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: [t.nrows(), t.ncols()],
            offset: blob.len(),
        });
        for &v in t.iter() {
            match dtype {
                Dtype::F32 => blob.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => blob.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    entries
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ModelError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `path` (manifest) and its `.bin` blob.
pub fn save_checkpoint(
    path: &Path,
    model: &LladaModel,
    dtype: Dtype,
    extra: &ParamSet,
    metadata: serde_json::Value,
) -> Result<(), ModelError> {
    let mut blob = Vec::with_capacity(model.parameter_count() * dtype.width());
    let params = write_tensors(&mut blob, dtype, model.params().iter());
    let buffers = write_tensors(&mut blob, dtype, model.buffers().iter());
    let extra = write_tensors(&mut blob, dtype, extra.iter());
    let bin = blob_path(path);
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dtype,
        config: model.config().clone(),
        blob: bin
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
        params,
        buffers,
        extra,
        metadata,
    };
    write_atomic(&bin, &blob)?;
    write_atomic(path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

fn read_tensors(blob: &[u8], dtype: Dtype, entries: &[TensorEntry]) -> Result<ParamSet, ModelError> {
    let mut set = ParamSet::default();
    let w = dtype.width();
    for e in entries {
        let n = e.shape[0] * e.shape[1];
        let end = e.offset + n * w;
        let bytes = blob
            .get(e.offset..end)
            .ok_or_else(|| ModelError::Checkpoint(format!("tensor `{}` runs past the blob", e.name)))?;
        let data: Vec<f64> = match dtype {
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        let arr = Array2::from_shape_vec((e.shape[0], e.shape[1]), data)
            .map_err(|err| ModelError::Checkpoint(err.to_string()))?;
        set.insert(e.name.clone(), arr);
    }
    Ok(set)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, ModelError> {
    let text = fs::read_to_string(path)?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != CHECKPOINT_FORMAT || m.version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            m.format, m.version
        )));
    }
    Ok(m)
}

/// Loads a checkpoint. With `expected`, the embedded config must match it exactly.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<LoadedCheckpoint, ModelError> {
    let m = read_manifest(path)?;
    if let Some(cfg) = expected {
        if *cfg != m.config {
            return Err(ModelError::ConfigMismatch(
                "checkpoint was written under a different model config".into(),
            ));
        }
    }
    let bin = path.with_file_name(&m.blob);
    let blob = fs::read(&bin)?;
    if hex::encode(Sha256::digest(&blob)) != m.blob_sha256 {
        return Err(ModelError::Checkpoint(format!("{} does not match its manifest digest", bin.display())));
    }
    let params = read_tensors(&blob, m.dtype, &m.params)?;
    let buffers = read_tensors(&blob, m.dtype, &m.buffers)?;
    let extra = read_tensors(&blob, m.dtype, &m.extra)?;
    let model = LladaModel::from_parts(m.config, params, buffers)?;
    Ok(LoadedCheckpoint {
        model,
        dtype: m.dtype,
        extra,
        metadata: m.metadata,
    })
}
