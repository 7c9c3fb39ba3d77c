//! Checkpoint container: an 8-byte magic, a little-endian u64 header
//! length, a JSON header (format version, config hash, epoch, model shape,
//! taxonomy, tensor manifest), then every parameter tensor as contiguous
//! little-endian f32 data in registry order. Writes go through a temp file
//! in the target directory and land with a rename.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{SgaError, SgaResult};
use crate::graph::Taxonomy;
use crate::model::{build_model, ModelDims, ModelKind, SgaModel};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SGACKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the body.
    pub offset: u64,
    /// Element count.
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// Hash of the fully-resolved config that produced this run.
    pub config_hash: u64,
    /// Last completed epoch.
    pub epoch: usize,
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub taxonomy: Taxonomy,
    /// Registry order; offsets are consecutive and non-overlapping.
    pub manifest: Vec<TensorRecord>,
}

fn io_err(path: &Path, e: std::io::Error) -> SgaError {
    SgaError::io(path.display().to_string(), e)
}

fn parse_err(path: &Path, msg: impl Into<String>) -> SgaError {
    SgaError::Parse { path: path.display().to_string(), msg: msg.into() }
}

/// Serializes the model into the container and atomically replaces `path`.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    model: &SgaModel<S>,
    epoch: usize,
    config_hash: u64,
) -> SgaResult<()> {
    let mut manifest = Vec::with_capacity(model.reg.len());
    let mut offset = 0u64;
    let mut body: Vec<u8> = Vec::new();
    for (name, tensor) in model.reg.iter() {
        let data = tensor.cast::<f32>();
        manifest.push(TensorRecord {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            offset,
            len: data.len() as u64,
        });
        for v in data.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
        offset += 4 * data.len() as u64;
    }
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        config_hash,
        epoch,
        kind: model.kind,
        dims: model.dims,
        taxonomy: (*model.taxonomy).clone(),
        manifest,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| SgaError::contract("save_checkpoint", e.to_string()))?;

    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(CHECKPOINT_MAGIC).map_err(|e| io_err(path, e))?;
    tmp.write_all(&(header_bytes.len() as u64).to_le_bytes()).map_err(|e| io_err(path, e))?;
    tmp.write_all(&header_bytes).map_err(|e| io_err(path, e))?;
    tmp.write_all(&body).map_err(|e| io_err(path, e))?;
    tmp.flush().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Reads and validates the container without touching model code.
pub fn read_checkpoint(path: &Path) -> SgaResult<(CheckpointHeader, Vec<Vec<f32>>)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(parse_err(path, "not a checkpoint file (bad magic)"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16 + header_len;
    if bytes.len() < body_start {
        return Err(parse_err(path, "truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..body_start])
        .map_err(|e| parse_err(path, format!("header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(SgaError::Incompatible(format!(
            "checkpoint format version {} unsupported (expected {})",
            header.format_version, CHECKPOINT_VERSION
        )));
    }
    let body = &bytes[body_start..];
    let mut tensors = Vec::with_capacity(header.manifest.len());
    let mut expected_offset = 0u64;
    for rec in &header.manifest {
        if rec.offset != expected_offset {
            return Err(parse_err(
                path,
                format!("tensor {} at offset {} (expected {expected_offset})", rec.name, rec.offset),
            ));
        }
        let elems: usize = rec.shape.iter().product();
        if elems as u64 != rec.len {
            return Err(parse_err(
                path,
                format!("tensor {}: shape {:?} disagrees with len {}", rec.name, rec.shape, rec.len),
            ));
        }
        let nbytes = 4 * rec.len as usize;
        let start = rec.offset as usize;
        if start + nbytes > body.len() {
            return Err(parse_err(path, format!("tensor {} runs past the body", rec.name)));
        }
        tensors.push(
            body[start..start + nbytes]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        );
        expected_offset += nbytes as u64;
    }
    if expected_offset as usize != body.len() {
        return Err(parse_err(
            path,
            format!("body holds {} bytes, manifest covers {expected_offset}", body.len()),
        ));
    }
    Ok((header, tensors))
}

/// Rebuilds the model a checkpoint describes and installs its weights.
pub fn load_model(path: &Path) -> SgaResult<(SgaModel<f32>, CheckpointHeader)> {
    let (header, tensors) = read_checkpoint(path)?;
    header.dims.validate(&header.taxonomy)?;
    let mut model =
        build_model::<f32>(header.kind, header.dims, Arc::new(header.taxonomy.clone()), 0)?;
    if model.reg.len() != header.manifest.len() {
        return Err(SgaError::Incompatible(format!(
            "checkpoint lists {} tensors, this model kind allocates {}",
            header.manifest.len(),
            model.reg.len()
        )));
    }
    for (id, rec) in header.manifest.iter().enumerate() {
        let current = model.reg.get(id);
        if model.reg.name(id) != rec.name || current.shape() != rec.shape.as_slice() {
            return Err(SgaError::Incompatible(format!(
                "tensor {id} is {} {:?} in the checkpoint but {} {:?} when rebuilt",
                rec.name,
                rec.shape,
                model.reg.name(id),
                current.shape()
            )));
        }
        model.reg.get_mut(id).data_mut().copy_from_slice(&tensors[id]);
    }
    Ok((model, header))
}
