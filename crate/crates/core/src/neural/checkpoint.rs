//! Single-file tensor archive: an 8-byte magic, a little-endian `u64`
//! manifest length, a JSON manifest, then `f32le` tensor payloads in
//! manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::field::{finalize, DeformationField, FieldConfig, FieldMode};
use super::splat::{PrimTensors, PrimVars};
use super::tape::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::VolumeGrid;
use crate::gsplat::{GaussianSet, ScaleBounds};

pub const MAGIC: &[u8; 8] = b"TGFCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the payload section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    pub meta: Value,
}

/// Serializes named tensors; values are rounded to `f32`.
pub fn archive_bytes(tensors: &[(String, &Tensor)], meta: Value) -> Result<Vec<u8>> {
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: [t.rows, t.cols],
                offset,
            };
            offset += t.len() * 4;
            e
        })
        .collect();
    let manifest = serde_json::to_vec(&Manifest {
        dtype: "f32le".into(),
        tensors: entries,
        meta,
    })?;
    let mut out = Vec::with_capacity(16 + manifest.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, t) in tensors {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_archive(bytes: &[u8]) -> Result<(Vec<(String, Tensor)>, Value)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint archive (bad magic)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::Format("truncated checkpoint manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(body)?;
    if manifest.dtype != "f32le" {
        return Err(Error::Format(format!("unsupported dtype {}", manifest.dtype)));
    }
    let payload = &bytes[16 + len..];
    let tensors = manifest
        .tensors
        .into_iter()
        .map(|e| {
            let n = e.shape[0] * e.shape[1];
            let raw = payload
                .get(e.offset..e.offset + 4 * n)
                .ok_or_else(|| Error::Format(format!("tensor {} exceeds payload", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            Ok((e.name, Tensor::new(e.shape[0], e.shape[1], data)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tensors, manifest.meta))
}

pub fn write_archive(path: &Path, tensors: &[(String, &Tensor)], meta: Value) -> Result<()> {
    let bytes = archive_bytes(tensors, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<(Vec<(String, Tensor)>, Value)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_archive(&bytes)
}

const PRIM_NAMES: [&str; 4] = ["gaussians.mu", "gaussians.quat", "gaussians.log_scale", "gaussians.rho_raw"];

/// Trainable state of a run: primitives plus the optional field.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub grid: VolumeGrid,
    pub gaussians: PrimTensors,
    pub field: Option<DeformationField>,
}

#[derive(Serialize, Deserialize)]
struct FieldMeta {
    config: FieldConfig,
    mode: FieldMode,
    grid: VolumeGrid,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    iteration: usize,
    grid: VolumeGrid,
    field: Option<FieldMeta>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, &Tensor)> = PRIM_NAMES
            .iter()
            .zip(self.gaussians.tensors())
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        if let Some(f) = &self.field {
            tensors.extend(f.params.params.iter().map(|p| (format!("field.{}", p.name), &p.value)));
        }
        let meta = CheckpointMeta {
            iteration: self.iteration,
            grid: self.grid,
            field: self.field.as_ref().map(|f| FieldMeta {
                config: f.config,
                mode: f.mode,
                grid: f.grid,
            }),
        };
        archive_bytes(&tensors, serde_json::to_value(meta)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (tensors, meta) = parse_archive(bytes)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)?;
        let take = |name: &str, shape: Option<(usize, usize)>| -> Result<Tensor> {
            let pos = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            let t = tensors[pos].1.clone();
            if let Some(s) = shape {
                if t.shape() != s {
                    return Err(Error::Format(format!("tensor {name} has shape {:?}, expected {s:?}", t.shape())));
                }
            }
            Ok(t)
        };
        let mu = take(PRIM_NAMES[0], None)?;
        let n = mu.rows;
        let gaussians = PrimTensors {
            mu,
            quat: take(PRIM_NAMES[1], Some((n, 4)))?,
            log_scale: take(PRIM_NAMES[2], Some((n, 3)))?,
            rho_raw: take(PRIM_NAMES[3], Some((n, 1)))?,
        };
        let field = match meta.field {
            None => None,
            Some(fm) => {
                let mut f = DeformationField::new(fm.config, fm.mode, fm.grid)?;
                for p in f.params.params.iter_mut() {
                    p.value = take(&format!("field.{}", p.name), Some(p.value.shape()))?;
                }
                Some(f)
            }
        };
        Ok(Checkpoint {
            iteration: meta.iteration,
            grid: meta.grid,
            gaussians,
            field,
        })
    }

    /// Primitives as rendered by the model, deformed for `phase` when a
    /// dynamic field is present.
    pub fn primitives(&self, phase: Option<usize>) -> Result<GaussianSet> {
        let mut tape = Tape::new();
        let leaves = PrimVars::leaves(&mut tape, &self.gaussians);
        let out = match &self.field {
            Some(f) => {
                let phase = match f.mode {
                    FieldMode::Static => None,
                    FieldMode::Dynamic { .. } => {
                        Some(phase.ok_or_else(|| Error::arg("dynamic checkpoint needs a phase"))?)
                    }
                };
                f.deform_tape(&mut tape, &leaves, phase)?
            }
            None => finalize(&mut tape, &leaves, ScaleBounds::for_grid(&self.grid)),
        };
        Ok(out.values(&tape).to_set())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
