//! On-disk formats: JSON sidecars with little-endian `f32` payloads.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{PhantomSpec, ProjectionSet, ScanGeometry, Volume, VolumeGrid};
use crate::gsplat::{GaussianPrimitive, GaussianSet};

pub const GS_FIELDS: [&str; 4] = ["mu", "quat", "log_scale", "rho"];
const GS_RECORD: usize = 11;

/// `(name.kind.json, name.kind.raw)` for a stem or for either sidecar path.
pub fn sidecar_paths(path: &Path, kind: &str) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let stem = s
        .strip_suffix(&format!(".{kind}.json"))
        .or_else(|| s.strip_suffix(&format!(".{kind}.raw")))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{stem}.{kind}.json")),
        PathBuf::from(format!("{stem}.{kind}.raw")),
    )
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn to_f32le(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn from_f32le(bytes: &[u8], expected: usize, path: &Path) -> Result<Vec<f64>> {
    if bytes.len() != expected * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} f32 values, found {} bytes",
            path.display(),
            expected,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect())
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    center: [f64; 3],
    dtype: String,
    order: String,
}

/// Writes `<stem>.vol.json` and `<stem>.vol.raw`; returns the JSON path.
pub fn write_volume(path: &Path, vol: &Volume) -> Result<PathBuf> {
    let (json, raw) = sidecar_paths(path, "vol");
    let h = VolumeHeader {
        dims: vol.grid.dims,
        spacing: vol.grid.spacing,
        center: vol.grid.center,
        dtype: "f32le".into(),
        order: "x-fastest".into(),
    };
    write(&json, &to_json(&h)?)?;
    write(&raw, &to_f32le(&vol.data))?;
    Ok(json)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let (json, raw) = sidecar_paths(path, "vol");
    let h: VolumeHeader = serde_json::from_slice(&read(&json)?)?;
    if h.dtype != "f32le" || h.order != "x-fastest" {
        return Err(Error::Format(format!(
            "{}: unsupported dtype/order {}/{}",
            json.display(),
            h.dtype,
            h.order
        )));
    }
    let grid = VolumeGrid::new(h.dims, h.spacing, h.center)?;
    let data = from_f32le(&read(&raw)?, grid.len(), &raw)?;
    Volume::from_data(grid, data)
}

/// Writes `<stem>.proj.json` (the scan geometry) and `<stem>.proj.raw`.
pub fn write_projections(path: &Path, proj: &ProjectionSet) -> Result<PathBuf> {
    let (json, raw) = sidecar_paths(path, "proj");
    write(&json, &to_json(&proj.geom)?)?;
    write(&raw, &to_f32le(&proj.data))?;
    Ok(json)
}

pub fn read_geometry(path: &Path) -> Result<ScanGeometry> {
    let (json, _) = sidecar_paths(path, "proj");
    let geom: ScanGeometry = serde_json::from_slice(&read(&json)?)?;
    geom.validate()?;
    Ok(geom)
}

pub fn read_projections(path: &Path) -> Result<ProjectionSet> {
    let geom = read_geometry(path)?;
    let (_, raw) = sidecar_paths(path, "proj");
    let n = geom.n_views() * geom.pixels_per_view();
    let data = from_f32le(&read(&raw)?, n, &raw)?;
    ProjectionSet::from_data(geom, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GaussianHeader {
    count: usize,
    fields: Vec<String>,
    dtype: String,
    /// Stored `rho` is the pre-activation value; density is its softplus.
    rho_activation: String,
}

/// Writes `<stem>.gs.json` and `<stem>.gs.raw` with 11 floats per primitive.
pub fn write_gaussians(path: &Path, set: &GaussianSet) -> Result<PathBuf> {
    let (json, raw) = sidecar_paths(path, "gs");
    let h = GaussianHeader {
        count: set.len(),
        fields: GS_FIELDS.iter().map(|s| s.to_string()).collect(),
        dtype: "f32le".into(),
        rho_activation: "softplus".into(),
    };
    let flat: Vec<f64> = set
        .primitives
        .iter()
        .flat_map(|g| {
            let mut r = Vec::with_capacity(GS_RECORD);
            r.extend_from_slice(&g.mu);
            r.extend_from_slice(&g.quat);
            r.extend_from_slice(&g.log_scale);
            r.push(g.rho_raw);
            r
        })
        .collect();
    write(&json, &to_json(&h)?)?;
    write(&raw, &to_f32le(&flat))?;
    Ok(json)
}

pub fn read_gaussians(path: &Path) -> Result<GaussianSet> {
    let (json, raw) = sidecar_paths(path, "gs");
    let h: GaussianHeader = serde_json::from_slice(&read(&json)?)?;
    if h.dtype != "f32le" || h.fields != GS_FIELDS {
        return Err(Error::Format(format!("{}: unsupported Gaussian layout", json.display())));
    }
    if h.rho_activation != "softplus" {
        return Err(Error::Format(format!("{}: unsupported rho activation {}", json.display(), h.rho_activation)));
    }
    let flat = from_f32le(&read(&raw)?, h.count * GS_RECORD, &raw)?;
    let primitives = flat
        .chunks_exact(GS_RECORD)
        .map(|r| GaussianPrimitive {
            mu: [r[0], r[1], r[2]],
            quat: [r[3], r[4], r[5], r[6]],
            log_scale: [r[7], r[8], r[9]],
            rho_raw: r[10],
        })
        .collect();
    Ok(GaussianSet::new(primitives))
}

pub fn write_phantom(path: &Path, spec: &PhantomSpec) -> Result<()> {
    write(path, &to_json(spec)?)
}

pub fn read_phantom(path: &Path) -> Result<PhantomSpec> {
    let spec: PhantomSpec = serde_json::from_slice(&read(path)?)?;
    spec.validate()?;
    Ok(spec)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &to_json(value)?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read(path)?)?)
}

/// 8-bit grayscale PNG with the linear window `[0, max] → [0, 255]`.
pub fn write_png(path: &Path, image: &[f64], width: usize, height: usize, max: f64) -> Result<()> {
    if image.len() != width * height {
        return Err(Error::arg("image buffer does not match its dimensions"));
    }
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let pixels: Vec<u8> = image.iter().map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8).collect();
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Format(format!("png: {e}")))?;
        w.write_image_data(&pixels).map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    write(path, &buf)
}

pub fn write_raw_f32(path: &Path, data: &[f64]) -> Result<()> {
    write(path, &to_f32le(data))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(read(path)?)))
}

/// Hashes of the JSON and raw halves of a sidecar pair.
pub fn sha256_sidecars(path: &Path, kind: &str) -> Result<Vec<(PathBuf, String)>> {
    let (json, raw) = sidecar_paths(path, kind);
    Ok(vec![(json.clone(), sha256_file(&json)?), (raw.clone(), sha256_file(&raw)?)])
}
