//! Binary tensor files and the exposure-stack manifest.
//!
//! Tensor file layout, all integers little-endian:
//!
//! ```text
//! bytes 0..4   magic "DMDT"
//! bytes 4..8   format version (u32, currently 1)
//! bytes 8..12  header length in bytes (u32)
//! then         UTF-8 JSON header
//! then         payload: f32 values, little-endian, row-major
//! ```
//!
//! The JSON header is `{"dtype":"f32","shape":[...],"order":"row-major",
//! "meta":{...}}`. `meta` carries free-form provenance (seeds, units,
//! scales) and is preserved verbatim on read. Payloads are always f32;
//! higher-precision arrays are narrowed on write.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Real;

pub const MAGIC: &[u8; 4] = b"DMDT";
pub const VERSION: u32 = 1;

/// Free-form metadata map; `BTreeMap` keeps serialization order stable.
pub type Meta = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    order: String,
    #[serde(default)]
    meta: Meta,
}

/// Writes a row-major f32 tensor with attached metadata.
pub fn write_tensor(path: impl AsRef<Path>, tensor: &ArrayD<f32>, meta: Meta) -> Result<()> {
    let header = Header {
        dtype: "f32".to_string(),
        shape: tensor.shape().to_vec(),
        order: "row-major".to_string(),
        meta,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    // `as_standard_layout` is a no-op for freshly built arrays and copies
    // only when given a transposed view.
    let std_layout = tensor.as_standard_layout();
    let mut buf = Vec::with_capacity(std_layout.len() * 4);
    for &v in std_layout.as_slice().expect("standard layout has a slice") {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Reads a tensor file, validating magic, version, dtype, order and
/// payload size.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<(ArrayD<f32>, Meta)> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::TensorFormat(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::TensorFormat(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    r.read_exact(&mut word)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.dtype != "f32" {
        return Err(Error::TensorFormat(format!(
            "{}: unsupported dtype {:?}",
            path.display(),
            header.dtype
        )));
    }
    if header.order != "row-major" {
        return Err(Error::TensorFormat(format!(
            "{}: unsupported order {:?}",
            path.display(),
            header.order
        )));
    }

    let count: usize = header.shape.iter().product();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != count * 4 {
        return Err(Error::TensorFormat(format!(
            "{}: payload is {} bytes, shape {:?} needs {}",
            path.display(),
            payload.len(),
            header.shape,
            count * 4
        )));
    }
    let mut data = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    let arr = ArrayD::from_shape_vec(IxDyn(&header.shape), data)
        .map_err(|e| Error::TensorFormat(format!("{}: {e}", path.display())))?;
    Ok((arr, header.meta))
}

/// Narrows a generic array to the on-disk f32 payload precision.
pub fn to_f32<T: Real, D: ndarray::Dimension>(a: &ndarray::Array<T, D>) -> ArrayD<f32> {
    a.mapv(|v| v.to_f64_lossy() as f32).into_dyn()
}

/// Widens a loaded payload into the requested scalar type.
pub fn from_f32<T: Real>(a: &ArrayD<f32>) -> ArrayD<T> {
    a.mapv(|v| T::of(v as f64))
}

/// One frame of an exposure stack on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFrame {
    /// Tensor file path, relative to the manifest's directory.
    pub path: String,
    /// Exposure time in seconds.
    pub exposure_s: f64,
}

/// JSON manifest tying an exposure stack's per-frame tensor files to
/// their exposure times.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackManifest {
    pub frames: Vec<ManifestFrame>,
}

impl StackManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        Ok(serde_json::from_reader(r)?)
    }
}

/// Convenience: `meta` map from string key/value pairs.
pub fn meta_kv(pairs: &[(&str, serde_json::Value)]) -> Meta {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}
