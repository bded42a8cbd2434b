//! Fixture archive: a directory holding `manifest.json` plus little-endian,
//! row-major tensor blobs.
//!
//! ```json
//! {
//!   "format": "corrseg-fixture",
//!   "version": 1,
//!   "meta": { ... free-form ... },
//!   "tensors": [
//!     { "name": "clip/<digest>/q", "shape": [21, 21, 64], "dtype": "f32",
//!       "file": "tensors.bin", "byte_offset": 0 }
//!   ]
//! }
//! ```
//!
//! `dtype` is `"f32"` or `"u8"`. Entries are written in name order so the
//! same contents always produce the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARCHIVE_FORMAT: &str = "corrseg-fixture";
const BLOB_FILE: &str = "tensors.bin";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
    pub byte_offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    #[serde(default)]
    meta: Map<String, Value>,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    fn dtype(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::U8(_) => "u8",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

/// Named tensors plus free-form JSON metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    pub meta: Map<String, Value>,
    tensors: BTreeMap<String, Tensor>,
}

fn dtype_size(dtype: &str) -> Option<usize> {
    match dtype {
        "f32" => Some(4),
        "u8" => Some(1),
        _ => None,
    }
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<()> {
        let name = name.into();
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::Archive(format!(
                "tensor `{name}`: shape {shape:?} holds {count} values, got {}",
                data.len()
            )));
        }
        if let TensorData::F32(v) = &data {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("tensor `{name}`")));
            }
        }
        self.tensors.insert(name, Tensor { shape, data });
        Ok(())
    }

    pub fn insert_f32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        self.insert(name, shape, TensorData::F32(data))
    }

    pub fn insert_u8(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<u8>) -> Result<()> {
        self.insert(name, shape, TensorData::U8(data))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn f32(&self, name: &str) -> Result<(&[usize], &[f32])> {
        match self.tensors.get(name) {
            Some(Tensor {
                shape,
                data: TensorData::F32(v),
            }) => Ok((shape, v)),
            Some(_) => Err(Error::Archive(format!("tensor `{name}` is not f32"))),
            None => Err(Error::FixtureMissing(name.to_string())),
        }
    }

    pub fn u8(&self, name: &str) -> Result<(&[usize], &[u8])> {
        match self.tensors.get(name) {
            Some(Tensor {
                shape,
                data: TensorData::U8(v),
            }) => Ok((shape, v)),
            Some(_) => Err(Error::Archive(format!("tensor `{name}` is not u8"))),
            None => Err(Error::FixtureMissing(name.to_string())),
        }
    }

    /// Merge `other` into `self`; entries in `other` win.
    pub fn extend(&mut self, other: TensorArchive) {
        self.tensors.extend(other.tensors);
        self.meta.extend(other.meta);
    }

    /// Write to `dir`. An existing non-empty directory is refused unless
    /// `force` is set.
    pub fn write(&self, dir: impl AsRef<Path>, force: bool) -> Result<()> {
        let dir = dir.as_ref();
        if dir.exists() {
            let non_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
            if non_empty && !force {
                return Err(Error::Archive(format!(
                    "output directory {} exists and is not empty (use --force)",
                    dir.display()
                )));
            }
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                dtype: t.data.dtype().to_string(),
                file: BLOB_FILE.to_string(),
                byte_offset: blob.len() as u64,
            });
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| blob.extend_from_slice(&x.to_le_bytes())),
                TensorData::U8(v) => blob.extend_from_slice(v),
            }
            while blob.len() % 4 != 0 {
                blob.push(0);
            }
        }
        let manifest = Manifest {
            format: ARCHIVE_FORMAT.to_string(),
            version: VERSION,
            meta: self.meta.clone(),
            tensors: entries,
        };
        let blob_path = dir.join(BLOB_FILE);
        fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let value: Value = serde_json::from_str(&text)?;
        validate_manifest(&value)?;
        let manifest: Manifest = serde_json::from_value(value)?;

        let mut blobs: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
        let mut archive = TensorArchive {
            meta: manifest.meta.clone(),
            tensors: BTreeMap::new(),
        };
        for e in &manifest.tensors {
            if !blobs.contains_key(e.file.as_str()) {
                let p = dir.join(&e.file);
                let bytes = fs::read(&p).map_err(|err| Error::io(&p, err))?;
                blobs.insert(e.file.as_str(), bytes);
            }
            let bytes = &blobs[e.file.as_str()];
            let count: usize = e.shape.iter().product();
            let size = dtype_size(&e.dtype).expect("validated dtype");
            let start = e.byte_offset as usize;
            let end = start + count * size;
            if end > bytes.len() {
                return Err(Error::Archive(format!(
                    "tensor `{}` spans bytes {start}..{end} but {} holds {}",
                    e.name,
                    e.file,
                    bytes.len()
                )));
            }
            let raw = &bytes[start..end];
            let data = match e.dtype.as_str() {
                "f32" => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                ),
                _ => TensorData::U8(raw.to_vec()),
            };
            archive.insert(e.name.clone(), e.shape.clone(), data)?;
        }
        Ok(archive)
    }
}

/// Check a parsed manifest against the documented schema.
pub fn validate_manifest(value: &Value) -> Result<()> {
    let bad = |msg: String| Err(Error::Archive(msg));
    let obj = match value.as_object() {
        Some(o) => o,
        None => return bad("manifest is not a JSON object".into()),
    };
    for key in obj.keys() {
        if !matches!(key.as_str(), "format" | "version" | "meta" | "tensors") {
            return bad(format!("unknown manifest key `{key}`"));
        }
    }
    if obj.get("format").and_then(Value::as_str) != Some(ARCHIVE_FORMAT) {
        return bad(format!("manifest `format` must be \"{ARCHIVE_FORMAT}\""));
    }
    if obj.get("version").and_then(Value::as_u64) != Some(VERSION as u64) {
        return bad(format!("manifest `version` must be {VERSION}"));
    }
    if let Some(meta) = obj.get("meta") {
        if !meta.is_object() {
            return bad("manifest `meta` must be an object".into());
        }
    }
    let tensors = match obj.get("tensors").and_then(Value::as_array) {
        Some(t) => t,
        None => return bad("manifest `tensors` must be an array".into()),
    };
    let mut seen = std::collections::HashSet::new();
    for (i, t) in tensors.iter().enumerate() {
        let e: ManifestEntry =
            serde_json::from_value(t.clone()).map_err(|err| Error::Archive(format!("tensor entry {i}: {err}")))?;
        if !seen.insert(e.name.clone()) {
            return bad(format!("duplicate tensor name `{}`", e.name));
        }
        if dtype_size(&e.dtype).is_none() {
            return bad(format!("tensor `{}` has unsupported dtype `{}`", e.name, e.dtype));
        }
        if e.file.is_empty() || e.file.contains('/') || e.file.contains('\\') || e.file.starts_with('.') {
            return bad(format!("tensor `{}` names an invalid blob file `{}`", e.name, e.file));
        }
    }
    Ok(())
}
