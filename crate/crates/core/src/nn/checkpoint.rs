//! Versioned checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "NCGPTCKP"
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON:
//!              { "meta": <any JSON>, "tensors": [ { "name", "dtype", "shape", "offset", "len" } ] }
//! payload      concatenated tensor data; offsets are relative to the payload start
//! ```
//!
//! `dtype` is `"f32le"` or `"f64le"`; `len` is in bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NCGPTCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    /// Free-form metadata: config echo, stage, training summary.
    pub meta: serde_json::Value,
    tensors: BTreeMap<String, Tensor>,
}

fn ckpt_err(msg: impl Into<String>) -> NowcastError {
    NowcastError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: String, tensor: Tensor) -> Result<()> {
        match tensor.dtype() {
            DType::F32 | DType::F64 => {}
            other => return Err(ckpt_err(format!("unsupported dtype {other:?} for {name}"))),
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.tensors.keys().any(|k| k.starts_with(prefix))
    }

    /// Adds all tensors of `other`, keeping this checkpoint's metadata.
    pub fn merge(&mut self, other: &Checkpoint) {
        for (k, v) in &other.tensors {
            self.tensors.insert(k.clone(), v.clone());
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let offset = payload.len();
            let flat = t.flatten_all()?;
            let dtype = match t.dtype() {
                DType::F32 => {
                    for v in flat.to_vec1::<f32>()? {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                    "f32le"
                }
                _ => {
                    for v in flat.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                    "f64le"
                }
            };
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: dtype.into(),
                shape: t.dims().to_vec(),
                offset,
                len: payload.len() - offset,
            });
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(ckpt_err(format!("{} is not a checkpoint", path.display())));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(ckpt_err(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| ckpt_err("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
        let payload = &bytes[header_end..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let data = payload
                .get(e.offset..e.offset + e.len)
                .ok_or_else(|| ckpt_err(format!("tensor {} runs past the payload", e.name)))?;
            let n: usize = e.shape.iter().product();
            let t = match e.dtype.as_str() {
                "f32le" if data.len() == 4 * n => {
                    let v: Vec<f32> = data
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Tensor::from_vec(v, e.shape.as_slice(), device)?
                }
                "f64le" if data.len() == 8 * n => {
                    let v: Vec<f64> = data
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Tensor::from_vec(v, e.shape.as_slice(), device)?
                }
                other => {
                    return Err(ckpt_err(format!(
                        "tensor {}: dtype {other} does not fit {} bytes for shape {:?}",
                        e.name,
                        data.len(),
                        e.shape
                    )))
                }
            };
            tensors.insert(e.name, t);
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }
}
