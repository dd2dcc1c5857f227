//! Self-describing binary container used for checkpoints and soft labels.
//!
//! Byte layout:
//!
//! ```text
//! offset  size  content
//! 0       8     magic "USLSBIN1"
//! 8       8     header length N, u64 little-endian
//! 16      N     header, UTF-8 JSON (see below)
//! 16+N    ...   payload: arrays back to back, little-endian
//! ```
//!
//! The header is `{"meta": <any JSON>, "arrays": [entry, ...]}` where each
//! entry is `{"name", "dtype", "shape", "offset", "len"}`; `dtype` is one of
//! `f32`, `f64`, `u8`, `offset` and `len` are in bytes relative to the start
//! of the payload, and elements are stored row-major in `shape` order.
//! Floats are written bit-for-bit, so a read returns exactly what was written.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_error, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"USLSBIN1";

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::F64(_) => "f64",
            ArrayData::U8(_) => "u8",
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U8(v) => out.extend_from_slice(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    arrays: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub arrays: Vec<Array>,
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { meta, arrays: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: ArrayData) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push(Array { name: name.into(), shape, data });
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.arrays.len());
        for a in &self.arrays {
            let offset = payload.len() as u64;
            a.data.write_le(&mut payload);
            entries.push(Entry {
                name: a.name.clone(),
                dtype: a.data.dtype().into(),
                shape: a.shape.clone(),
                offset,
                len: payload.len() as u64 - offset,
            });
        }
        let header = serde_json::to_vec(&Header { meta: self.meta.clone(), arrays: entries }).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    /// `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(format_error(path, "not a USLSBIN1 container"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| format_error(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..payload_start]).map_err(|e| format_error(path, e))?;
        let payload = &bytes[payload_start..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let (start, len) = (e.offset as usize, e.len as usize);
            let raw = start.checked_add(len).and_then(|end| payload.get(start..end)).ok_or_else(|| format_error(path, format!("array {} out of bounds", e.name)))?;
            let count: usize = e.shape.iter().product();
            let width = match e.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                "u8" => 1,
                other => return Err(format_error(path, format!("array {}: unknown dtype {other}", e.name))),
            };
            if count * width != len {
                return Err(format_error(path, format!("array {}: shape {:?} does not match {len} bytes", e.name, e.shape)));
            }
            let data = match width {
                4 => ArrayData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect()),
                8 => ArrayData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()),
                _ => ArrayData::U8(raw.to_vec()),
            };
            arrays.push(Array { name: e.name, shape: e.shape, data });
        }
        Ok(Self { meta: header.meta, arrays })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).at(dir)?;
        }
        fs::write(path, self.to_bytes()).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }

    pub fn f32(&self, name: &str, path: &Path) -> Result<&[f32]> {
        match self.get(name).map(|a| &a.data) {
            Some(ArrayData::F32(v)) => Ok(v),
            Some(_) => Err(format_error(path, format!("array {name} is not f32"))),
            None => Err(format_error(path, format!("missing array {name}"))),
        }
    }
}
