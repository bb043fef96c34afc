//! Named parameter storage and its on-disk format.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "NCPARAM1"
//! count    u32
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 each)
//!   payload  f64 × product(dims)
//! ```
//!
//! A JSON manifest written beside the binary lists each entry's name, shape
//! and payload byte offset so other implementations can reload the values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

const MAGIC: &[u8; 8] = b"NCPARAM1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub format: String,
    pub version: u32,
    pub entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| TensorError::Format(format!("missing parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }

    pub fn to_bytes(&self) -> (Vec<u8>, ParamManifest) {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut manifest = Vec::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            manifest.push(ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: out.len() as u64,
            });
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        (
            out,
            ParamManifest {
                format: "neurocam-params".into(),
                version: 1,
                entries: manifest,
            },
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(TensorError::Format("bad magic".into()));
        }
        let count = cur.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| TensorError::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let ndim = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(cur.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = cur.take(
                n.checked_mul(8)
                    .ok_or_else(|| TensorError::Format("size overflow".into()))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            store.insert(name, Tensor::new(shape, data)?);
        }
        if cur.pos != bytes.len() {
            return Err(TensorError::Format("trailing bytes".into()));
        }
        Ok(store)
    }

    /// Writes `path` and a JSON manifest at `path` with extension `json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (bytes, manifest) = self.to_bytes();
        fs::write(path, bytes)?;
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| TensorError::Format(e.to_string()))?;
        fs::write(path.with_extension("json"), json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TensorError::Format("truncated parameter file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
