//! Versioned binary container for named `f64` tensors plus a JSON header.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"CAMNOISE"            8-byte magic
//! u32                    format version
//! u64                    header length in bytes
//! [u8; header length]    UTF-8 JSON: {"kind", "meta", "tensors": [{"name", "shape"}]}
//! f64 * Σ numel(shape)   tensor data, concatenated in header order
//! ```

use std::fs;
use std::path::Path;

use camnoise_tensor::{numel, Param};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CAMNOISE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(TensorInfo, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Checkpoint {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        assert_eq!(numel(shape), data.len(), "tensor data does not match its shape");
        self.tensors.push((
            TensorInfo {
                name: name.into(),
                shape: shape.to_vec(),
            },
            data,
        ));
    }

    pub fn push_params(&mut self, params: &[Param]) {
        for p in params {
            self.push(p.name(), &p.shape(), p.get().to_vec());
        }
    }

    pub fn get(&self, name: &str) -> Option<&(TensorInfo, Vec<f64>)> {
        self.tensors.iter().find(|(i, _)| i.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(i, _)| i.name.as_str())
    }

    /// Fetches a tensor, checking its shape.
    pub fn take(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let (info, data) = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name:?} missing")))?;
        if info.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has shape {:?}, model expects {shape:?}",
                info.shape
            )));
        }
        Ok(data)
    }

    /// Copies stored values into `params`, failing on any missing name or
    /// shape mismatch.
    pub fn load_params(&self, params: &[Param]) -> Result<()> {
        for p in params {
            let data = self.take(p.name(), &p.shape())?;
            p.set_data(data.to_vec());
        }
        Ok(())
    }

    /// Rejects tensors not claimed by any of the given prefixes or names.
    pub fn ensure_only(&self, expected: &[String]) -> Result<()> {
        for n in self.names() {
            if !expected.iter().any(|e| e == n) {
                return Err(Error::Checkpoint(format!("unexpected tensor {n:?} in checkpoint")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(i, _)| i.clone()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let data_len: usize = self.tensors.iter().map(|(_, d)| d.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + json.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, d) in &self.tensors {
            for v in d {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut data = &body[hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in header.tensors {
            let n = numel(&info.shape);
            if data.len() < n * 8 {
                return Err(Error::Checkpoint(format!("truncated data for tensor {:?}", info.name)));
            }
            let values = data[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[n * 8..];
            tensors.push((info, values));
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("bin.tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn meta_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        serde_json::from_value(self.meta.clone()).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let mut c = Checkpoint::new("test", serde_json::json!({"a": 1}));
        c.push("x/w", &[2, 3], vec![1.0, -2.0, 3.5, 0.0, f64::MIN_POSITIVE, 1e300]);
        c.push("x/b", &[0], vec![]);
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn shape_mismatch_fails_loudly() {
        let mut c = Checkpoint::new("test", serde_json::Value::Null);
        c.push("w", &[2], vec![1.0, 2.0]);
        let p = Param::new("w", vec![0.0; 3], &[3]);
        assert!(matches!(c.load_params(&[p]), Err(Error::Checkpoint(_))));
        let q = Param::new("v", vec![0.0; 2], &[2]);
        assert!(matches!(c.load_params(&[q]), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corrupt_files_rejected() {
        assert!(Checkpoint::from_bytes(b"NOTACKPT\x01\x00\x00\x00").is_err());
        let c = Checkpoint::new("k", serde_json::Value::Null);
        let mut b = c.to_bytes();
        b.push(0);
        assert!(Checkpoint::from_bytes(&b).is_err());
    }
}
