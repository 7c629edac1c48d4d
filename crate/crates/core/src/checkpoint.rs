//! Binary checkpoint: magic, format version, a JSON header, then named `f64`
//! tensors stored as little-endian bit patterns so values round-trip exactly.
//!
//! ```text
//! "PMCK" | u32 version | u64 header_len | header JSON
//! u64 count | count × (u32 name_len | name | u32 ndim | ndim × u64 | numel × f64)
//! ```

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PMCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("json value serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |msg: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| fail("truncated magic"))? != MAGIC {
            return Err(fail("not a checkpoint (bad magic)"));
        }
        let version = r.u32().ok_or_else(|| fail("truncated version"))?;
        if version != FORMAT_VERSION {
            return Err(fail(&format!("unsupported format version {version}")));
        }
        let hlen = r.u64().ok_or_else(|| fail("truncated header length"))? as usize;
        let header = r.take(hlen).ok_or_else(|| fail("truncated header"))?;
        let header: Value =
            serde_json::from_slice(header).map_err(|e| fail(&format!("header: {e}")))?;
        let count = r.u64().ok_or_else(|| fail("truncated tensor count"))?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let nlen = r.u32().ok_or_else(|| fail("truncated name"))? as usize;
            let name = r.take(nlen).ok_or_else(|| fail("truncated name"))?;
            let name = String::from_utf8(name.to_vec()).map_err(|_| fail("name is not utf-8"))?;
            let ndim = r.u32().ok_or_else(|| fail("truncated shape"))? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| fail("truncated shape"))?;
            let numel: usize = shape.iter().product();
            let data = (0..numel)
                .map(|_| r.u64().map(f64::from_bits))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| fail(&format!("truncated data for `{name}`")))?;
            let t = Tensor::new(&shape, data).map_err(|e| fail(&format!("`{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(fail("trailing bytes"));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Header field lookup with a checkpoint error when absent.
    pub fn field<T: serde::de::DeserializeOwned>(&self, key: &str, path: &Path) -> Result<T> {
        let v = self
            .header
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                msg: format!("header is missing `{key}`"),
            })?;
        serde_json::from_value(v).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!("header field `{key}`: {e}"),
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}
