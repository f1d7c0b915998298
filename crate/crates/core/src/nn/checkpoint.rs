//! Parameter checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "TMPCKPT1"
//! n_meta     u32      then n_meta x (u32 len, key bytes, u32 len, value bytes)
//! n_tensors  u32      then n_tensors x (u32 len, name bytes, u32 ndim, ndim x u64 dim)
//! n_values   u64      then n_values x f64
//! ```
//!
//! Tensors are stored back to back in table order; `n_values` equals the sum
//! of their element counts.

use std::collections::BTreeMap;
use std::path::Path;

use super::params::{ParamEntry, ParamTable};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TMPCKPT1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub table: ParamTable,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.values.len() * 8);
        out.extend_from_slice(MAGIC);
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.table.entries.len() as u32).to_le_bytes());
        for e in &self.table.entries {
            put_str(&mut out, &e.name);
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let mut table = ParamTable::default();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            table.alloc(name, &shape);
        }
        let n = r.u64()? as usize;
        if n != table.total() {
            return Err(Error::format(path, format!("payload holds {n} values, shape table needs {}", table.total())));
        }
        let payload = r.take(n.checked_mul(8).ok_or_else(|| Error::format(path, "payload size overflow"))?)?;
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after payload"));
        }
        Ok(Self { meta, table, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn meta_str(&self, key: &str, path: &Path) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format(path, format!("missing metadata key `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let s = self.meta_str(key, path)?;
        s.parse()
            .map_err(|_| Error::format(path, format!("metadata `{key}` has bad value `{s}`")))
    }

    /// Fails unless the stored shape table matches `expected` exactly.
    pub fn check_table(&self, expected: &ParamTable, path: &Path) -> Result<()> {
        if self.table.entries.len() != expected.entries.len() {
            return Err(Error::Shape(format!(
                "{}: {} tensors stored, architecture has {}",
                path.display(),
                self.table.entries.len(),
                expected.entries.len()
            )));
        }
        for (a, b) in self.table.entries.iter().zip(&expected.entries) {
            let ParamEntry { name, shape, .. } = a;
            if name != &b.name || shape != &b.shape {
                return Err(Error::Shape(format!(
                    "{}: tensor `{name}` {shape:?} does not match `{}` {:?}",
                    path.display(),
                    b.name,
                    b.shape
                )));
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format(self.path, "metadata is not UTF-8"))
    }
}
