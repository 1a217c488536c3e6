//! Binary embedding cache.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"IDNTCACH" | version: u16 | dtype: u8 | dim: u32 | count: u64
//! count × ( key_len: u16 | key bytes | dim × value )
//! ```
//!
//! `dtype` 0 stores values as f32, 1 as f64.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"IDNTCACH";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 + 1 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            t => Err(Error::Corrupt(format!("unknown dtype tag {t}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Keyed rows of a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    pub dim: usize,
    pub dtype: DType,
    pub entries: Vec<(String, Vec<f64>)>,
}

impl EmbeddingCache {
    pub fn new(dim: usize, dtype: DType) -> Self {
        Self {
            dim,
            dtype,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, key: impl Into<String>, row: Vec<f64>) -> Result<()> {
        let key = key.into();
        if row.len() != self.dim {
            return Err(Error::Argument(format!(
                "row {key:?} has dim {}, cache dim is {}",
                row.len(),
                self.dim
            )));
        }
        if key.len() > u16::MAX as usize {
            return Err(Error::Argument(format!("key of {} bytes is too long", key.len())));
        }
        self.entries.push((key, row));
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.entries.len() * (16 + self.dim * 4));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype.tag());
        let dim = u32::try_from(self.dim).map_err(|_| Error::Argument("dim exceeds u32".into()))?;
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (key, row) in &self.entries {
            if row.len() != self.dim {
                return Err(Error::Argument(format!(
                    "row {key:?} has dim {}, cache dim is {}",
                    row.len(),
                    self.dim
                )));
            }
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for &v in row {
                match self.dtype {
                    DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corrupt(format!("file of {} bytes has no header", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported version {version}")));
        }
        let dtype = DType::from_tag(bytes[10])?;
        let dim = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[15..23].try_into().unwrap());

        let mut pos = HEADER_LEN;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| Error::Corrupt(format!("payload truncated at byte {pos}")))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        let mut entries = Vec::new();
        for _ in 0..count {
            let klen = take(2)?;
            let klen = u16::from_le_bytes([klen[0], klen[1]]) as usize;
            let key = std::str::from_utf8(take(klen)?)
                .map_err(|_| Error::Corrupt("key is not utf-8".into()))?
                .to_owned();
            let raw = take(dim * dtype.width())?;
            let row = match dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            };
            entries.push((key, row));
        }
        if pos != bytes.len() {
            return Err(Error::Corrupt(format!(
                "header declares {count} records but {} trailing bytes remain",
                bytes.len() - pos
            )));
        }
        Ok(Self { dim, dtype, entries })
    }
}

/// Writes rows to a cache file. All rows must share one dimension.
pub fn write_cache(entries: &[(String, Vec<f64>)], dtype: DType, path: impl AsRef<Path>) -> Result<()> {
    let dim = entries.first().map_or(0, |(_, r)| r.len());
    let mut cache = EmbeddingCache::new(dim, dtype);
    for (k, r) in entries {
        cache.push(k.clone(), r.clone())?;
    }
    cache.save(path)
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<EmbeddingCache> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingCache::from_bytes(&bytes)
}

impl EmbeddingCache {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}
