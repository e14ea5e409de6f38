//! The MRVL embedding file.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      4 bytes   "MRVL"
//! version    u32       1
//! dim        u32
//! count      u32
//! count x {
//!     id_len u16
//!     id     id_len bytes of UTF-8
//!     kind   u8        0 = text, 1 = image
//!     values dim x f32
//! }
//! meta_len   u32
//! metadata   meta_len bytes, UTF-8 JSON object of string values
//! ```
//!
//! Nothing may follow the metadata.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Embedding;

pub const MAGIC: [u8; 4] = *b"MRVL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Text,
    Image,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Text => 0,
            Kind::Image => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Kind::Text),
            1 => Ok(Kind::Image),
            other => Err(Error::BadKind(other)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub id: String,
    pub kind: Kind,
    pub values: Vec<f32>,
}

impl Entry {
    pub fn embedding(&self) -> Result<Embedding> {
        Embedding::from_f32(&self.values)
    }
}

/// Ordered single-precision vectors with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDataset {
    dim: u32,
    entries: Vec<Entry>,
    pub metadata: BTreeMap<String, String>,
}

impl EmbeddingDataset {
    pub fn new(dim: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::BadDimension(0));
        }
        Ok(Self {
            dim,
            entries: Vec::new(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, id: impl Into<String>, kind: Kind, values: Vec<f32>) -> Result<()> {
        let id = id.into();
        if values.len() != self.dim() {
            return Err(Error::DimMismatch {
                left: self.dim(),
                right: values.len(),
            });
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::InvariantViolation(format!("id longer than {} bytes", u16::MAX)));
        }
        if self.entries.iter().any(|e| e.id == id) {
            return Err(Error::DuplicateId(id));
        }
        self.entries.push(Entry { id, kind, values });
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Embedding for `id`, which must have the given kind.
    pub fn embedding(&self, id: &str, kind: Kind) -> Result<Embedding> {
        let e = self.get(id).ok_or_else(|| Error::MissingId(id.to_string()))?;
        if e.kind != kind {
            return Err(Error::Malformed(format!("{id} is {:?}, expected {kind:?}", e.kind)));
        }
        e.embedding()
    }

    /// Image entries in file order.
    pub fn images(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(|e| e.kind == Kind::Image)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.values.len() != self.dim() {
                return Err(Error::InvariantViolation(format!(
                    "{} has {} values, dataset dim is {}",
                    e.id,
                    e.values.len(),
                    self.dim
                )));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::InvariantViolation("more than u32::MAX entries".into()))?;
        let meta = serde_json::to_vec(&self.metadata)?;
        let meta_len = u32::try_from(meta.len())
            .map_err(|_| Error::InvariantViolation("metadata too large".into()))?;
        let per_entry: usize = self.entries.iter().map(|e| 3 + e.id.len() + 4 * self.dim()).sum();
        let mut out = Vec::with_capacity(20 + per_entry + meta.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.id.len() as u16).to_le_bytes());
            out.extend_from_slice(e.id.as_bytes());
            out.push(e.kind.code());
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&meta_len.to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = r.u32("dim")?;
        if dim == 0 {
            return Err(Error::BadDimension(0));
        }
        let count = r.u32("count")? as usize;
        // each entry needs at least 3 + 4 * dim bytes
        let min_entry = 3 + 4 * dim as usize;
        if count.saturating_mul(min_entry) > r.remaining() {
            return Err(Error::Truncated("entries"));
        }
        let mut ds = Self::new(dim)?;
        let mut seen = HashSet::with_capacity(count);
        for _ in 0..count {
            let id_len = r.u16("id length")? as usize;
            let id = std::str::from_utf8(r.take(id_len, "id")?)
                .map_err(|_| Error::Malformed("id is not UTF-8".into()))?
                .to_string();
            let kind = Kind::from_code(r.take(1, "kind")?[0])?;
            let raw = r.take(4 * dim as usize, "vector")?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            ds.entries.push(Entry { id, kind, values });
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = r.take(meta_len, "metadata")?;
        ds.metadata = serde_json::from_slice(meta)
            .map_err(|e| Error::Malformed(format!("metadata: {e}")))?;
        if r.remaining() > 0 {
            return Err(Error::TrailingBytes(r.remaining()));
        }
        Ok(ds)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_dataset(ds: &EmbeddingDataset, path: &Path) -> Result<()> {
    let bytes = ds.to_bytes()?;
    let tmp = path.with_extension("mrvl.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<EmbeddingDataset> {
    EmbeddingDataset::from_bytes(&fs::read(path)?)
}
