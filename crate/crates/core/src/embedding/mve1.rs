//! MVE1 embedding interchange file.
//!
//! ```text
//! magic    4 bytes  "MVE1"
//! version  u32      1, or 2 when a backbone tag follows
//! C        u32      channels per record
//! count    u32      number of records
//! [v2]     u32 tag length, UTF-8 backbone tag
//! records  count × (u32 key length, UTF-8 "instance_id/view_id", C × f32)
//! ```
//!
//! All integers and floats are little-endian. The instance id may itself
//! contain '/'; the view id is the text after the last one.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use super::EmbeddingError;

pub const MVE1_MAGIC: [u8; 4] = *b"MVE1";
pub const MVE1_VERSION: u32 = 1;
pub const MVE1_VERSION_TAGGED: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub instance_id: String,
    pub view_id: u32,
    pub values: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn key(&self) -> String {
        format!("{}/{}", self.instance_id, self.view_id)
    }
}

/// Splits `"instance_id/view_id"` at the last '/'.
pub fn split_key(key: &str) -> Option<(&str, u32)> {
    let (id, view) = key.rsplit_once('/')?;
    if id.is_empty() || view.is_empty() || !view.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((id, view.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub channels: u32,
    /// Empty tags are written as version 1.
    pub backbone_tag: String,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingFile {
    pub fn new(channels: u32, backbone_tag: impl Into<String>) -> Self {
        EmbeddingFile {
            channels,
            backbone_tag: backbone_tag.into(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: EmbeddingRecord) -> Result<(), EmbeddingError> {
        if record.values.len() != self.channels as usize {
            return Err(EmbeddingError::ChannelMismatch {
                expected: self.channels as usize,
                actual: record.values.len(),
            });
        }
        self.records.push(record);
        Ok(())
    }

    pub fn version(&self) -> u32 {
        if self.backbone_tag.is_empty() {
            MVE1_VERSION
        } else {
            MVE1_VERSION_TAGGED
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&MVE1_MAGIC)?;
        out.write_all(&self.version().to_le_bytes())?;
        out.write_all(&self.channels.to_le_bytes())?;
        out.write_all(&(self.records.len() as u32).to_le_bytes())?;
        if !self.backbone_tag.is_empty() {
            out.write_all(&(self.backbone_tag.len() as u32).to_le_bytes())?;
            out.write_all(self.backbone_tag.as_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.channels as usize * 4);
        for r in &self.records {
            let key = r.key();
            out.write_all(&(key.len() as u32).to_le_bytes())?;
            out.write_all(key.as_bytes())?;
            buf.clear();
            for v in &r.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        out.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn write(&self, path: &Path) -> Result<(), EmbeddingError> {
        let f = std::fs::File::create(path).map_err(|e| EmbeddingError::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| EmbeddingError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, EmbeddingError> {
        let bytes = std::fs::read(path).map_err(|e| EmbeddingError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MVE1_MAGIC {
            return Err(cur.corrupt(0, "bad magic"));
        }
        let version_at = cur.pos;
        let version = cur.u32()?;
        if version != MVE1_VERSION && version != MVE1_VERSION_TAGGED {
            return Err(cur.corrupt(version_at, format!("unsupported version {version}")));
        }
        let channels_at = cur.pos;
        let channels = cur.u32()?;
        if channels == 0 {
            return Err(cur.corrupt(channels_at, "zero channels"));
        }
        let count = cur.u32()?;
        let backbone_tag = if version == MVE1_VERSION_TAGGED {
            let n = cur.u32()? as usize;
            cur.utf8(n)?.to_string()
        } else {
            String::new()
        };
        let c = channels as usize;
        let mut records = Vec::with_capacity((count as usize).min(bytes.len() / (4 + 4 * c)));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let key_at = cur.pos;
            let n = cur.u32()? as usize;
            let key = cur.utf8(n)?;
            let (instance_id, view_id) = split_key(key)
                .ok_or_else(|| cur.corrupt(key_at, format!("malformed key {key:?}")))?;
            if !seen.insert((instance_id.to_string(), view_id)) {
                return Err(EmbeddingError::DuplicateKey(key.to_string()));
            }
            let instance_id = instance_id.to_string();
            let values_at = cur.pos;
            let raw = cur.take(4 * c)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(cur.corrupt(values_at + 4 * i, "non-finite value"));
            }
            records.push(EmbeddingRecord {
                instance_id,
                view_id,
                values,
            });
        }
        if cur.pos != bytes.len() {
            return Err(cur.corrupt(cur.pos, "trailing bytes"));
        }
        Ok(EmbeddingFile {
            channels,
            backbone_tag,
            records,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn corrupt(&self, offset: usize, reason: impl Into<String>) -> EmbeddingError {
        EmbeddingError::CorruptFile {
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbeddingError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(self.pos, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, EmbeddingError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str, EmbeddingError> {
        let at = self.pos;
        let b = self.take(n)?;
        std::str::from_utf8(b).map_err(|_| self.corrupt(at, "invalid UTF-8"))
    }
}
