//! Binary index file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "RAGKIDX\0"
//! version      u32
//! provider_id  str
//! dim          u32
//! count        u64
//! entries      count × { unit_id str, kind u8, has_parent u8, [parent str],
//!                        source_id str, text str, word_count u64 }
//! vectors      count × dim × f32
//! checksum     32 bytes, SHA-256 of everything above
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Index, IndexEntry, IndexError, Result, UnitKind};
use crate::embedding::EmbeddingVector;

pub const MAGIC: &[u8; 8] = b"RAGKIDX\0";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| IndexError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| IndexError::Corrupt("invalid UTF-8 in string field".into()))
    }
}

impl Index {
    /// Serializes the index. Identical indexes produce identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.str(&self.provider_id);
        w.u32(self.dim as u32);
        w.u64(self.entries.len() as u64);
        for e in &self.entries {
            w.str(&e.unit_id);
            w.u8(e.kind.code());
            match &e.parent_para_id {
                Some(p) => {
                    w.u8(1);
                    w.str(p);
                }
                None => w.u8(0),
            }
            w.str(&e.source_id);
            w.str(&e.text);
            w.u64(e.word_count as u64);
        }
        for e in &self.entries {
            for v in e.vector.values() {
                w.0.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(IndexError::IncompatibleIndex("bad magic bytes".into()));
        }
        let mut r = Reader {
            buf: bytes,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::IncompatibleIndex(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        if bytes.len() < r.pos + CHECKSUM_LEN {
            return Err(IndexError::Corrupt("file too short".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(IndexError::ChecksumMismatch);
        }
        r.buf = body;

        let provider_id = r.str()?;
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let mut meta = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let unit_id = r.str()?;
            let code = r.u8()?;
            let kind = UnitKind::from_code(code)
                .ok_or_else(|| IndexError::Corrupt(format!("unknown unit kind code {code}")))?;
            let parent_para_id = match r.u8()? {
                0 => None,
                1 => Some(r.str()?),
                f => return Err(IndexError::Corrupt(format!("bad parent flag {f}"))),
            };
            let source_id = r.str()?;
            let text = r.str()?;
            let word_count = r.u64()? as usize;
            meta.push((unit_id, kind, parent_para_id, source_id, text, word_count));
        }
        let mut entries = Vec::with_capacity(count);
        for (unit_id, kind, parent_para_id, source_id, text, word_count) in meta {
            let values = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            entries.push(IndexEntry {
                unit_id,
                kind,
                parent_para_id,
                source_id,
                vector: EmbeddingVector::from_stored(values, provider_id.clone()),
                text,
                word_count,
            });
        }
        if r.pos != body.len() {
            return Err(IndexError::Corrupt(format!(
                "{} trailing bytes",
                body.len() - r.pos
            )));
        }
        Index::from_entries(provider_id, dim, entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
