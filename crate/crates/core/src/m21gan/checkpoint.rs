//! `M21C` checkpoint container.
//!
//! Little-endian layout: magic `M21C`, version u16, config fingerprint u32,
//! step u64, metadata length u32 + UTF-8 JSON, blob count u32, then per
//! blob: name length u16, name bytes, rank u8, extents u32 each, f32 data;
//! finally a CRC32 of every preceding byte.

use std::path::Path;

use super::ModelError;
use crate::diffcore::Tensor;

pub const MAGIC: &[u8; 4] = b"M21C";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: u32,
    pub step: u64,
    pub meta: String,
    pub blobs: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn blob(&self, name: &str) -> Option<&Tensor> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Result<Vec<u8>, ModelError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        let meta_len =
            u32::try_from(self.meta.len()).map_err(|_| ModelError::Checkpoint("metadata too large".into()))?;
        out.extend_from_slice(&meta_len.to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, t) in &self.blobs {
            let nl =
                u16::try_from(name.len()).map_err(|_| ModelError::Checkpoint(format!("blob name too long: {name}")))?;
            out.extend_from_slice(&nl.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ModelError::Checkpoint("bad magic, not an M21C checkpoint".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        if bytes.len() < 4 {
            return Err(ModelError::Checkpoint("truncated".into()));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(ModelError::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader {
            bytes: body,
            pos: r.pos,
        };
        let fingerprint = u32::from_le_bytes(r.array()?);
        let step = u64::from_le_bytes(r.array()?);
        let meta_len = u32::from_le_bytes(r.array()?) as usize;
        let meta = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| ModelError::Checkpoint("metadata is not UTF-8".into()))?;
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut blobs = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let nl = u16::from_le_bytes(r.array()?) as usize;
            let name = String::from_utf8(r.take(nl)?.to_vec())
                .map_err(|_| ModelError::Checkpoint("blob name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(r.array()?) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| ModelError::Checkpoint(format!("blob {name} is too large")))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
            blobs.push((name, t));
        }
        if r.pos != body.len() {
            return Err(ModelError::Checkpoint("trailing bytes after last blob".into()));
        }
        Ok(Checkpoint {
            fingerprint,
            step,
            meta,
            blobs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}
