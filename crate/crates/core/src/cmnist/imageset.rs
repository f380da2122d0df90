//! `M21I` container for generated images (one channel count per file).
//!
//! ```text
//! "M21I" | version u16 | count u32 | H u16 | W u16 | channels u8
//! count x H*W*channels bytes
//! crc32 u32   (IEEE, over every preceding byte)
//! ```

use std::path::Path;

use super::CmnistError;

pub const MAGIC: &[u8; 4] = b"M21I";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 2 + 2 + 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSet {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub images: Vec<Vec<u8>>,
}

impl ImageSet {
    pub fn new(height: usize, width: usize, channels: usize, images: Vec<Vec<u8>>) -> Result<Self, CmnistError> {
        if !matches!(channels, 1 | 3) {
            return Err(CmnistError::Invalid(format!(
                "image sets hold 1 or 3 channels, not {channels}"
            )));
        }
        if height > u16::MAX as usize || width > u16::MAX as usize {
            return Err(CmnistError::BadDimensions {
                rows: height,
                cols: width,
            });
        }
        let len = height * width * channels;
        if let Some((i, im)) = images.iter().enumerate().find(|(_, im)| im.len() != len) {
            return Err(CmnistError::Invalid(format!(
                "image {i} has {} bytes, expected {len}",
                im.len()
            )));
        }
        Ok(ImageSet {
            height,
            width,
            channels,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn slices(&self) -> Vec<&[u8]> {
        self.images.iter().map(Vec::as_slice).collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>, CmnistError> {
        let count = u32::try_from(self.images.len()).map_err(|_| CmnistError::CountOverflow {
            requested: self.images.len(),
            available: u32::MAX as usize,
        })?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.images.iter().map(Vec::len).sum::<usize>() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        out.push(self.channels as u8);
        for im in &self.images {
            out.extend_from_slice(im);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CmnistError> {
        let truncated = |offset: usize, needed: usize| CmnistError::Truncated {
            what: "M21I",
            offset,
            needed,
            available: bytes.len().saturating_sub(offset),
        };
        if bytes.len() < HEADER_LEN {
            return Err(truncated(0, HEADER_LEN));
        }
        if &bytes[..4] != MAGIC {
            return Err(CmnistError::BadMagic {
                what: "M21I",
                expected: u32::from_be_bytes(*MAGIC),
                found: u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(CmnistError::VersionMismatch(version));
        }
        let count = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let height = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
        let width = u16::from_le_bytes([bytes[12], bytes[13]]) as usize;
        let channels = bytes[14] as usize;
        let len = height * width * channels;
        let crc_at = HEADER_LEN + count * len;
        if bytes.len() < crc_at + 4 {
            return Err(truncated(HEADER_LEN, count * len + 4));
        }
        let stored = u32::from_le_bytes(bytes[crc_at..crc_at + 4].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..crc_at]);
        if stored != computed {
            return Err(CmnistError::Checksum { stored, computed });
        }
        if bytes.len() != crc_at + 4 {
            return Err(CmnistError::Invalid(format!(
                "{} trailing bytes after checksum",
                bytes.len() - crc_at - 4
            )));
        }
        let images = (0..count)
            .map(|i| bytes[HEADER_LEN + i * len..HEADER_LEN + (i + 1) * len].to_vec())
            .collect();
        ImageSet::new(height, width, channels, images)
    }

    pub fn write(&self, path: &Path) -> Result<(), CmnistError> {
        std::fs::write(path, self.encode()?).map_err(|e| CmnistError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CmnistError> {
        let bytes = std::fs::read(path).map_err(|e| CmnistError::Io(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}
