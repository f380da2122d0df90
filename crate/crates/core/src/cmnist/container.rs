//! `CMN1` binary container.
//!
//! All integers little-endian:
//!
//! ```text
//! "CMN1" | version u16 | count u32 | H u16 | W u16 | seed u64
//! count x ( label u8 | gray H*W bytes | color H*W*3 bytes | r,g,b f32 )
//! crc32 u32   (IEEE, over every preceding byte)
//! ```

use std::path::Path;

use super::{CmnistError, ColorVector, GrayImage, PairedDataset, PairedSample, Split};
use super::{COLOR_LEN, GRAY_LEN, IMAGE_SIDE};

pub const MAGIC: &[u8; 4] = b"CMN1";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 2 + 2 + 8;
const RECORD_LEN: usize = 1 + GRAY_LEN + COLOR_LEN + 12;

pub fn encode_dataset(ds: &PairedDataset) -> Result<Vec<u8>, CmnistError> {
    if ds.samples.is_empty() {
        return Err(CmnistError::Empty);
    }
    let count = u32::try_from(ds.samples.len()).map_err(|_| CmnistError::CountOverflow {
        requested: ds.samples.len(),
        available: u32::MAX as usize,
    })?;
    let mut out = Vec::with_capacity(HEADER_LEN + ds.samples.len() * RECORD_LEN + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u16).to_le_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u16).to_le_bytes());
    out.extend_from_slice(&ds.seed.to_le_bytes());
    for s in &ds.samples {
        out.push(s.label);
        out.extend_from_slice(s.gray.pixels());
        out.extend_from_slice(&s.color_image[..]);
        for c in s.color.channels() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn need(bytes: &[u8], offset: usize, n: usize) -> Result<(), CmnistError> {
    if bytes.len() < offset + n {
        return Err(CmnistError::Truncated {
            what: "CMN1",
            offset,
            needed: n,
            available: bytes.len().saturating_sub(offset),
        });
    }
    Ok(())
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode_dataset(bytes: &[u8]) -> Result<PairedDataset, CmnistError> {
    need(bytes, 0, 4)?;
    if &bytes[..4] != MAGIC {
        return Err(CmnistError::BadMagic {
            what: "CMN1",
            expected: u32::from_be_bytes(*MAGIC),
            found: u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
        });
    }
    need(bytes, 4, HEADER_LEN - 4)?;
    let version = le_u16(bytes, 4);
    if version != VERSION {
        return Err(CmnistError::VersionMismatch(version));
    }
    let count = le_u32(bytes, 6) as usize;
    let (h, w) = (le_u16(bytes, 10) as usize, le_u16(bytes, 12) as usize);
    if h != IMAGE_SIDE || w != IMAGE_SIDE {
        return Err(CmnistError::BadDimensions { rows: h, cols: w });
    }
    let seed = u64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes"));
    let body = count * RECORD_LEN;
    need(bytes, HEADER_LEN, body + 4)?;
    let crc_at = HEADER_LEN + body;
    let stored = le_u32(bytes, crc_at);
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
    if count == 0 {
        return Err(CmnistError::Empty);
    }

    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let rec = &bytes[HEADER_LEN + i * RECORD_LEN..HEADER_LEN + (i + 1) * RECORD_LEN];
        let label = rec[0];
        if label > 9 {
            return Err(CmnistError::BadLabel(label));
        }
        let gray = GrayImage::from_slice(&rec[1..1 + GRAY_LEN])?;
        let color_image: Box<[u8; COLOR_LEN]> = Box::new(
            rec[1 + GRAY_LEN..1 + GRAY_LEN + COLOR_LEN]
                .try_into()
                .expect("record length"),
        );
        let f = |k: usize| {
            let at = 1 + GRAY_LEN + COLOR_LEN + 4 * k;
            f32::from_le_bytes(rec[at..at + 4].try_into().expect("4 bytes"))
        };
        let color = ColorVector::new(f(0), f(1), f(2))?;
        let sample = PairedSample {
            color_image,
            gray,
            color,
            label,
        };
        if !sample.is_consistent() {
            return Err(CmnistError::Invalid(format!(
                "sample {i}: color image does not equal colorize(gray, color)"
            )));
        }
        samples.push(sample);
    }
    Ok(PairedDataset {
        samples,
        seed,
        split: Split::Unspecified,
    })
}

pub fn write_dataset(ds: &PairedDataset, path: &Path) -> Result<(), CmnistError> {
    let bytes = encode_dataset(ds)?;
    std::fs::write(path, bytes).map_err(|e| CmnistError::Io(format!("{}: {e}", path.display())))
}

pub fn read_dataset(path: &Path) -> Result<PairedDataset, CmnistError> {
    let bytes = std::fs::read(path).map_err(|e| CmnistError::Io(format!("{}: {e}", path.display())))?;
    decode_dataset(&bytes)
}
