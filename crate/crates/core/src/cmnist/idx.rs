//! Reader for the big-endian IDX files MNIST ships in.

use std::path::Path;

use super::{CmnistError, GrayImage, IMAGE_SIDE};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CmnistError> {
        if self.bytes.len() < self.pos + n {
            return Err(CmnistError::Truncated {
                what: self.what,
                offset: self.pos,
                needed: n,
                available: self.bytes.len().saturating_sub(self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32_be(&mut self) -> Result<u32, CmnistError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn check_magic(found: u32, expected: u32, what: &'static str) -> Result<(), CmnistError> {
    if found != expected {
        return Err(CmnistError::BadMagic { what, expected, found });
    }
    Ok(())
}

/// Parses an IDX3 image file held in memory.
pub fn parse_images(bytes: &[u8]) -> Result<Vec<GrayImage>, CmnistError> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        what: "idx images",
    };
    check_magic(c.u32_be()?, IMAGES_MAGIC, "idx images")?;
    let count = c.u32_be()? as usize;
    let rows = c.u32_be()? as usize;
    let cols = c.u32_be()? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(CmnistError::BadDimensions { rows, cols });
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let px = c.take(rows * cols)?;
        out.push(GrayImage::from_slice(px)?);
    }
    Ok(out)
}

/// Parses an IDX1 label file held in memory.
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, CmnistError> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        what: "idx labels",
    };
    check_magic(c.u32_be()?, LABELS_MAGIC, "idx labels")?;
    let count = c.u32_be()? as usize;
    let labels = c.take(count)?.to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(CmnistError::BadLabel(bad));
    }
    Ok(labels)
}

pub fn parse_pair(images: &[u8], labels: &[u8]) -> Result<Vec<(GrayImage, u8)>, CmnistError> {
    let imgs = parse_images(images)?;
    let labs = parse_labels(labels)?;
    if imgs.len() != labs.len() {
        return Err(CmnistError::CountMismatch {
            images: imgs.len(),
            labels: labs.len(),
        });
    }
    Ok(imgs.into_iter().zip(labs).collect())
}

/// Loads an MNIST image/label file pair.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<(GrayImage, u8)>, CmnistError> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| CmnistError::Io(format!("{}: {e}", p.display())));
    parse_pair(&read(images_path)?, &read(labels_path)?)
}

#[cfg(test)]
pub(crate) fn encode_images(images: &[GrayImage]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    for im in images {
        out.extend_from_slice(im.pixels());
    }
    out
}

#[cfg(test)]
pub(crate) fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: usize) -> Vec<GrayImage> {
        (0..n)
            .map(|i| GrayImage::from_fn(|p| ((p * 7 + i * 13) % 256) as u8))
            .collect()
    }

    #[test]
    fn parses_synthetic_pair() {
        let ims = images(3);
        let pairs = parse_pair(&encode_images(&ims), &encode_labels(&[4, 0, 9])).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[2].1, 9);
        assert_eq!(pairs[1].0, ims[1]);
    }

    #[test]
    fn truncated_file_names_offset() {
        let bytes = encode_images(&images(2));
        let err = parse_images(&bytes[..bytes.len() - 10]).unwrap_err();
        match err {
            CmnistError::Truncated { offset, needed, .. } => {
                assert_eq!(offset, 16 + 784);
                assert_eq!(needed, 784);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_msg(&bytes[..7]).contains("offset 4"));
    }

    fn err_msg(b: &[u8]) -> String {
        parse_images(b).unwrap_err().to_string()
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_images(&images(1));
        bytes[3] = 0x01;
        assert!(matches!(
            parse_images(&bytes),
            Err(CmnistError::BadMagic { found: 0x801, .. })
        ));
        let labels = encode_images(&images(1));
        assert!(matches!(parse_labels(&labels), Err(CmnistError::BadMagic { .. })));
    }

    #[test]
    fn count_mismatch_rejected() {
        let err = parse_pair(&encode_images(&images(2)), &encode_labels(&[1])).unwrap_err();
        assert_eq!(err, CmnistError::CountMismatch { images: 2, labels: 1 });
    }
}
