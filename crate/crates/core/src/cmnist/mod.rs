//! Colorized MNIST: every grayscale digit is painted with one random color,
//! `color[p][k] = round(c_k * gray[p])`, giving aligned (color, gray) pairs.

pub mod container;
pub mod idx;
pub mod imageset;
pub mod rng;

use std::fmt;

use thiserror::Error;

use crate::diffcore::Tensor;
pub use container::{decode_dataset, encode_dataset, read_dataset, write_dataset};
pub use idx::load_mnist_idx;
use rng::DetRng;

pub const IMAGE_SIDE: usize = 28;
pub const GRAY_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const COLOR_LEN: usize = GRAY_LEN * 3;
/// Side length the networks work at; digits are padded by 2 on every side.
pub const MODEL_SIDE: usize = 32;
const PAD: usize = (MODEL_SIDE - IMAGE_SIDE) / 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmnistError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{what}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        what: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("{what}: truncated at offset {offset}: needed {needed} bytes, {available} available")]
    Truncated {
        what: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("images must be 28x28, got {rows}x{cols}")]
    BadDimensions { rows: usize, cols: usize },
    #[error("label {0} outside 0..=9")]
    BadLabel(u8),
    #[error("unsupported container version {0}")]
    VersionMismatch(u16),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("requested {requested} samples but only {available} MNIST images are available")]
    CountOverflow { requested: usize, available: usize },
    #[error("dataset must contain at least one sample")]
    Empty,
    #[error("{0}")]
    Invalid(String),
}

/// One 28x28 grayscale digit.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage(Box<[u8; GRAY_LEN]>);

impl GrayImage {
    pub fn from_slice(px: &[u8]) -> Result<Self, CmnistError> {
        let arr: [u8; GRAY_LEN] = px
            .try_into()
            .map_err(|_| CmnistError::Invalid(format!("gray image needs {GRAY_LEN} bytes, got {}", px.len())))?;
        Ok(GrayImage(Box::new(arr)))
    }

    pub fn from_fn(mut f: impl FnMut(usize) -> u8) -> Self {
        let mut arr = [0u8; GRAY_LEN];
        for (i, v) in arr.iter_mut().enumerate() {
            *v = f(i);
        }
        GrayImage(Box::new(arr))
    }

    pub fn pixels(&self) -> &[u8] {
        &self.0[..]
    }

    pub fn max(&self) -> u8 {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrayImage(max={})", self.max())
    }
}

/// Per-channel multiplier in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorVector {
    pub r: f32,
    pub g: f32,
    pub b: f32,
}

impl ColorVector {
    pub fn new(r: f32, g: f32, b: f32) -> Result<Self, CmnistError> {
        for v in [r, g, b] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CmnistError::Invalid(format!("color component {v} outside [0,1]")));
            }
        }
        Ok(ColorVector { r, g, b })
    }

    pub fn channels(&self) -> [f32; 3] {
        [self.r, self.g, self.b]
    }
}

/// Draws r, g, b in that order, each uniform on `[0, 1)`.
pub fn sample_color(rng: &mut DetRng) -> ColorVector {
    let r = rng.uniform_f64() as f32;
    let g = rng.uniform_f64() as f32;
    let b = rng.uniform_f64() as f32;
    ColorVector { r, g, b }
}

/// Paints a gray digit: `out[p][k] = round(c_k * gray[p])`, half away from zero.
pub fn colorize(gray: &GrayImage, c: ColorVector) -> Box<[u8; COLOR_LEN]> {
    let ch = c.channels();
    let mut out = Box::new([0u8; COLOR_LEN]);
    for (p, &g) in gray.pixels().iter().enumerate() {
        for k in 0..3 {
            let v = (ch[k] as f64 * g as f64).round();
            out[p * 3 + k] = v.clamp(0.0, 255.0) as u8;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub color_image: Box<[u8; COLOR_LEN]>,
    pub gray: GrayImage,
    pub color: ColorVector,
    pub label: u8,
}

impl PairedSample {
    /// Checks the colorization identity and label range.
    pub fn is_consistent(&self) -> bool {
        self.label <= 9 && *colorize(&self.gray, self.color) == *self.color_image
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    /// Split is not recorded in the container, so loaded datasets carry this.
    Unspecified,
}

impl std::str::FromStr for Split {
    type Err = CmnistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(CmnistError::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub samples: Vec<PairedSample>,
    pub seed: u64,
    pub split: Split,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn color_images(&self) -> Vec<&[u8]> {
        self.samples.iter().map(|s| &s.color_image[..]).collect()
    }

    pub fn gray_images(&self) -> Vec<&[u8]> {
        self.samples.iter().map(|s| s.gray.pixels()).collect()
    }
}

/// Pairs MNIST image `i` with the `i`-th color drawn from `DetRng::new(seed)`.
pub fn generate_dataset(
    mnist: &[(GrayImage, u8)],
    seed: u64,
    count: usize,
    split: Split,
) -> Result<PairedDataset, CmnistError> {
    if count == 0 {
        return Err(CmnistError::Empty);
    }
    if count > mnist.len() {
        return Err(CmnistError::CountOverflow {
            requested: count,
            available: mnist.len(),
        });
    }
    if count > u32::MAX as usize {
        return Err(CmnistError::CountOverflow {
            requested: count,
            available: u32::MAX as usize,
        });
    }
    let mut rng = DetRng::new(seed);
    let samples = mnist[..count]
        .iter()
        .map(|(gray, label)| {
            let color = sample_color(&mut rng);
            PairedSample {
                color_image: colorize(gray, color),
                gray: gray.clone(),
                color,
                label: *label,
            }
        })
        .collect();
    Ok(PairedDataset { samples, seed, split })
}

/// Maps byte images (`28x28xC`) into padded `[N,32,32,C]` model space,
/// `f = byte / 127.5 - 1`, with border value -1.
pub fn to_model_tensor(images: &[&[u8]], channels: usize) -> Result<Tensor, CmnistError> {
    let mut data = vec![-1.0f32; images.len() * MODEL_SIDE * MODEL_SIDE * channels];
    for (n, img) in images.iter().enumerate() {
        if img.len() != GRAY_LEN * channels {
            return Err(CmnistError::Invalid(format!(
                "image {n} has {} bytes, expected {}",
                img.len(),
                GRAY_LEN * channels
            )));
        }
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                let dst = ((n * MODEL_SIDE + y + PAD) * MODEL_SIDE + x + PAD) * channels;
                let src = (y * IMAGE_SIDE + x) * channels;
                for k in 0..channels {
                    data[dst + k] = byte_to_unit(img[src + k]);
                }
            }
        }
    }
    Tensor::new(&[images.len(), MODEL_SIDE, MODEL_SIDE, channels], data)
        .map_err(|e| CmnistError::Invalid(e.to_string()))
}

/// Inverse of [`to_model_tensor`]: crops the border and quantizes to bytes.
pub fn from_model_tensor(t: &Tensor) -> Result<Vec<Vec<u8>>, CmnistError> {
    let s = t.shape();
    if s.len() != 4 || s[1] != MODEL_SIDE || s[2] != MODEL_SIDE {
        return Err(CmnistError::Invalid(format!("expected [N,32,32,C], got {s:?}")));
    }
    let (n, c) = (s[0], s[3]);
    let d = t.data();
    Ok((0..n)
        .map(|b| {
            let mut img = Vec::with_capacity(GRAY_LEN * c);
            for y in 0..IMAGE_SIDE {
                for x in 0..IMAGE_SIDE {
                    let src = ((b * MODEL_SIDE + y + PAD) * MODEL_SIDE + x + PAD) * c;
                    img.extend(d[src..src + c].iter().map(|&f| unit_to_byte(f)));
                }
            }
            img
        })
        .collect())
}

pub fn byte_to_unit(b: u8) -> f32 {
    (b as f64 / 127.5 - 1.0) as f32
}

pub fn unit_to_byte(f: f32) -> u8 {
    ((f as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}
