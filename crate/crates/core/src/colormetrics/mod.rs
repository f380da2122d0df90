//! Color Recall, Unique Color Count, MSE and histogram export.
//!
//! Images are interleaved RGB bytes (`H,W,3`, row-major). Every metric is a
//! pure function; reductions run in a fixed order so results are bit-stable.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::Tensor;

pub const DEFAULT_BINS: usize = 8;
pub const HISTOGRAM_HEADER: &str = "channel,bin,real_freq,gen_freq,real_density,gen_density";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("{0} dataset is empty")]
    Empty(&'static str),
    #[error("image {index} has {len} bytes, expected a positive multiple of 3")]
    BadImage { index: usize, len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed report: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Red,
    Green,
    Blue,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Red, Channel::Green, Channel::Blue];

    pub fn offset(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Red => "red",
            Channel::Green => "green",
            Channel::Blue => "blue",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn check_images(images: &[&[u8]], what: &'static str) -> Result<(), MetricsError> {
    if images.is_empty() {
        return Err(MetricsError::Empty(what));
    }
    for (index, img) in images.iter().enumerate() {
        if img.is_empty() || img.len() % 3 != 0 {
            return Err(MetricsError::BadImage { index, len: img.len() });
        }
    }
    Ok(())
}

/// Largest value of one channel over all pixels.
pub fn max_channel_value(image: &[u8], channel: Channel) -> u8 {
    image
        .iter()
        .skip(channel.offset())
        .step_by(3)
        .copied()
        .max()
        .unwrap_or(0)
}

/// Equal-width bin of a byte value: `min(floor(p * n / 256), n - 1)`.
pub fn bin_index(p: u8, n: usize) -> Result<usize, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroBins);
    }
    Ok((p as usize * n / 256).min(n - 1))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelHistogram {
    pub channel: Channel,
    pub freq: Vec<u64>,
}

impl ChannelHistogram {
    pub fn n_bins(&self) -> usize {
        self.freq.len()
    }

    pub fn total(&self) -> u64 {
        self.freq.iter().sum()
    }
}

fn histogram_unchecked(images: &[&[u8]], channel: Channel, n: usize) -> ChannelHistogram {
    let mut freq = vec![0u64; n];
    for img in images {
        let p = max_channel_value(img, channel);
        freq[(p as usize * n / 256).min(n - 1)] += 1;
    }
    ChannelHistogram { channel, freq }
}

/// Per-bin counts of each image's peak value in `channel`.
pub fn channel_frequencies(images: &[&[u8]], channel: Channel, n: usize) -> Result<ChannelHistogram, MetricsError> {
    bin_index(0, n)?;
    check_images(images, "image")?;
    Ok(histogram_unchecked(images, channel, n))
}

/// Mean over the real histogram's support of `min(gen[b] / real[b], 1)`.
///
/// Bins the real data never hits are excluded, so a generator matching the
/// real data scores exactly 1.
pub fn color_recall(real: &[&[u8]], generated: &[&[u8]], channel: Channel, n: usize) -> Result<f64, MetricsError> {
    bin_index(0, n)?;
    check_images(real, "real")?;
    if !generated.is_empty() {
        check_images(generated, "generated")?;
    }
    let f = histogram_unchecked(real, channel, n);
    let g = histogram_unchecked(generated, channel, n);
    Ok(recall_from_histograms(&f.freq, &g.freq))
}

/// Recall from precomputed real and generated bin counts of equal length.
pub fn recall_from_histograms(real: &[u64], generated: &[u64]) -> f64 {
    let mut sum = 0.0;
    let mut support = 0usize;
    for (&f, &g) in real.iter().zip(generated) {
        if f > 0 {
            sum += (g as f64 / f as f64).min(1.0);
            support += 1;
        }
    }
    if support == 0 {
        0.0
    } else {
        sum / support as f64
    }
}

/// Arithmetic mean of the three channel recalls.
pub fn recall_avg(red: f64, green: f64, blue: f64) -> f64 {
    (red + green + blue) / 3.0
}

/// The `(r, g, b)` of the pixel with the largest max-channel value; ties go
/// to the smaller channel sum, then to the earlier pixel in row-major order.
pub fn peak_pixel(image: &[u8]) -> [u8; 3] {
    let mut best = [0u8; 3];
    let mut best_key: Option<(u8, u16)> = None;
    for px in image.chunks_exact(3) {
        let peak = px[0].max(px[1]).max(px[2]);
        let sum = px[0] as u16 + px[1] as u16 + px[2] as u16;
        let better = match best_key {
            None => true,
            Some((bp, bs)) => peak > bp || (peak == bp && sum < bs),
        };
        if better {
            best_key = Some((peak, sum));
            best = [px[0], px[1], px[2]];
        }
    }
    best
}

/// Number of distinct peak-pixel colors across the dataset.
pub fn unique_color_count(images: &[&[u8]]) -> Result<usize, MetricsError> {
    check_images(images, "image")?;
    let set: HashSet<[u8; 3]> = images.iter().map(|img| peak_pixel(img)).collect();
    Ok(set.len())
}

/// Mean squared difference over all pairs and elements, accumulated in 64-bit.
pub fn mse(pairs: &[(&Tensor, &Tensor)]) -> Result<f64, MetricsError> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, (a, b)) in pairs.iter().enumerate() {
        if a.shape() != b.shape() {
            return Err(MetricsError::Shape(format!(
                "pair {i}: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        for (&x, &y) in a.data().iter().zip(b.data()) {
            let d = x as f64 - y as f64;
            sum += d * d;
        }
        count += a.len();
    }
    if count == 0 {
        return Err(MetricsError::Empty("mse input"));
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramRow {
    pub channel: Channel,
    pub bin: usize,
    pub real_freq: u64,
    pub gen_freq: u64,
    pub real_density: f64,
    pub gen_density: f64,
}

/// One row per (channel, bin); densities are frequencies over dataset size.
pub fn histogram_export(real: &[&[u8]], generated: &[&[u8]], n: usize) -> Result<Vec<HistogramRow>, MetricsError> {
    bin_index(0, n)?;
    if !real.is_empty() {
        check_images(real, "real")?;
    }
    if !generated.is_empty() {
        check_images(generated, "generated")?;
    }
    let density = |f: u64, total: usize| if total == 0 { 0.0 } else { f as f64 / total as f64 };
    let mut rows = Vec::with_capacity(3 * n);
    for ch in Channel::ALL {
        let f = histogram_unchecked(real, ch, n);
        let g = histogram_unchecked(generated, ch, n);
        for bin in 0..n {
            rows.push(HistogramRow {
                channel: ch,
                bin,
                real_freq: f.freq[bin],
                gen_freq: g.freq[bin],
                real_density: density(f.freq[bin], real.len()),
                gen_density: density(g.freq[bin], generated.len()),
            });
        }
    }
    Ok(rows)
}

pub fn histogram_csv(rows: &[HistogramRow]) -> String {
    let mut out = String::from(HISTOGRAM_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.channel, r.bin, r.real_freq, r.gen_freq, r.real_density, r.gen_density
        );
    }
    out
}

/// One evaluation row: color recall per channel and averaged, unique color
/// count, and uni-modal MSE when measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall_red: f64,
    pub recall_green: f64,
    pub recall_blue: f64,
    pub recall_avg: f64,
    pub unique_color_count: usize,
    pub mse: Option<f64>,
    pub n_bins: usize,
}

impl MetricsReport {
    /// Scores generated color images against real ones.
    pub fn from_images(real: &[&[u8]], generated: &[&[u8]], n: usize, mse: Option<f64>) -> Result<Self, MetricsError> {
        let r = color_recall(real, generated, Channel::Red, n)?;
        let g = color_recall(real, generated, Channel::Green, n)?;
        let b = color_recall(real, generated, Channel::Blue, n)?;
        Ok(MetricsReport {
            recall_red: r,
            recall_green: g,
            recall_blue: b,
            recall_avg: recall_avg(r, g, b),
            unique_color_count: unique_color_count(generated)?,
            mse,
            n_bins: n,
        })
    }

    /// Flat `key=value` lines named after the published table columns.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Bins={}", self.n_bins);
        let _ = writeln!(out, "Red={:.6}", self.recall_red);
        let _ = writeln!(out, "Green={:.6}", self.recall_green);
        let _ = writeln!(out, "Blue={:.6}", self.recall_blue);
        let _ = writeln!(out, "Recall={:.6}", self.recall_avg);
        let _ = writeln!(out, "Count={}", self.unique_color_count);
        if let Some(m) = self.mse {
            let _ = writeln!(out, "MSE={m:.6}");
        }
        out
    }
}

impl FromStr for MetricsReport {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut fields = std::collections::HashMap::new();
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| MetricsError::Parse(format!("line without '=': {line}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: FromStr>(fields: &std::collections::HashMap<String, String>, k: &str) -> Result<T, MetricsError> {
            fields
                .get(k)
                .ok_or_else(|| MetricsError::Parse(format!("missing {k}")))?
                .parse()
                .map_err(|_| MetricsError::Parse(format!("bad value for {k}")))
        }
        Ok(MetricsReport {
            recall_red: get(&fields, "Red")?,
            recall_green: get(&fields, "Green")?,
            recall_blue: get(&fields, "Blue")?,
            recall_avg: get(&fields, "Recall")?,
            unique_color_count: get(&fields, "Count")?,
            mse: if fields.contains_key("MSE") {
                Some(get(&fields, "MSE")?)
            } else {
                None
            },
            n_bins: get(&fields, "Bins")?,
        })
    }
}
