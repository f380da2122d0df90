//! Shared fixtures and independent oracles for the integration tests and the
//! acceptance report.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use asymtrans::cmnist::rng::DetRng;
use asymtrans::cmnist::{self, GrayImage, PairedDataset, Split};
use asymtrans::diffcore::gradcheck::{self, GradCheckReport, Probe};
use asymtrans::diffcore::{DiffError, Real, Tape, Tensor, Var};
use asymtrans::losses::{self, Batch, Lambdas, Mode};
use asymtrans::m21gan::{Domain, Group, Kind, ModelBundle, ModelConfig, ParamId, Style, StyleInput};
use asymtrans::trainer::adam::Adam;
use asymtrans::trainer::{TrainConfig, Trainer};

// ---------------------------------------------------------------------------
// Data

/// Blob-shaped stand-ins for MNIST digits; every image reaches 255.
pub fn synthetic_digits(count: usize, seed: u64) -> Vec<(GrayImage, u8)> {
    let mut rng = DetRng::new(seed);
    (0..count)
        .map(|i| {
            let (cx, cy) = (8 + rng.below(12), 8 + rng.below(12));
            let r = 3 + rng.below(5);
            let img = GrayImage::from_fn(|p| {
                let (x, y) = (p % 28, p / 28);
                let d2 = x.abs_diff(cx).pow(2) + y.abs_diff(cy).pow(2);
                if d2 <= r * r {
                    255 - (d2 * 8).min(200) as u8
                } else {
                    0
                }
            });
            (img, (i % 10) as u8)
        })
        .collect()
}

pub fn synthetic_dataset(count: usize, seed: u64) -> PairedDataset {
    cmnist::generate_dataset(&synthetic_digits(count, seed), seed, count, Split::Train).unwrap()
}

/// MNIST directory from `MNIST_DIR`, else `data/mnist` under the workspace.
pub fn mnist_dir() -> Option<PathBuf> {
    let candidates = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .into_iter()
        .chain(std::iter::once(
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
        ));
    candidates
        .into_iter()
        .find(|d| d.join("train-images-idx3-ubyte").is_file())
}

/// The 60k MNIST training digits, if available.
pub fn mnist_train() -> Option<Vec<(GrayImage, u8)>> {
    let dir = mnist_dir()?;
    cmnist::load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )
    .ok()
}

/// `round(c * g)` with halves away from zero. A 24-bit mantissa times an
/// 8-bit integer is exact in f64, so floor-and-compare is exact too.
pub fn oracle_colorize(gray: &[u8], c: [f32; 3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(gray.len() * 3);
    for &g in gray {
        for &ck in &c {
            let x = ck as f64 * g as f64;
            let q = x.floor();
            let v = if x - q >= 0.5 { q + 1.0 } else { q };
            out.push(v as u8);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Metric oracles

fn oracle_bin(p: u8, n: usize) -> usize {
    let v = p as f64 / 256.0;
    ((v * n as f64).floor() as usize).min(n - 1)
}

fn oracle_channel_peak(image: &[u8], channel: usize) -> u8 {
    let mut best = 0u8;
    let mut i = channel;
    while i < image.len() {
        if image[i] > best {
            best = image[i];
        }
        i += 3;
    }
    best
}

/// Brute-force color recall of one channel (0 = red).
pub fn oracle_recall(real: &[Vec<u8>], generated: &[Vec<u8>], channel: usize, n: usize) -> f64 {
    let count = |set: &[Vec<u8>]| {
        let mut m: BTreeMap<usize, u64> = BTreeMap::new();
        for img in set {
            *m.entry(oracle_bin(oracle_channel_peak(img, channel), n)).or_default() += 1;
        }
        m
    };
    let f = count(real);
    let g = count(generated);
    let terms: Vec<f64> = f
        .iter()
        .map(|(bin, &fb)| {
            let gb = g.get(bin).copied().unwrap_or(0);
            if gb >= fb {
                1.0
            } else {
                gb as f64 / fb as f64
            }
        })
        .collect();
    if terms.is_empty() {
        0.0
    } else {
        terms.iter().sum::<f64>() / terms.len() as f64
    }
}

/// Brute-force unique color count: sort each image's pixels by
/// (max channel desc, channel sum asc, position asc) and keep the first.
pub fn oracle_unique(images: &[Vec<u8>]) -> usize {
    let mut colors = BTreeSet::new();
    for img in images {
        let mut px: Vec<(usize, [u8; 3])> = (0..img.len() / 3)
            .map(|i| (i, [img[3 * i], img[3 * i + 1], img[3 * i + 2]]))
            .collect();
        px.sort_by_key(|&(i, c)| {
            let max = *c.iter().max().unwrap();
            let sum: u32 = c.iter().map(|&v| v as u32).sum();
            (std::cmp::Reverse(max), sum, i)
        });
        colors.insert(px[0].1);
    }
    colors.len()
}

/// A random color image: mostly black, a few painted pixels drawn from a
/// small palette so peak ties are common.
pub fn random_color_image(rng: &mut DetRng, pixels: usize) -> Vec<u8> {
    let palette: Vec<[u8; 3]> = (0..4)
        .map(|_| [rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8])
        .collect();
    let mut img = vec![0u8; pixels * 3];
    let painted = 1 + rng.below(pixels.min(40));
    for _ in 0..painted {
        let p = rng.below(pixels);
        let c = if rng.below(2) == 0 {
            palette[rng.below(palette.len())]
        } else {
            [rng.below(256) as u8, rng.below(256) as u8, rng.below(256) as u8]
        };
        img[3 * p..3 * p + 3].copy_from_slice(&c);
    }
    img
}

pub struct MetricCase {
    pub real: Vec<Vec<u8>>,
    pub generated: Vec<Vec<u8>>,
    pub n: usize,
}

pub fn random_metric_case(rng: &mut DetRng) -> MetricCase {
    const BINS: [usize; 4] = [2, 4, 8, 16];
    let n = BINS[rng.below(4)];
    let pixels = [4, 16, cmnist::GRAY_LEN][rng.below(3)];
    let real = (0..1 + rng.below(100))
        .map(|_| random_color_image(rng, pixels))
        .collect();
    let generated = (0..1 + rng.below(100))
        .map(|_| random_color_image(rng, pixels))
        .collect();
    MetricCase { real, generated, n }
}

pub fn slices(v: &[Vec<u8>]) -> Vec<&[u8]> {
    v.iter().map(Vec::as_slice).collect()
}

// ---------------------------------------------------------------------------
// Gradient checks

pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_INSTANCES: u64 = 20;
/// Finite-difference step for single ops.
const OP_STEP: f64 = gradcheck::DEFAULT_STEP;
/// Whole networks hold thousands of (leaky) ReLU kinks; a small step keeps
/// the central difference from straddling one. Numeric passes run in f64.
const NET_STEP: f64 = 1e-6;
// Loss terms stack several full network passes, whose f32 round-off
// (~1e-7 absolute) exceeds 1e-3 relative on the smallest gradient entries;
// their backward pass runs on an f64 tape through the same generic code.

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Scale,
    Neg,
    AddScalar,
    Abs,
    Square,
    Rsqrt,
    Tanh,
    LeakyRelu,
    Softplus,
    Sigmoid,
    SumAll,
    MeanAll,
    Expand,
    Reshape,
    SumRows,
    BroadcastRows,
    MatmulT(bool, bool),
    Dense,
    Conv2d { k: usize, stride: usize, pad: usize },
    Upsample2,
    Sumpool2,
    Avgpool2,
    SpatialSum,
    SpatialMean,
    BroadcastSpatial,
    ScaleChannels,
    DemodConv,
    InstanceNorm,
    L1,
    Mse,
}

pub const OPS: &[Op] = &[
    Op::Add,
    Op::Sub,
    Op::Mul,
    Op::Scale,
    Op::Neg,
    Op::AddScalar,
    Op::Abs,
    Op::Square,
    Op::Rsqrt,
    Op::Tanh,
    Op::LeakyRelu,
    Op::Softplus,
    Op::Sigmoid,
    Op::SumAll,
    Op::MeanAll,
    Op::Expand,
    Op::Reshape,
    Op::SumRows,
    Op::BroadcastRows,
    Op::MatmulT(false, false),
    Op::MatmulT(true, false),
    Op::MatmulT(false, true),
    Op::MatmulT(true, true),
    Op::Dense,
    Op::Conv2d {
        k: 1,
        stride: 1,
        pad: 0,
    },
    Op::Conv2d {
        k: 3,
        stride: 1,
        pad: 1,
    },
    Op::Conv2d {
        k: 3,
        stride: 2,
        pad: 1,
    },
    Op::Conv2d {
        k: 3,
        stride: 1,
        pad: 0,
    },
    Op::Upsample2,
    Op::Sumpool2,
    Op::Avgpool2,
    Op::SpatialSum,
    Op::SpatialMean,
    Op::BroadcastSpatial,
    Op::ScaleChannels,
    Op::DemodConv,
    Op::InstanceNorm,
    Op::L1,
    Op::Mse,
];

const SPREAD_H: usize = 3;
const SPREAD_W: usize = 2;

impl Probe for Op {
    fn eval<T: Real>(&self, t: &mut Tape<T>, v: &[Var]) -> Result<Var, DiffError> {
        Ok(match *self {
            Op::Add => t.add(v[0], v[1])?,
            Op::Sub => t.sub(v[0], v[1])?,
            Op::Mul => t.mul(v[0], v[1])?,
            Op::Scale => t.scale(v[0], -1.7),
            Op::Neg => t.neg(v[0]),
            Op::AddScalar => t.add_scalar(v[0], 0.3),
            Op::Abs => t.abs(v[0]),
            Op::Square => t.square(v[0]),
            Op::Rsqrt => t.rsqrt(v[0]),
            Op::Tanh => t.tanh(v[0]),
            Op::LeakyRelu => t.leaky_relu(v[0], 0.2),
            Op::Softplus => t.softplus(v[0]),
            Op::Sigmoid => t.sigmoid(v[0]),
            Op::SumAll => t.sum_all(v[0]),
            Op::MeanAll => t.mean_all(v[0]),
            Op::Expand => t.expand(v[0], &[2, 3])?,
            Op::Reshape => {
                let s = t.shape(v[0]).to_vec();
                t.reshape(v[0], &[s[1], s[0]])?
            }
            Op::SumRows => t.sum_rows(v[0])?,
            Op::BroadcastRows => t.broadcast_rows(v[0], 3)?,
            Op::MatmulT(ta, tb) => t.matmul_t(v[0], v[1], ta, tb)?,
            Op::Dense => t.dense(v[0], v[1], v[2])?,
            Op::Conv2d { stride, pad, .. } => t.conv2d(v[0], v[1], stride, pad)?,
            Op::Upsample2 => t.upsample2(v[0])?,
            Op::Sumpool2 => t.sumpool2(v[0])?,
            Op::Avgpool2 => t.avgpool2(v[0])?,
            Op::SpatialSum => t.spatial_sum(v[0])?,
            Op::SpatialMean => t.spatial_mean(v[0])?,
            Op::BroadcastSpatial => t.broadcast_spatial(v[0], SPREAD_H, SPREAD_W)?,
            Op::ScaleChannels => t.scale_channels(v[0], v[1])?,
            Op::DemodConv => t.demod_conv(v[0], v[1], v[2], asymtrans::diffcore::DEMOD_EPS, 1)?,
            Op::InstanceNorm => t.instance_norm(v[0])?,
            Op::L1 => t.l1(v[0], v[1])?,
            Op::Mse => t.mse(v[0], v[1])?,
        })
    }
}

fn uniform(rng: &mut DetRng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(lo, hi))
}

/// Values in `±[0.1, 1]`, clear of kinks at zero.
fn away_from_zero(rng: &mut DetRng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform_range(0.1, 1.0);
        if rng.below(2) == 0 {
            m
        } else {
            -m
        }
    })
}

fn dim(rng: &mut DetRng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

impl Op {
    pub fn name(&self) -> String {
        match *self {
            Op::MatmulT(a, b) => format!("matmul_t(ta={a},tb={b})"),
            Op::Conv2d { k, stride, pad } => format!("conv2d(k={k},stride={stride},pad={pad})"),
            other => {
                let dbg = format!("{other:?}");
                let mut out = String::new();
                for (i, ch) in dbg.chars().enumerate() {
                    if ch.is_uppercase() && i > 0 {
                        out.push('_');
                    }
                    out.push(ch.to_ascii_lowercase());
                }
                out
            }
        }
    }

    /// Random inputs of at most 4x8x8x4 elements per tensor.
    pub fn inputs(&self, rng: &mut DetRng) -> Vec<Tensor> {
        let (m, n) = (dim(rng, 1, 4), dim(rng, 1, 4));
        let img = |rng: &mut DetRng, even: bool| {
            let (b, c) = (dim(rng, 1, 2), dim(rng, 1, 4));
            let (h, w) = if even {
                (2 * dim(rng, 1, 4), 2 * dim(rng, 1, 4))
            } else {
                (dim(rng, 2, 8), dim(rng, 2, 8))
            };
            uniform(rng, &[b, h, w, c], -1.0, 1.0)
        };
        match *self {
            Op::Add | Op::Sub | Op::Mul | Op::Mse => {
                vec![uniform(rng, &[m, n], -1.0, 1.0), uniform(rng, &[m, n], -1.0, 1.0)]
            }
            Op::L1 => {
                let a = uniform(rng, &[m, n], -1.0, 1.0);
                let d = away_from_zero(rng, &[m, n]);
                let b = a.zip_map(&d, |x, y| x + y);
                vec![a, b]
            }
            Op::Abs | Op::LeakyRelu => vec![away_from_zero(rng, &[m, n])],
            Op::Rsqrt => vec![uniform(rng, &[m, n], 0.3, 2.0)],
            Op::Softplus | Op::Sigmoid | Op::Tanh => vec![uniform(rng, &[m, n], -3.0, 3.0)],
            Op::Scale | Op::Neg | Op::AddScalar | Op::Square | Op::SumAll | Op::MeanAll | Op::Reshape | Op::SumRows => {
                vec![uniform(rng, &[m, n], -1.0, 1.0)]
            }
            Op::Expand => vec![uniform(rng, &[1], -1.0, 1.0)],
            Op::BroadcastRows => vec![uniform(rng, &[n], -1.0, 1.0)],
            Op::MatmulT(ta, tb) => {
                let k = dim(rng, 1, 4);
                let a = if ta { [k, m] } else { [m, k] };
                let b = if tb { [n, k] } else { [k, n] };
                vec![uniform(rng, &a, -1.0, 1.0), uniform(rng, &b, -1.0, 1.0)]
            }
            Op::Dense => {
                let din = dim(rng, 1, 4);
                vec![
                    uniform(rng, &[m, din], -1.0, 1.0),
                    uniform(rng, &[din, n], -1.0, 1.0),
                    uniform(rng, &[n], -1.0, 1.0),
                ]
            }
            Op::Conv2d { k, pad, .. } => {
                let lo = if pad == 0 { k } else { 2 };
                let (b, cin, cout) = (dim(rng, 1, 2), dim(rng, 1, 4), dim(rng, 1, 4));
                let (h, w) = (dim(rng, lo, 8), dim(rng, lo, 8));
                vec![
                    uniform(rng, &[b, h, w, cin], -1.0, 1.0),
                    uniform(rng, &[k, k, cin, cout], -1.0, 1.0),
                ]
            }
            Op::Upsample2 | Op::SpatialSum | Op::SpatialMean => vec![img(rng, false)],
            Op::Sumpool2 | Op::Avgpool2 => vec![img(rng, true)],
            Op::BroadcastSpatial => vec![uniform(rng, &[m, n], -1.0, 1.0)],
            Op::ScaleChannels => {
                let x = img(rng, false);
                let s = x.shape().to_vec();
                let v = uniform(rng, &[s[0], s[3]], -1.5, 1.5);
                vec![x, v]
            }
            Op::DemodConv => {
                let (b, cin, cout) = (dim(rng, 1, 2), dim(rng, 1, 4), dim(rng, 1, 4));
                let (h, w) = (dim(rng, 2, 6), dim(rng, 2, 6));
                vec![
                    uniform(rng, &[b, h, w, cin], -1.0, 1.0),
                    uniform(rng, &[3, 3, cin, cout], -1.0, 1.0),
                    uniform(rng, &[b, cin], 0.2, 1.5),
                ]
            }
            Op::InstanceNorm => {
                let (b, c) = (dim(rng, 1, 2), dim(rng, 1, 4));
                let (h, w) = (dim(rng, 2, 8), dim(rng, 2, 8));
                vec![uniform(rng, &[b, h, w, c], -1.0, 1.0)]
            }
        }
    }
}

/// Loss terms of the translation objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Term {
    AdvD,
    AdvG,
    R1,
    StyleRecon,
    Cycle,
    ChannelCycle,
    Diversity,
    Supervised,
}

pub const TERMS: &[Term] = &[
    Term::AdvD,
    Term::AdvG,
    Term::R1,
    Term::StyleRecon,
    Term::Cycle,
    Term::ChannelCycle,
    Term::Diversity,
    Term::Supervised,
];

pub fn tiny_model_config(gating: bool) -> ModelConfig {
    ModelConfig {
        image_side: 8,
        base_channels: 4,
        max_channels: 8,
        style_dim: 4,
        latent_dim: 4,
        mapping_hidden: 8,
        zero_style_gating: gating,
    }
}

/// A loss term evaluated on a small model; the last input replaces `param`.
pub struct TermProbe {
    pub term: Term,
    pub model: ModelBundle,
    pub param: ParamId,
    /// Real images for the R1 term, which differentiates only through D.
    pub fixed: Tensor,
}

fn loss_err(e: losses::LossError) -> DiffError {
    DiffError::Invalid(e.to_string())
}

impl Probe for TermProbe {
    fn eval<T: Real>(&self, t: &mut Tape<T>, v: &[Var]) -> Result<Var, DiffError> {
        let m = &self.model;
        let mut p = m.bind(t, |_| false);
        p.replace(self.param, v[v.len() - 1]);
        let model_err = |e: asymtrans::m21gan::ModelError| DiffError::Invalid(e.to_string());
        Ok(match self.term {
            Term::AdvD => {
                let real = m.discriminate(t, &p, v[0], Domain::A).map_err(model_err)?;
                let fake = m.discriminate(t, &p, v[1], Domain::A).map_err(model_err)?;
                losses::d_logistic(t, real, fake).map_err(loss_err)?
            }
            Term::AdvG => {
                let fake = m.discriminate(t, &p, v[0], Domain::B).map_err(model_err)?;
                losses::g_logistic(t, fake)
            }
            Term::R1 => {
                losses::r1_penalty(t, &p, m, &self.fixed.cast::<T>(), Domain::A)
                    .map_err(loss_err)?
                    .0
            }
            Term::StyleRecon => losses::style_reconstruction_loss(t, &p, m, v[0], v[1], Domain::A).map_err(loss_err)?,
            Term::Cycle => {
                losses::cycle_consistency_loss(t, &p, m, v[0], v[1], Domain::B, Domain::A, Style::Latent(v[2]))
                    .map_err(loss_err)?
            }
            Term::ChannelCycle => losses::channel_cycle_loss(t, &p, m, v[0], v[1]).map_err(loss_err)?,
            Term::Diversity => losses::diversity_loss(
                t,
                &p,
                m,
                v[0],
                Domain::B,
                Domain::A,
                Style::Latent(v[1]),
                Style::Latent(v[2]),
                true,
            )
            .map_err(loss_err)?,
            Term::Supervised => losses::supervised_loss(t, &p, m, v[0], v[1], true).map_err(loss_err)?,
        })
    }
}

impl Term {
    pub fn name(&self) -> &'static str {
        match self {
            Term::AdvD => "adversarial (discriminator)",
            Term::AdvG => "adversarial (generator)",
            Term::R1 => "r1 penalty",
            Term::StyleRecon => "style reconstruction",
            Term::Cycle => "cycle consistency",
            Term::ChannelCycle => "channel cycle",
            Term::Diversity => "diversity",
            Term::Supervised => "supervised",
        }
    }

    pub fn probe(&self, seed: u64) -> (TermProbe, Vec<Tensor>) {
        let mut rng = DetRng::new(seed);
        // Cycle translates back to the uni-modal domain with a latent style,
        // which only an ungated model accepts.
        let gating = !matches!(self, Term::Cycle);
        let model = ModelBundle::new(tiny_model_config(gating), seed).unwrap();
        let side = model.config.image_side;
        let latent = model.config.latent_dim;
        let style = model.config.style_dim;
        let img = |rng: &mut DetRng, c: usize| uniform(rng, &[2, side, side, c], -1.0, 1.0);
        let z = |rng: &mut DetRng| Tensor::from_fn(&[2, latent], |_| rng.normal());
        let (inputs, param) = match self {
            Term::AdvD => (vec![img(&mut rng, 3), img(&mut rng, 3)], "D.head_a.w"),
            Term::AdvG => (vec![img(&mut rng, 1)], "D.stem_b"),
            Term::R1 => (vec![], "D.head_a.w"),
            Term::StyleRecon => (
                vec![img(&mut rng, 3), uniform(&mut rng, &[2, style], -1.0, 1.0)],
                "E.head_a.w",
            ),
            Term::Cycle => (vec![img(&mut rng, 1), img(&mut rng, 3), z(&mut rng)], "G.to_rgb"),
            Term::ChannelCycle => (vec![img(&mut rng, 3), img(&mut rng, 1)], "C.a_to_s"),
            Term::Diversity => (vec![img(&mut rng, 1), z(&mut rng), z(&mut rng)], "G.to_rgb"),
            Term::Supervised => (vec![img(&mut rng, 3), img(&mut rng, 1)], "G.to_rgb"),
        };
        let id = model.params.id(param).unwrap_or_else(|| panic!("no parameter {param}"));
        let mut inputs = inputs;
        let mut value = model.params.get(id).value.clone();
        if *self == Term::ChannelCycle {
            // Move off the exact inverse pair so the L1 terms sit away from zero.
            value = value.map(|w| w + 0.3);
        }
        inputs.push(value);
        let fixed = img(&mut rng, 3);
        (
            TermProbe {
                term: *self,
                model,
                param: id,
                fixed,
            },
            inputs,
        )
    }
}

/// Worst relative error over `GRAD_INSTANCES` random instances of `op`.
pub fn check_op(op: Op) -> GradCheckReport {
    let mut worst: Option<GradCheckReport> = None;
    for i in 0..GRAD_INSTANCES {
        let mut rng = DetRng::new(0x0b5 ^ (i << 8));
        let inputs = op.inputs(&mut rng);
        let r = gradcheck::check(&inputs, &op, OP_STEP, i).unwrap_or_else(|e| panic!("{}: {e}", op.name()));
        if worst.as_ref().is_none_or(|w| r.max_rel_err > w.max_rel_err) {
            worst = Some(r);
        }
    }
    worst.unwrap()
}

/// Worst relative error over `GRAD_INSTANCES` random instances of `term`.
pub fn check_term(term: Term) -> GradCheckReport {
    let mut worst: Option<GradCheckReport> = None;
    for i in 0..GRAD_INSTANCES {
        let (probe, inputs) = term.probe(100 + i);
        let r = gradcheck::check_in::<f64, _>(&inputs, &probe, NET_STEP, i)
            .unwrap_or_else(|e| panic!("{}: {e}", term.name()));
        if worst.as_ref().is_none_or(|w| r.max_rel_err > w.max_rel_err) {
            worst = Some(r);
        }
    }
    worst.unwrap()
}

// ---------------------------------------------------------------------------
// Zero-style gating

pub fn random_images(rng: &mut DetRng, n: usize, side: usize, c: usize) -> Tensor {
    uniform(rng, &[n, side, side, c], -1.0, 1.0)
}

pub fn random_batch(model: &ModelConfig, n: usize, seed: u64, paired: bool) -> Batch {
    let mut rng = DetRng::new(seed);
    let s = model.image_side;
    let xa = random_images(&mut rng, n, s, 3);
    let xb = random_images(&mut rng, n, s, 1);
    let mut z = || Tensor::from_fn(&[n, model.latent_dim], |_| rng.normal());
    let za = [z(), z()];
    let zb = [z(), z()];
    Batch {
        xa,
        xb,
        paired,
        za,
        zb,
        to_a: true,
        to_b: true,
    }
}

/// Parameters gating must silence: all of E and F, and the demodulation
/// dense weight matrices.
pub fn gated_ids(model: &ModelBundle) -> Vec<ParamId> {
    model
        .params
        .ids()
        .filter(|&id| {
            let p = model.params.get(id);
            matches!(p.group, Group::StyleEncoder | Group::Mapping) || p.kind == Kind::StyleWeight
        })
        .collect()
}

/// Adds large normal noise to every gated parameter.
pub fn perturb_gated(model: &mut ModelBundle, seed: u64) {
    let mut rng = DetRng::new(seed);
    for id in gated_ids(model) {
        model
            .params
            .value_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += 3.0 * rng.normal());
    }
}

pub fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

pub struct GatingOutcome {
    /// A→B outputs bit-identical under every perturbation of E, F and demod weights.
    pub perturbation_invariant: bool,
    /// Generator losses of uni-modal batches bit-identical across latents.
    pub latent_invariant: bool,
    /// A latent style for the uni-modal target is rejected.
    pub latent_rejected: bool,
    /// Largest |gradient| over gated parameters.
    pub max_gated_grad: f32,
    /// Largest |gradient| over demod biases (expected non-zero).
    pub max_bias_grad: f32,
}

pub fn zero_style_gating(config: &ModelConfig, trials: u64) -> GatingOutcome {
    let base = ModelBundle::new(config.clone(), 11).unwrap();
    let mut rng = DetRng::new(12);
    let x = random_images(&mut rng, 4, config.image_side, 3);
    let y0 = base
        .translate_tensor(&x, Domain::A, Domain::B, &StyleInput::ZeroStyle, 4)
        .unwrap();
    let mut perturbation_invariant = true;
    for k in 0..trials {
        let mut m = base.clone();
        perturb_gated(&mut m, 100 + k);
        let y = m
            .translate_tensor(&x, Domain::A, Domain::B, &StyleInput::ZeroStyle, 4)
            .unwrap();
        perturbation_invariant &= bits(&y) == bits(&y0);
    }

    let lambdas = Lambdas::default();
    let first = random_batch(config, 4, 13, true).unimodal_only();
    let reference = losses::total_objective(&base, &first, Mode::Hmu, &lambdas).unwrap();
    let mut latent_invariant = true;
    for k in 0..trials {
        let mut other = random_batch(config, 4, 200 + k, true).unimodal_only();
        other.xa = first.xa.clone();
        other.xb = first.xb.clone();
        let r = losses::total_objective(&base, &other, Mode::Hmu, &lambdas).unwrap();
        latent_invariant &= r.0.adv_g.to_bits() == reference.0.adv_g.to_bits()
            && r.2.to_bits() == reference.2.to_bits()
            && r.1.to_bits() == reference.1.to_bits();
    }
    let z = Tensor::from_fn(&[4, config.latent_dim], |_| rng.normal());
    let latent_rejected = base
        .translate_tensor(&x, Domain::A, Domain::B, &StyleInput::Latent(z), 4)
        .is_err();

    let mut max_gated_grad = 0f32;
    let mut max_bias_grad = 0f32;
    for mode in [Mode::Hmu, Mode::Hms] {
        let mut t = Tape::new();
        let p = base.bind(&mut t, |g| g != Group::Discriminator);
        let g = losses::generator_objective(&mut t, &p, &base, &first, mode, &lambdas).unwrap();
        t.backward(g.total.unwrap()).unwrap();
        for id in gated_ids(&base) {
            if let Some(g) = t.grad_of(p.var(id)) {
                max_gated_grad = max_gated_grad.max(g.max_abs());
            }
        }
        for id in base.style_bias_ids() {
            if let Some(g) = t.grad_of(p.var(id)) {
                max_bias_grad = max_bias_grad.max(g.max_abs());
            }
        }
    }
    GatingOutcome {
        perturbation_invariant,
        latent_invariant,
        latent_rejected,
        max_gated_grad,
        max_bias_grad,
    }
}

/// The diversity term on a batch with only uni-modal targets, per mode.
pub fn unimodal_diversity(mode: Mode, seed: u64) -> f64 {
    let config = tiny_model_config(mode.is_asymmetric());
    let model = ModelBundle::new(config.clone(), seed).unwrap();
    let batch = random_batch(&config, 4, seed + 1, true).unimodal_only();
    losses::total_objective(&model, &batch, mode, &Lambdas::default())
        .unwrap()
        .0
        .ds
}

// ---------------------------------------------------------------------------
// Channel mappers

pub struct MapperRun {
    pub steps: u64,
    pub round_trip_a: f64,
    pub round_trip_b: f64,
}

/// Round-trip L1 of both domains through the shared space.
pub fn round_trips(model: &ModelBundle, xa: &Tensor, xb: &Tensor) -> (f64, f64) {
    let mut t = Tape::new();
    let p = model.bind(&mut t, |_| false);
    let mut one = |x: &Tensor, d: Domain| {
        let xv = t.constant(x.clone());
        let h = model.channel_encode(&mut t, &p, xv, d).unwrap();
        let y = model.channel_decode(&mut t, &p, h, d).unwrap();
        let l = t.l1(y, xv).unwrap();
        t.value(l).item() as f64
    };
    (one(xa, Domain::A), one(xb, Domain::B))
}

const MAPPER_LR: (f32, f32) = (1e-1, 1e-4);
const MAPPER_HOLD: f32 = 0.6;

/// Randomizes the four mappers and trains only them on the channel-cycle
/// loss until both round trips fall below `target` or `max_steps` pass.
pub fn train_mappers(data: &PairedDataset, max_steps: u64, target: f64, seed: u64) -> MapperRun {
    let mut model = ModelBundle::new(
        ModelConfig {
            zero_style_gating: true,
            ..ModelConfig::default()
        },
        seed,
    )
    .unwrap();
    let ids = model.mapper_ids();
    let mut rng = DetRng::new(seed ^ 0x3a9);
    for id in ids {
        model
            .params
            .value_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.5 * rng.normal());
    }
    // A linear round trip cannot change orientation without passing through
    // a singular map, so each pair starts on the identity's side of it.
    let [a_to_s, s_to_a, b_to_s, s_to_b] = ids;
    let value = |id| model.params.get(id).value.data().to_vec();
    let det3 = |m: &[f32]| {
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
    };
    let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f32>();
    let flips = [
        (a_to_s, det3(&value(a_to_s)) * det3(&value(s_to_a)) < 0.0),
        (b_to_s, dot(&value(b_to_s), &value(s_to_b)) < 0.0),
    ];
    for (id, flip) in flips {
        if flip {
            model.params.value_mut(id).data_mut().iter_mut().for_each(|v| *v = -*v);
        }
    }
    let mut adam = Adam::new(&model.params);
    let colors = data.color_images();
    let grays = data.gray_images();
    let n = data.len();
    let bs = 16;
    let mut steps = 0;
    let eval_idx: Vec<usize> = (0..64.min(n)).collect();
    let pick = |idx: &[usize]| {
        let a: Vec<&[u8]> = idx.iter().map(|&i| colors[i]).collect();
        let b: Vec<&[u8]> = idx.iter().map(|&i| grays[i]).collect();
        (
            cmnist::to_model_tensor(&a, 3).unwrap(),
            cmnist::to_model_tensor(&b, 1).unwrap(),
        )
    };
    let (ea, eb) = pick(&eval_idx);
    let (mut ra, mut rb) = round_trips(&model, &ea, &eb);
    while steps < max_steps && (ra >= target || rb >= target) {
        let idx: Vec<usize> = (0..bs).map(|_| rng.below(n)).collect();
        let (xa, xb) = pick(&idx);
        let mut t = Tape::new();
        let p = model.bind(&mut t, |g| g == Group::Mappers);
        let va = t.constant(xa);
        let vb = t.constant(xb);
        let loss = losses::channel_cycle_loss(&mut t, &p, &model, va, vb).unwrap();
        t.backward(loss).unwrap();
        let grads: Vec<Option<Tensor>> = ids.iter().map(|&id| t.grad_of(p.var(id)).cloned()).collect();
        // Hold, then anneal geometrically: without momentum, Adam on an L1
        // loss moves in sign-like steps, and the background pixels pin the
        // round trip to their constraint long before the ink is fitted.
        let frac = ((steps as f32 / max_steps as f32 - MAPPER_HOLD) / (1.0 - MAPPER_HOLD)).max(0.0);
        let lr = MAPPER_LR.0 * (MAPPER_LR.1 / MAPPER_LR.0).powf(frac);
        steps += 1;
        adam.update(&mut model.params, &ids, &grads, |_| lr, steps);
        (ra, rb) = round_trips(&model, &ea, &eb);
    }
    MapperRun {
        steps,
        round_trip_a: ra,
        round_trip_b: rb,
    }
}

// ---------------------------------------------------------------------------
// Resume

pub fn tiny_train_config(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        steps: 12,
        batch_size: 2,
        base_channels: 4,
        max_channels: 8,
        style_dim: 4,
        latent_dim: 4,
        mapping_hidden: 8,
        eval_interval: 6,
        eval_samples: 6,
        seed: 5,
        ..TrainConfig::default()
    }
}

/// Encoded checkpoint after `total` uninterrupted steps, and after `split`
/// steps, a serialization round trip, and the remaining steps.
pub fn resume_pair(mode: Mode, data: &PairedDataset, split: u64, total: u64) -> (Vec<u8>, Vec<u8>) {
    let cfg = tiny_train_config(mode);
    let mut straight = Trainer::new(cfg.clone(), data.clone()).unwrap();
    for _ in 0..total {
        straight.step().unwrap().unwrap();
    }
    let mut first = Trainer::new(cfg.clone(), data.clone()).unwrap();
    for _ in 0..split {
        first.step().unwrap().unwrap();
    }
    let bytes = first.checkpoint().encode().unwrap();
    drop(first);
    let ck = asymtrans::m21gan::Checkpoint::decode(&bytes).unwrap();
    let mut resumed = Trainer::resume(cfg, data.clone(), &ck).unwrap();
    for _ in split..total {
        resumed.step().unwrap().unwrap();
    }
    (
        straight.checkpoint().encode().unwrap(),
        resumed.checkpoint().encode().unwrap(),
    )
}
