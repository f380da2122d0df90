//! Asymmetric many-to-one translation networks.
//!
//! One generator serves both domains through a 3-channel shared space:
//! per-domain 1x1 channel mappers encode images into that space and decode
//! them back. The decoder's convolutions are weight-demodulated by a style
//! vector; for a uni-modal target the style is fixed at zero, so modulation
//! reduces to the dense layers' biases and nothing upstream of the style can
//! influence the output.

pub mod checkpoint;
mod layers;
mod params;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmnist::rng::DetRng;
use crate::diffcore::{DiffError, Real, Tape, Tensor, Var};
pub use checkpoint::Checkpoint;
use layers::{add_channel_bias, DemodBlock, Dense, ResBlock, Trunk};
use params::Init;
pub use params::{Bound, Group, Kind, Param, ParamId, ParamStore};

/// Channels of the shared space every domain is mapped into.
pub const SHARED_CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("gating contract: {0}")]
    Gating(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint fingerprint {found:08x} does not match configuration {expected:08x}")]
    Fingerprint { expected: u32, found: u32 },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Uni,
    Multi,
}

/// The two image domains: A holds colorized digits (multi-modal), B the
/// grayscale originals (uni-modal).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::A, Domain::B];

    pub fn channels(self) -> usize {
        match self {
            Domain::A => 3,
            Domain::B => 1,
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            Domain::A => Modality::Multi,
            Domain::B => Modality::Uni,
        }
    }

    pub fn is_unimodal(self) -> bool {
        self.modality() == Modality::Uni
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::A => Domain::B,
            Domain::B => Domain::A,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::A => "A",
            Domain::B => "B",
        })
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "color" => Ok(Domain::A),
            "b" | "gray" | "grey" => Ok(Domain::B),
            other => Err(format!("unknown domain '{other}', expected A|color or B|gray")),
        }
    }
}

/// Architecture hyper-parameters. Serialized into checkpoints; its
/// fingerprint guards against loading weights into a different layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_side: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub style_dim: usize,
    pub latent_dim: usize,
    pub mapping_hidden: usize,
    /// Force the zero style for uni-modal targets.
    pub zero_style_gating: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_side: 32,
            base_channels: 8,
            max_channels: 32,
            style_dim: 16,
            latent_dim: 16,
            mapping_hidden: 64,
            zero_style_gating: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let s = self.image_side;
        if s < 8 || !s.is_power_of_two() {
            return Err(ModelError::Config(format!(
                "image_side must be a power of two >= 8, got {s}"
            )));
        }
        for (name, v) in [
            ("base_channels", self.base_channels),
            ("max_channels", self.max_channels),
            ("style_dim", self.style_dim),
            ("latent_dim", self.latent_dim),
            ("mapping_hidden", self.mapping_hidden),
        ] {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.max_channels < self.base_channels {
            return Err(ModelError::Config("max_channels is below base_channels".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn fingerprint(&self) -> u32 {
        crc32fast::hash(self.to_json().as_bytes())
    }
}

/// Where a translation's style comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    /// Latent code `[N, latent_dim]` passed through the mapping network.
    Latent(Var),
    /// Reference image in the target domain passed through the style encoder.
    Guide(Var),
    /// Explicit style vectors `[N, style_dim]`.
    Vector(Var),
    /// Content-only generation.
    ZeroStyle,
}

#[derive(Clone, Debug)]
struct Mappers {
    to_shared: [ParamId; 2],
    from_shared: [ParamId; 2],
}

#[derive(Clone, Debug)]
struct Generator {
    from_rgb: ParamId,
    encoder: Vec<ResBlock>,
    decoder: Vec<DemodBlock>,
    to_rgb: ParamId,
    to_rgb_bias: ParamId,
}

#[derive(Clone, Debug)]
struct StyleEncoder {
    stem: ParamId,
    trunk: Trunk,
    heads: [Dense; 2],
}

#[derive(Clone, Debug)]
struct Mapping {
    trunk: Vec<Dense>,
    heads: [Dense; 2],
}

#[derive(Clone, Debug)]
struct Discriminator {
    stems: [ParamId; 2],
    trunk: Trunk,
    heads: [Dense; 2],
}

/// Parameters of every network plus the layer wiring that uses them.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub step: u64,
    mappers: Mappers,
    generator: Generator,
    encoder: StyleEncoder,
    mapping: Mapping,
    discriminator: Discriminator,
}

fn init<'a>(store: &'a mut ParamStore, rng: &mut DetRng, group: Group, prefix: &str) -> Init<'a> {
    Init {
        store,
        rng: rng.fork(group as u64),
        group,
        prefix: prefix.to_string(),
    }
}

impl ModelBundle {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::default();
        let mut rng = DetRng::new(seed);
        let c = &config;
        let c0 = c.base_channels;
        let c1 = (2 * c0).min(c.max_channels);
        let c2 = (2 * c1).min(c.max_channels);

        // Mappers start as an exact inverse pair: color passes through,
        // gray is replicated into the shared space and averaged back out.
        let mappers = {
            let mut i = init(&mut store, &mut rng, Group::Mappers, "C");
            let s = SHARED_CHANNELS;
            let eye = |n: usize| Tensor::from_fn(&[1, 1, n, n], |k| if k / n == k % n { 1.0 } else { 0.0 });
            Mappers {
                to_shared: [
                    i.kernel_fixed("a_to_s", eye(s)),
                    i.kernel_fixed("b_to_s", Tensor::full(&[1, 1, 1, s], 1.0)),
                ],
                from_shared: [
                    i.kernel_fixed("s_to_a", eye(s)),
                    i.kernel_fixed("s_to_b", Tensor::full(&[1, 1, s, 1], 1.0 / s as f32)),
                ],
            }
        };

        let generator = {
            let mut i = init(&mut store, &mut rng, Group::Generator, "G");
            let from_rgb = i.kernel("from_rgb", 3, SHARED_CHANNELS, c0);
            let encoder = vec![
                ResBlock::new(&mut i.scope("enc0"), c0, c1, true, true),
                ResBlock::new(&mut i.scope("enc1"), c1, c2, true, true),
                ResBlock::new(&mut i.scope("enc2"), c2, c2, true, false),
                ResBlock::new(&mut i.scope("enc3"), c2, c2, true, false),
            ];
            let decoder = vec![
                DemodBlock::new(&mut i.scope("dec0"), c2, c2, c.style_dim, false),
                DemodBlock::new(&mut i.scope("dec1"), c2, c2, c.style_dim, false),
                DemodBlock::new(&mut i.scope("dec2"), c2, c1, c.style_dim, true),
                DemodBlock::new(&mut i.scope("dec3"), c1, c0, c.style_dim, true),
            ];
            let to_rgb = i.kernel("to_rgb", 1, c0, SHARED_CHANNELS);
            let to_rgb_bias = i.store.add(
                "G.to_rgb_bias".into(),
                Group::Generator,
                Kind::Bias,
                Tensor::zeros(&[SHARED_CHANNELS]),
            );
            Generator {
                from_rgb,
                encoder,
                decoder,
                to_rgb,
                to_rgb_bias,
            }
        };

        let encoder = {
            let mut i = init(&mut store, &mut rng, Group::StyleEncoder, "E");
            let stem = i.kernel("stem", 3, SHARED_CHANNELS, c0);
            let trunk = Trunk::new(&mut i.scope("trunk"), c.image_side, c0, c.max_channels);
            let w = trunk.width;
            let heads = [
                Dense::new(&mut i, "head_a", w, c.style_dim),
                Dense::new(&mut i, "head_b", w, c.style_dim),
            ];
            StyleEncoder { stem, trunk, heads }
        };

        let mapping = {
            let mut i = init(&mut store, &mut rng, Group::Mapping, "F");
            let h = c.mapping_hidden;
            let trunk = vec![
                Dense::new(&mut i, "fc0", c.latent_dim, h),
                Dense::new(&mut i, "fc1", h, h),
                Dense::new(&mut i, "fc2", h, h),
                Dense::new(&mut i, "fc3", h, h),
            ];
            let heads = [
                Dense::new(&mut i, "head_a", h, c.style_dim),
                Dense::new(&mut i, "head_b", h, c.style_dim),
            ];
            Mapping { trunk, heads }
        };

        let discriminator = {
            let mut i = init(&mut store, &mut rng, Group::Discriminator, "D");
            let stems = [i.kernel("stem_a", 3, 3, c0), i.kernel("stem_b", 3, 1, c0)];
            let trunk = Trunk::new(&mut i.scope("trunk"), c.image_side, c0, c.max_channels);
            let w = trunk.width;
            let heads = [Dense::new(&mut i, "head_a", w, 1), Dense::new(&mut i, "head_b", w, 1)];
            Discriminator { stems, trunk, heads }
        };

        Ok(ModelBundle {
            config,
            params: store,
            step: 0,
            mappers,
            generator,
            encoder,
            mapping,
            discriminator,
        })
    }

    pub fn fingerprint(&self) -> u32 {
        self.config.fingerprint()
    }

    /// Binds all parameters to `tape`, tracking the groups `trainable` selects.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, trainable: impl Fn(Group) -> bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    /// Ids of the dense weight matrices (not biases) producing demodulation scales.
    pub fn style_weight_ids(&self) -> Vec<ParamId> {
        self.generator
            .decoder
            .iter()
            .flat_map(|b| b.affines())
            .map(|a| a.weight)
            .collect()
    }

    /// Ids of the dense biases producing demodulation scales.
    pub fn style_bias_ids(&self) -> Vec<ParamId> {
        self.generator
            .decoder
            .iter()
            .flat_map(|b| b.affines())
            .map(|a| a.bias)
            .collect()
    }

    pub fn mapper_ids(&self) -> [ParamId; 4] {
        [
            self.mappers.to_shared[0],
            self.mappers.from_shared[0],
            self.mappers.to_shared[1],
            self.mappers.from_shared[1],
        ]
    }

    fn check_channels<T: Real>(tape: &Tape<T>, x: Var, d: Domain) -> Result<(), ModelError> {
        let s = tape.shape(x);
        if s.len() != 4 || s[3] != d.channels() {
            return Err(ModelError::Diff(DiffError::Shape(format!(
                "domain {d} expects [N,H,W,{}], got {s:?}",
                d.channels()
            ))));
        }
        Ok(())
    }

    /// 1x1 convolution from domain channels into the shared space.
    pub fn channel_encode<T: Real>(&self, t: &mut Tape<T>, p: &Bound, x: Var, d: Domain) -> Result<Var, ModelError> {
        Self::check_channels(t, x, d)?;
        Ok(t.conv2d(x, p.var(self.mappers.to_shared[d.index()]), 1, 0)?)
    }

    /// 1x1 convolution from the shared space into domain channels.
    pub fn channel_decode<T: Real>(&self, t: &mut Tape<T>, p: &Bound, h: Var, d: Domain) -> Result<Var, ModelError> {
        let s = t.shape(h);
        if s.len() != 4 || s[3] != SHARED_CHANNELS {
            return Err(ModelError::Diff(DiffError::Shape(format!(
                "shared-space tensor must be [N,H,W,{SHARED_CHANNELS}], got {s:?}"
            ))));
        }
        Ok(t.conv2d(h, p.var(self.mappers.from_shared[d.index()]), 1, 0)?)
    }

    /// Shared-space generator: residual encoder, style-demodulated decoder.
    pub fn generator_forward<T: Real>(&self, t: &mut Tape<T>, p: &Bound, h: Var, s: Var) -> Result<Var, ModelError> {
        let g = &self.generator;
        let mut x = t.conv2d(h, p.var(g.from_rgb), 1, 1)?;
        for b in &g.encoder {
            x = b.forward(t, p, x)?;
        }
        for b in &g.decoder {
            x = b.forward(t, p, x, s)?;
        }
        x = t.leaky_relu(x, crate::diffcore::LEAKY_SLOPE);
        x = t.conv2d(x, p.var(g.to_rgb), 1, 0)?;
        Ok(add_channel_bias(t, x, p.var(g.to_rgb_bias))?)
    }

    /// Style vectors `[N, style_dim]` extracted from images of domain `d`.
    pub fn style_encode<T: Real>(&self, t: &mut Tape<T>, p: &Bound, x: Var, d: Domain) -> Result<Var, ModelError> {
        let h = self.channel_encode(t, p, x, d)?;
        let e = &self.encoder;
        let h = t.conv2d(h, p.var(e.stem), 1, 1)?;
        let h = e.trunk.forward(t, p, h)?;
        Ok(e.heads[d.index()].forward(t, p, h)?)
    }

    /// Style vectors `[N, style_dim]` for latent codes `[N, latent_dim]`.
    pub fn map_latent<T: Real>(&self, t: &mut Tape<T>, p: &Bound, z: Var, d: Domain) -> Result<Var, ModelError> {
        let mut h = z;
        for layer in &self.mapping.trunk {
            h = layer.forward(t, p, h)?;
            h = t.leaky_relu(h, 0.0);
        }
        Ok(self.mapping.heads[d.index()].forward(t, p, h)?)
    }

    /// Real/fake logits `[N]` for images of domain `d`.
    pub fn discriminate<T: Real>(&self, t: &mut Tape<T>, p: &Bound, x: Var, d: Domain) -> Result<Var, ModelError> {
        Self::check_channels(t, x, d)?;
        let dn = &self.discriminator;
        let h = t.conv2d(x, p.var(dn.stems[d.index()]), 1, 1)?;
        let h = dn.trunk.forward(t, p, h)?;
        let logit = dn.heads[d.index()].forward(t, p, h)?;
        let n = t.shape(logit)[0];
        Ok(t.reshape(logit, &[n])?)
    }

    /// Resolves a style source for `n` samples targeting `target`, enforcing
    /// the zero style for uni-modal targets when gating is on.
    pub fn resolve_style<T: Real>(
        &self,
        t: &mut Tape<T>,
        p: &Bound,
        n: usize,
        target: Domain,
        style: Style,
    ) -> Result<Var, ModelError> {
        if self.config.zero_style_gating && target.is_unimodal() && style != Style::ZeroStyle {
            return Err(ModelError::Gating(format!(
                "uni-modal target {target} only accepts ZeroStyle, got {style:?}"
            )));
        }
        let s = match style {
            Style::Latent(z) => self.map_latent(t, p, z, target)?,
            Style::Guide(x) => self.style_encode(t, p, x, target)?,
            Style::Vector(s) => s,
            Style::ZeroStyle => t.constant(Tensor::<T>::zeros(&[n, self.config.style_dim])),
        };
        if t.shape(s) != [n, self.config.style_dim] {
            return Err(ModelError::Diff(DiffError::Shape(format!(
                "style must be [{n}, {}], got {:?}",
                self.config.style_dim,
                t.shape(s)
            ))));
        }
        Ok(s)
    }

    /// `tanh(decode_t(G(encode_s(x), s)))`, an image in the target domain.
    pub fn translate<T: Real>(
        &self,
        t: &mut Tape<T>,
        p: &Bound,
        x: Var,
        source: Domain,
        target: Domain,
        style: Style,
    ) -> Result<Var, ModelError> {
        let n = t.shape(x).first().copied().unwrap_or(0);
        let s = self.resolve_style(t, p, n, target, style)?;
        self.translate_with_style(t, p, x, source, target, s)
    }

    /// Translation with already-resolved style vectors (no gating check).
    pub(crate) fn translate_with_style<T: Real>(
        &self,
        t: &mut Tape<T>,
        p: &Bound,
        x: Var,
        source: Domain,
        target: Domain,
        s: Var,
    ) -> Result<Var, ModelError> {
        let h = self.channel_encode(t, p, x, source)?;
        let h = self.generator_forward(t, p, h, s)?;
        let y = self.channel_decode(t, p, h, target)?;
        Ok(t.tanh(y))
    }

    /// Untracked batched inference: translates `x` in chunks of `chunk`.
    pub fn translate_tensor(
        &self,
        x: &Tensor,
        source: Domain,
        target: Domain,
        style: &StyleInput,
        chunk: usize,
    ) -> Result<Tensor, ModelError> {
        let n = x.shape().first().copied().unwrap_or(0);
        let chunk = chunk.max(1);
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let mut tape = Tape::new();
            let p = self.bind(&mut tape, |_| false);
            let xv = tape.constant(x.gather_batch(&idx));
            let st = match style {
                StyleInput::Latent(z) => Style::Latent(tape.constant(z.gather_batch(&idx))),
                StyleInput::Guide(g) => Style::Guide(tape.constant(g.gather_batch(&idx))),
                StyleInput::ZeroStyle => Style::ZeroStyle,
            };
            let y = self.translate(&mut tape, &p, xv, source, target, st)?;
            parts.push(tape.value(y).clone());
            start = end;
        }
        if parts.is_empty() {
            let s = self.config.image_side;
            return Ok(Tensor::zeros(&[0, s, s, target.channels()]));
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(Tensor::concat_batch(&refs)?)
    }

    /// Standard-normal latent codes `[n, latent_dim]`.
    pub fn sample_latents(&self, n: usize, rng: &mut DetRng) -> Tensor {
        Tensor::from_fn(&[n, self.config.latent_dim], |_| rng.normal())
    }

    /// Model parameters as named checkpoint blobs.
    pub fn to_blobs(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            fingerprint: self.fingerprint(),
            step: self.step,
            meta: self.config.to_json(),
            blobs: self.to_blobs(),
        }
    }

    /// Rebuilds a model from a checkpoint. When `expected` is given, the
    /// stored fingerprint must match it. Blobs not naming a model parameter
    /// (optimizer state) are ignored.
    pub fn from_checkpoint(ck: &Checkpoint, expected: Option<&ModelConfig>) -> Result<Self, ModelError> {
        let config: ModelConfig =
            serde_json::from_str(&ck.meta).map_err(|e| ModelError::Checkpoint(format!("bad metadata: {e}")))?;
        if config.fingerprint() != ck.fingerprint {
            return Err(ModelError::Fingerprint {
                expected: config.fingerprint(),
                found: ck.fingerprint,
            });
        }
        if let Some(exp) = expected {
            if exp.fingerprint() != ck.fingerprint {
                return Err(ModelError::Fingerprint {
                    expected: exp.fingerprint(),
                    found: ck.fingerprint,
                });
            }
        }
        let mut model = ModelBundle::new(config, 0)?;
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.get(id).name.clone();
            let blob = ck
                .blob(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
            if blob.shape() != model.params.get(id).value.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    blob.shape(),
                    model.params.get(id).value.shape()
                )));
            }
            *model.params.value_mut(id) = blob.clone();
        }
        model.step = ck.step;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self, ModelError> {
        Self::from_checkpoint(&Checkpoint::read(path)?, expected)
    }
}

/// Owned style source for [`ModelBundle::translate_tensor`].
#[derive(Clone, Debug)]
pub enum StyleInput {
    Latent(Tensor),
    Guide(Tensor),
    ZeroStyle,
}
