//! Building blocks of the translation networks.

use super::params::{Bound, Init, ParamId};
use crate::diffcore::{DiffError, Real, Tape, Var, DEMOD_EPS, LEAKY_SLOPE};

const RES_SCALE: f32 = std::f32::consts::FRAC_1_SQRT_2;

/// Adds a per-channel bias `[C]` to a tensor whose last axis is `C`.
pub(crate) fn add_channel_bias<T: Real>(tape: &mut Tape<T>, x: Var, bias: Var) -> Result<Var, DiffError> {
    let shape = tape.shape(x).to_vec();
    let c = *shape.last().unwrap_or(&0);
    let rows = tape.value(x).len() / c.max(1);
    let flat = tape.reshape(x, &[rows, c])?;
    let b = tape.broadcast_rows(bias, rows)?;
    let y = tape.add(flat, b)?;
    tape.reshape(y, &shape)
}

fn lrelu<T: Real>(tape: &mut Tape<T>, x: Var) -> Var {
    tape.leaky_relu(x, LEAKY_SLOPE)
}

/// Pre-activation residual block with optional instance norm and 2x
/// average-pool downsampling. `conv1` keeps the width, `conv2` changes it.
#[derive(Clone, Debug)]
pub(crate) struct ResBlock {
    conv1: ParamId,
    conv2: ParamId,
    shortcut: Option<ParamId>,
    norm: bool,
    down: bool,
}

impl ResBlock {
    pub fn new(init: &mut Init, cin: usize, cout: usize, norm: bool, down: bool) -> Self {
        ResBlock {
            conv1: init.kernel("conv1", 3, cin, cin),
            conv2: init.kernel("conv2", 3, cin, cout),
            shortcut: (cin != cout).then(|| init.kernel("skip", 1, cin, cout)),
            norm,
            down,
        }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, DiffError> {
        let mut sc = x;
        if let Some(k) = self.shortcut {
            sc = t.conv2d(sc, p.var(k), 1, 0)?;
        }
        if self.down {
            sc = t.avgpool2(sc)?;
        }
        let mut r = x;
        if self.norm {
            r = t.instance_norm(r)?;
        }
        r = lrelu(t, r);
        r = t.conv2d(r, p.var(self.conv1), 1, 1)?;
        if self.down {
            r = t.avgpool2(r)?;
        }
        if self.norm {
            r = t.instance_norm(r)?;
        }
        r = lrelu(t, r);
        r = t.conv2d(r, p.var(self.conv2), 1, 1)?;
        let sum = t.add(r, sc)?;
        Ok(t.scale(sum, RES_SCALE))
    }
}

/// Dense map from a style vector to per-channel modulation scales.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StyleAffine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl StyleAffine {
    fn new(init: &mut Init, local: &str, style_dim: usize, channels: usize) -> Self {
        let (weight, bias) = init.style_dense(local, style_dim, channels);
        StyleAffine { weight, bias }
    }

    fn forward<T: Real>(&self, t: &mut Tape<T>, p: &Bound, s: Var) -> Result<Var, DiffError> {
        t.dense(s, p.var(self.weight), p.var(self.bias))
    }
}

/// Residual decoder block whose convolutions are weight-demodulated by the
/// style, with optional 2x nearest-neighbour upsampling.
#[derive(Clone, Debug)]
pub(crate) struct DemodBlock {
    conv1: ParamId,
    affine1: StyleAffine,
    conv2: ParamId,
    affine2: StyleAffine,
    shortcut: Option<ParamId>,
    up: bool,
}

impl DemodBlock {
    pub fn new(init: &mut Init, cin: usize, cout: usize, style_dim: usize, up: bool) -> Self {
        DemodBlock {
            conv1: init.kernel("conv1", 3, cin, cout),
            affine1: StyleAffine::new(init, "style1", style_dim, cin),
            conv2: init.kernel("conv2", 3, cout, cout),
            affine2: StyleAffine::new(init, "style2", style_dim, cout),
            shortcut: (cin != cout).then(|| init.kernel("skip", 1, cin, cout)),
            up,
        }
    }

    pub fn affines(&self) -> [StyleAffine; 2] {
        [self.affine1, self.affine2]
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &Bound, x: Var, s: Var) -> Result<Var, DiffError> {
        let mut sc = x;
        if self.up {
            sc = t.upsample2(sc)?;
        }
        if let Some(k) = self.shortcut {
            sc = t.conv2d(sc, p.var(k), 1, 0)?;
        }
        let mut r = lrelu(t, x);
        if self.up {
            r = t.upsample2(r)?;
        }
        let scale1 = self.affine1.forward(t, p, s)?;
        r = t.demod_conv(r, p.var(self.conv1), scale1, DEMOD_EPS, 1)?;
        r = lrelu(t, r);
        let scale2 = self.affine2.forward(t, p, s)?;
        r = t.demod_conv(r, p.var(self.conv2), scale2, DEMOD_EPS, 1)?;
        let sum = t.add(r, sc)?;
        Ok(t.scale(sum, RES_SCALE))
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(init: &mut Init, local: &str, din: usize, dout: usize) -> Self {
        let (weight, bias) = init.dense(local, din, dout);
        Dense { weight, bias }
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, DiffError> {
        t.dense(x, p.var(self.weight), p.var(self.bias))
    }
}

/// Convolutional trunk shared by the style encoder and discriminator:
/// residual downsampling to 4x4, then a 4x4 valid convolution to a vector.
#[derive(Clone, Debug)]
pub(crate) struct Trunk {
    blocks: Vec<ResBlock>,
    last: ParamId,
    pub width: usize,
}

impl Trunk {
    pub fn new(init: &mut Init, side: usize, base: usize, max: usize) -> Self {
        let mut blocks = Vec::new();
        let mut c = base;
        let mut s = side;
        let mut i = 0;
        while s > 4 {
            let cout = (2 * c).min(max);
            blocks.push(ResBlock::new(
                &mut init.scope(&format!("block{i}")),
                c,
                cout,
                false,
                true,
            ));
            c = cout;
            s /= 2;
            i += 1;
        }
        let last = init.kernel("last", 4, c, c);
        Trunk { blocks, last, width: c }
    }

    /// `[N, side, side, base] -> [N, width]`.
    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, DiffError> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(t, p, h)?;
        }
        h = lrelu(t, h);
        h = t.conv2d(h, p.var(self.last), 1, 0)?;
        h = lrelu(t, h);
        let n = t.shape(h)[0];
        t.reshape(h, &[n, self.width])
    }
}
