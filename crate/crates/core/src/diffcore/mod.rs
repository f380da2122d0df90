//! Minimal reverse-mode differentiable tensor core.
//!
//! Exactly the operations the translation networks need: convolutions
//! (plain and weight-demodulated), dense layers, pointwise nonlinearities,
//! instance normalization, 2x resampling and the reductions used by the
//! losses. Gradients are verified against central finite differences in
//! [`gradcheck`].

pub mod gradcheck;
mod kernels;
mod real;
mod tape;
mod tensor;

pub use kernels::ConvGeom;
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("backward already ran on this tape; build a new tape for the next step")]
    BackwardTwice,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("output does not depend on any tracked input")]
    Untracked,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub const LEAKY_SLOPE: f32 = 0.2;
pub const DEMOD_EPS: f32 = 1e-8;
pub const NORM_EPS: f32 = 1e-5;

impl<T: Real> Tape<T> {
    /// Weight-demodulated convolution.
    ///
    /// Per sample `n`, the kernel is modulated as `w[.,.,i,o] * scale[n,i]`
    /// and each output channel is renormalized by
    /// `1 / sqrt(sum_{kh,kw,i} w'^2 + eps)`. Computed without materializing
    /// per-sample kernels: the input is scaled per channel, convolved with
    /// the shared kernel, and the output is scaled by the demodulation factor.
    pub fn demod_conv(&mut self, x: Var, kernel: Var, scale: Var, eps: f32, pad: usize) -> Result<Var, DiffError> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(DiffError::Invalid(format!(
                "demodulation eps must be positive, got {eps}"
            )));
        }
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 4 {
            return Err(DiffError::Shape(format!(
                "demod_conv kernel must be rank 4, got {ks:?}"
            )));
        }
        let (taps, cin, cout) = (ks[0] * ks[1], ks[2], ks[3]);
        let modulated = self.scale_channels(x, scale)?;
        let y = self.conv2d(modulated, kernel, 1, pad)?;

        let w2 = self.square(kernel);
        let w2 = self.reshape(w2, &[taps, cin * cout])?;
        let w2 = self.sum_rows(w2)?;
        let w2 = self.reshape(w2, &[cin, cout])?;
        let s2 = self.square(scale);
        let energy = self.matmul(s2, w2)?;
        let energy = self.add_scalar(energy, eps);
        let demod = self.rsqrt(energy);
        self.scale_channels(y, demod)
    }

    /// Per-sample, per-channel normalization over spatial positions (no affine).
    pub fn instance_norm(&mut self, x: Var) -> Result<Var, DiffError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(DiffError::Shape(format!("instance_norm expects [N,H,W,C], got {s:?}")));
        }
        let mu = self.spatial_mean(x)?;
        let mu = self.broadcast_spatial(mu, s[1], s[2])?;
        let centered = self.sub(x, mu)?;
        let sq = self.square(centered);
        let var = self.spatial_mean(sq)?;
        let var = self.add_scalar(var, NORM_EPS);
        let inv = self.rsqrt(var);
        self.scale_channels(centered, inv)
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let d = self.sub(a, b)?;
        let d = self.abs(d);
        Ok(self.mean_all(d))
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let d = self.sub(a, b)?;
        let d = self.square(d);
        Ok(self.mean_all(d))
    }
}
