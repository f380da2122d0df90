//! Central finite-difference verification of tape gradients.
//!
//! The function under test maps leaves to an output tensor of any shape and
//! is generic over the element type. Both routes reduce the output with the
//! same fixed random projection `L = sum_i r_i * y_i`. The analytic route
//! runs forward and backward on an `f32` tape (or any precision via
//! [`check_in`]); the numeric route replays
//! only forward passes on an `f64` tape, so it never touches backward code
//! and its differences are not swamped by single-precision rounding.

use super::{DiffError, Real, Tape, Tensor, Var};
use crate::cmnist::rng::DetRng;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// A function evaluable on tapes of either precision.
pub trait Probe {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Result<Var, DiffError>;
}

/// Builds a capture-free [`Probe`] from a body written against `tape` and `v`.
#[macro_export]
macro_rules! probe {
    (|$tape:ident, $v:ident| $body:block) => {{
        struct AdHocProbe;
        impl $crate::diffcore::gradcheck::Probe for AdHocProbe {
            fn eval<T: $crate::diffcore::Real>(
                &self,
                $tape: &mut $crate::diffcore::Tape<T>,
                $v: &[$crate::diffcore::Var],
            ) -> Result<$crate::diffcore::Var, $crate::diffcore::DiffError> {
                $body
            }
        }
        AdHocProbe
    }};
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-element relative error across all inputs.
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn projection(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = DetRng::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    Tensor::from_fn(shape, |_| rng.uniform_f64() * 2.0 - 1.0)
}

fn forward_f64<P: Probe>(probe: &P, inputs: &[Tensor<f64>], proj: &Tensor<f64>) -> Result<f64, DiffError> {
    let mut tape = Tape::<f64>::default();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = probe.eval(&mut tape, &vars)?;
    let y = tape.value(out);
    if y.shape() != proj.shape() {
        return Err(DiffError::Shape("probe output shape changed under perturbation".into()));
    }
    Ok(y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
}

/// Backward gradients of the projected output on an `f32` tape.
pub fn analytic_gradients<P: Probe>(inputs: &[Tensor], probe: &P, seed: u64) -> Result<Vec<Tensor>, DiffError> {
    analytic_gradients_in::<f32, P>(inputs, probe, seed)
}

/// Backward gradients of the projected output on a tape of precision `T`.
pub fn analytic_gradients_in<T: Real, P: Probe>(
    inputs: &[Tensor],
    probe: &P,
    seed: u64,
) -> Result<Vec<Tensor<T>>, DiffError> {
    let mut tape = Tape::<T>::default();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.cast::<T>(), true)).collect();
    let out = probe.eval(&mut tape, &vars)?;
    let proj = projection(tape.shape(out), seed).cast::<T>();
    let r = tape.constant(proj);
    let weighted = tape.mul(out, r)?;
    let loss = tape.sum_all(weighted);
    tape.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad_of(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Central differences `(L(x+h) - L(x-h)) / 2h` in 64-bit, per input element.
pub fn numeric_gradients<P: Probe>(
    inputs: &[Tensor],
    probe: &P,
    step: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>, DiffError> {
    let base: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast::<f64>()).collect();
    let mut tape = Tape::<f64>::default();
    let vars: Vec<Var> = base.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = probe.eval(&mut tape, &vars)?;
    let proj = projection(tape.shape(out), seed);
    drop(tape);

    let mut result = Vec::with_capacity(inputs.len());
    let mut work = base.clone();
    for k in 0..base.len() {
        let mut g = vec![0f64; base[k].len()];
        for (j, slot) in g.iter_mut().enumerate() {
            let x0 = base[k].data()[j];
            work[k].data_mut()[j] = x0 + step;
            let fp = forward_f64(probe, &work, &proj)?;
            work[k].data_mut()[j] = x0 - step;
            let fm = forward_f64(probe, &work, &proj)?;
            work[k].data_mut()[j] = x0;
            *slot = (fp - fm) / (2.0 * step);
        }
        result.push(g);
    }
    Ok(result)
}

/// Compares `f32` backward gradients of every input against central differences.
///
/// Relative error per element is `|a - n| / max(|a|, |n|, floor)`, where the
/// floor is `1e-2 * max|n|` over all inputs, so entries that are tiny
/// relative to the gradient's scale (including inputs the output does not
/// depend on) do not dominate.
pub fn check<P: Probe>(inputs: &[Tensor], probe: &P, step: f64, seed: u64) -> Result<GradCheckReport, DiffError> {
    check_in::<f32, P>(inputs, probe, step, seed)
}

/// [`check`] with the backward pass run at precision `T`.
pub fn check_in<T: Real, P: Probe>(
    inputs: &[Tensor],
    probe: &P,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport, DiffError> {
    let analytic = analytic_gradients_in::<T, P>(inputs, probe, seed)?;
    let numeric = numeric_gradients(inputs, probe, step, seed)?;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let floor = 1e-2 * numeric.iter().flatten().fold(0f64, |m, v| m.max(v.abs()));
    for (k, (a_t, n_v)) in analytic.iter().zip(&numeric).enumerate() {
        for (j, &n) in n_v.iter().enumerate() {
            let a = a_t.data()[j].to_f64();
            let denom = a.abs().max(n.abs()).max(floor).max(1e-12);
            let rel = (a - n).abs() / denom;
            if rel > report.max_rel_err {
                report = GradCheckReport {
                    max_rel_err: rel,
                    worst: (k, j),
                    analytic: a,
                    numeric: n,
                };
            }
        }
    }
    Ok(report)
}
