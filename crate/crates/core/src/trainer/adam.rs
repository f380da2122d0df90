use crate::diffcore::Tensor;
use crate::m21gan::{Checkpoint, ParamId, ParamStore};

pub const BETA1: f64 = 0.0;
pub const BETA2: f64 = 0.99;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for every parameter of a store, index-aligned with it.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update at step `t` (1-based) to `ids`. Missing gradients
    /// count as zero.
    pub fn update(
        &mut self,
        store: &mut ParamStore,
        ids: &[ParamId],
        grads: &[Option<Tensor>],
        lr: impl Fn(ParamId) -> f32,
        t: u64,
    ) {
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        for (&id, g) in ids.iter().zip(grads) {
            let i = id.index();
            let lr = lr(id) as f64;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.value_mut(id);
            for j in 0..p.len() {
                let gj = g.as_ref().map_or(0.0, |g| g.data()[j] as f64);
                let mj = BETA1 * m.data()[j] as f64 + (1.0 - BETA1) * gj;
                let vj = BETA2 * v.data()[j] as f64 + (1.0 - BETA2) * gj * gj;
                m.data_mut()[j] = mj as f32;
                v.data_mut()[j] = vj as f32;
                let step = lr * (mj / bc1) / ((vj / bc2).sqrt() + EPSILON);
                p.data_mut()[j] = (p.data()[j] as f64 - step) as f32;
            }
        }
    }

    pub fn to_blobs(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.m.len());
        for (p, (m, v)) in store.iter().zip(self.m.iter().zip(&self.v)) {
            out.push((format!("{M_PREFIX}{}", p.name), m.clone()));
            out.push((format!("{V_PREFIX}{}", p.name), v.clone()));
        }
        out
    }

    /// Restores moments from a checkpoint written with [`Adam::to_blobs`].
    pub fn from_checkpoint(store: &ParamStore, ck: &Checkpoint) -> Result<Self, String> {
        let mut adam = Adam::new(store);
        for (i, p) in store.iter().enumerate() {
            for (prefix, dst) in [(M_PREFIX, &mut adam.m[i]), (V_PREFIX, &mut adam.v[i])] {
                let name = format!("{prefix}{}", p.name);
                let blob = ck
                    .blob(&name)
                    .ok_or_else(|| format!("missing optimizer state {name}"))?;
                if blob.shape() != p.value.shape() {
                    return Err(format!("optimizer state {name} has shape {:?}", blob.shape()));
                }
                *dst = blob.clone();
            }
        }
        Ok(adam)
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data().iter())
        .map(|&v| v as f64 * v as f64)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let k = (max_norm / norm) as f32;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}
