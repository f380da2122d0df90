//! Training objectives.
//!
//! Three modes share one set of terms. BASELINE is the symmetric starting
//! point: styles for every target, diversity on every target. HMU adds the
//! channel cycle loss, zero-style gating, and restricts every style-dependent
//! term (diversity, style reconstruction, cycle) to multi-modal targets.
//! HMS is HMU plus a supervised L1 term on paired batches.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Real, Tape, Tensor, Var};
use crate::m21gan::{Bound, Domain, ModelBundle, ModelError, Style};

pub const R1_GAMMA: f32 = 1.0;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("loss contract: {0}")]
    Contract(String),
    #[error("supervised loss needs a paired batch")]
    Unpaired,
}

impl From<DiffError> for LossError {
    fn from(e: DiffError) -> Self {
        LossError::Model(ModelError::Diff(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Baseline,
    Hmu,
    Hms,
}

impl Mode {
    /// Whether uni-modal targets are gated and excluded from style terms.
    pub fn is_asymmetric(self) -> bool {
        self != Mode::Baseline
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "BASELINE",
            Mode::Hmu => "HMU",
            Mode::Hms => "HMS",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BASELINE" => Ok(Mode::Baseline),
            "HMU" => Ok(Mode::Hmu),
            "HMS" => Ok(Mode::Hms),
            other => Err(format!("unknown mode '{other}', expected BASELINE, HMU or HMS")),
        }
    }
}

/// Weight of every term; all 1 unless overridden.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lambdas {
    pub adv: f32,
    pub r1: f32,
    pub style_recon: f32,
    pub cycle: f32,
    pub ch_cyc: f32,
    pub ds: f32,
    pub sup: f32,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas {
            adv: 1.0,
            r1: 1.0,
            style_recon: 1.0,
            cycle: 1.0,
            ch_cyc: 1.0,
            ds: 1.0,
            sup: 1.0,
        }
    }
}

impl Lambdas {
    pub fn scaled(self, k: f32) -> Self {
        Lambdas {
            adv: self.adv * k,
            r1: self.r1 * k,
            style_recon: self.style_recon * k,
            cycle: self.cycle * k,
            ch_cyc: self.ch_cyc * k,
            ds: self.ds * k,
            sup: self.sup * k,
        }
    }
}

/// Named scalars of one training step. Skipped terms report 0; `sup` is
/// `None` outside HMS.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossReport {
    pub adv_d: f64,
    pub adv_g: f64,
    pub r1: f64,
    pub style_recon: f64,
    pub cycle: f64,
    pub ch_cyc: f64,
    pub ds: f64,
    pub sup: Option<f64>,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,adv_d,adv_g,r1,style_recon,cycle,ch_cyc,ds,sup";

    pub fn all_finite(&self) -> bool {
        [
            self.adv_d,
            self.adv_g,
            self.r1,
            self.style_recon,
            self.cycle,
            self.ch_cyc,
            self.ds,
        ]
        .iter()
        .chain(self.sup.iter())
        .all(|v| v.is_finite())
    }

    pub fn csv_row(&self, step: u64) -> String {
        let sup = self.sup.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{step},{},{},{},{},{},{},{},{sup}",
            self.adv_d, self.adv_g, self.r1, self.style_recon, self.cycle, self.ch_cyc, self.ds
        )
    }
}

/// One minibatch. `xa` and `xb` are model-space images; when `paired`,
/// row `i` of both shows the same digit. Latent pairs drive the two styles
/// each content image receives per target domain.
#[derive(Clone, Debug)]
pub struct Batch {
    pub xa: Tensor,
    pub xb: Tensor,
    pub paired: bool,
    pub za: [Tensor; 2],
    pub zb: [Tensor; 2],
    /// Generate towards A (from `xb`).
    pub to_a: bool,
    /// Generate towards B (from `xa`).
    pub to_b: bool,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.xa.shape().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same batch restricted to uni-modal (B) targets.
    pub fn unimodal_only(mut self) -> Self {
        self.to_a = false;
        self.to_b = true;
        self
    }
}

fn check_mode(model: &ModelBundle, mode: Mode) -> Result<(), LossError> {
    if model.config.zero_style_gating != mode.is_asymmetric() {
        return Err(LossError::Contract(format!(
            "mode {mode} needs zero_style_gating = {}",
            mode.is_asymmetric()
        )));
    }
    Ok(())
}

fn scalar<T: Real>(t: &Tape<T>, v: Var) -> f64 {
    t.value(v).item().to_f64()
}

fn accumulate<T: Real>(t: &mut Tape<T>, acc: &mut Option<Var>, v: Var) -> Result<(), DiffError> {
    *acc = Some(match *acc {
        None => v,
        Some(a) => t.add(a, v)?,
    });
    Ok(())
}

/// `L1(C_{S->A}(C_{A->S}(x_A)), x_A) + L1(C_{S->B}(C_{B->S}(x_B)), x_B)`.
pub fn channel_cycle_loss<T: Real>(
    t: &mut Tape<T>,
    p: &Bound,
    model: &ModelBundle,
    xa: Var,
    xb: Var,
) -> Result<Var, LossError> {
    let mut total = None;
    for (x, d) in [(xa, Domain::A), (xb, Domain::B)] {
        let h = model.channel_encode(t, p, x, d)?;
        let y = model.channel_decode(t, p, h, d)?;
        let l = t.l1(y, x)?;
        accumulate(t, &mut total, l)?;
    }
    Ok(total.expect("two terms"))
}

/// Diversity loss `-L1(G(x, s1), G(x, s2))` towards `target`.
///
/// Both styles must be real styles. With `restrict`, a uni-modal target
/// is a contract violation: diversity is only rewarded where the target
/// admits several outputs.
#[allow(clippy::too_many_arguments)]
pub fn diversity_loss<T: Real>(
    t: &mut Tape<T>,
    p: &Bound,
    model: &ModelBundle,
    x: Var,
    source: Domain,
    target: Domain,
    s1: Style,
    s2: Style,
    restrict: bool,
) -> Result<Var, LossError> {
    check_diversity_call(target, s1, s2, restrict)?;
    let y1 = model.translate(t, p, x, source, target, s1)?;
    let y2 = model.translate(t, p, x, source, target, s2)?;
    diversity_from_outputs(t, y1, y2)
}

fn check_diversity_call(target: Domain, s1: Style, s2: Style, restrict: bool) -> Result<(), LossError> {
    if s1 == Style::ZeroStyle || s2 == Style::ZeroStyle {
        return Err(LossError::Contract("diversity loss needs two non-zero styles".into()));
    }
    if restrict && target.is_unimodal() {
        return Err(LossError::Contract(format!(
            "diversity loss is restricted to multi-modal targets, got {target}"
        )));
    }
    Ok(())
}

fn diversity_from_outputs<T: Real>(t: &mut Tape<T>, y1: Var, y2: Var) -> Result<Var, LossError> {
    let l = t.l1(y1, y2)?;
    Ok(t.neg(l))
}

/// `L1(G(x_A, 0), x_B)` on a paired batch.
pub fn supervised_loss<T: Real>(
    t: &mut Tape<T>,
    p: &Bound,
    model: &ModelBundle,
    xa: Var,
    xb: Var,
    paired: bool,
) -> Result<Var, LossError> {
    if !paired {
        return Err(LossError::Unpaired);
    }
    let y = model.translate(t, p, xa, Domain::A, Domain::B, Style::ZeroStyle)?;
    Ok(t.l1(y, xb)?)
}

/// Non-saturating discriminator loss `mean softplus(-real) + mean softplus(fake)`.
pub fn d_logistic<T: Real>(t: &mut Tape<T>, real: Var, fake: Var) -> Result<Var, LossError> {
    let nr = t.neg(real);
    let lr = t.softplus(nr);
    let lr = t.mean_all(lr);
    let lf = t.softplus(fake);
    let lf = t.mean_all(lf);
    Ok(t.add(lr, lf)?)
}

/// Non-saturating generator loss `mean softplus(-fake)`.
pub fn g_logistic<T: Real>(t: &mut Tape<T>, fake: Var) -> Var {
    let nf = t.neg(fake);
    let l = t.softplus(nf);
    t.mean_all(l)
}

/// `gamma / 2 * mean_n ||dD(x_n)/dx_n||^2` at real samples; differentiable
/// with respect to the discriminator's parameters.
pub fn r1_penalty<T: Real>(
    t: &mut Tape<T>,
    p: &Bound,
    model: &ModelBundle,
    real: &Tensor<T>,
    d: Domain,
) -> Result<(Var, Var), LossError> {
    let x = t.leaf(real.clone(), true);
    let logits = model.discriminate(t, p, x, d)?;
    let total = t.sum_all(logits);
    let g = t.grad(total, &[x], true)?[0];
    let sq = t.square(g);
    let s = t.sum_all(sq);
    let n = real.shape().first().copied().unwrap_or(1).max(1);
    Ok((t.scale(s, R1_GAMMA / 2.0 / n as f32), logits))
}

/// `L1(E(x, d), s)`.
pub fn style_reconstruction_loss<T: Real>(
    t: &mut Tape<T>,
    p: &Bound,
    model: &ModelBundle,
    x: Var,
    s: Var,
    d: Domain,
) -> Result<Var, LossError> {
    let e = model.style_encode(t, p, x, d)?;
    Ok(t.l1(e, s)?)
}

/// `L1(G(fake, s_src) -> source, x)`: translating back recovers the input.
#[allow(clippy::too_many_arguments)]
pub fn cycle_consistency_loss<T: Real>(
    t: &mut Tape<T>,
    p: &Bound,
    model: &ModelBundle,
    x: Var,
    fake: Var,
    source: Domain,
    target: Domain,
    back_style: Style,
) -> Result<Var, LossError> {
    let rec = model.translate(t, p, fake, target, source, back_style)?;
    Ok(t.l1(rec, x)?)
}

/// Generator-side terms as tape handles; `None` marks a skipped term.
#[derive(Clone, Copy, Debug, Default)]
pub struct GeneratorTerms {
    pub total: Option<Var>,
    pub adv_g: Option<Var>,
    pub style_recon: Option<Var>,
    pub cycle: Option<Var>,
    pub ch_cyc: Option<Var>,
    pub ds: Option<Var>,
    pub sup: Option<Var>,
}

/// Discriminator-side terms as tape handles.
#[derive(Clone, Copy, Debug, Default)]
pub struct DiscriminatorTerms {
    pub total: Option<Var>,
    pub adv_d: Option<Var>,
    pub r1: Option<Var>,
}

fn weighted<T: Real>(
    t: &mut Tape<T>,
    total: &mut Option<Var>,
    term: Option<Var>,
    lambda: f32,
) -> Result<(), DiffError> {
    if let Some(v) = term {
        let w = t.scale(v, lambda);
        accumulate(t, total, w)?;
    }
    Ok(())
}

/// Discriminator objective: logistic loss on real vs generated images of
/// every target in the batch, plus R1 at the real images.
pub fn discriminator_objective<T: Real>(
    t: &mut Tape<T>,
    p: &Bound,
    model: &ModelBundle,
    batch: &Batch,
    mode: Mode,
    lambdas: &Lambdas,
) -> Result<DiscriminatorTerms, LossError> {
    check_mode(model, mode)?;
    let xa_t = batch.xa.cast::<T>();
    let xb_t = batch.xb.cast::<T>();
    let xa = t.constant(xa_t.clone());
    let xb = t.constant(xb_t.clone());
    let mut terms = DiscriminatorTerms::default();
    let mut dirs = Vec::new();
    if batch.to_b {
        let style = if mode.is_asymmetric() {
            Style::ZeroStyle
        } else {
            Style::Latent(t.constant(batch.zb[0].cast::<T>()))
        };
        dirs.push((xa, &xb_t, Domain::A, Domain::B, style));
    }
    if batch.to_a {
        let z = t.constant(batch.za[0].cast::<T>());
        dirs.push((xb, &xa_t, Domain::B, Domain::A, Style::Latent(z)));
    }
    for (x_src, real, source, target, style) in dirs {
        let fake = model.translate(t, p, x_src, source, target, style)?;
        let (r1, real_logits) = r1_penalty(t, p, model, real, target)?;
        let fake_logits = model.discriminate(t, p, fake, target)?;
        let adv = d_logistic(t, real_logits, fake_logits)?;
        accumulate(t, &mut terms.adv_d, adv)?;
        accumulate(t, &mut terms.r1, r1)?;
    }
    let mut total = None;
    weighted(t, &mut total, terms.adv_d, lambdas.adv)?;
    weighted(t, &mut total, terms.r1, lambdas.r1)?;
    terms.total = total;
    Ok(terms)
}

/// Generator objective over every target in the batch, following the
/// mode's rules for gating and term restriction.
pub fn generator_objective<T: Real>(
    t: &mut Tape<T>,
    p: &Bound,
    model: &ModelBundle,
    batch: &Batch,
    mode: Mode,
    lambdas: &Lambdas,
) -> Result<GeneratorTerms, LossError> {
    check_mode(model, mode)?;
    if mode == Mode::Hms && !batch.paired {
        return Err(LossError::Unpaired);
    }
    let asym = mode.is_asymmetric();
    let xa = t.constant(batch.xa.cast::<T>());
    let xb = t.constant(batch.xb.cast::<T>());
    let n = batch.len();
    let mut g = GeneratorTerms::default();

    if batch.to_b {
        let s1 = if asym {
            Style::ZeroStyle
        } else {
            let z = t.constant(batch.zb[0].cast::<T>());
            Style::Vector(model.map_latent(t, p, z, Domain::B)?)
        };
        let sv = model.resolve_style(t, p, n, Domain::B, s1)?;
        let fake = model.translate_with_style(t, p, xa, Domain::A, Domain::B, sv)?;
        let logits = model.discriminate(t, p, fake, Domain::B)?;
        let adv = g_logistic(t, logits);
        accumulate(t, &mut g.adv_g, adv)?;
        if !asym {
            let sr = style_reconstruction_loss(t, p, model, fake, sv, Domain::B)?;
            accumulate(t, &mut g.style_recon, sr)?;
            let z2 = t.constant(batch.zb[1].cast::<T>());
            let s2 = Style::Vector(model.map_latent(t, p, z2, Domain::B)?);
            check_diversity_call(Domain::B, s1, s2, false)?;
            let y2 = model.translate(t, p, xa, Domain::A, Domain::B, s2)?;
            let ds = diversity_from_outputs(t, fake, y2)?;
            accumulate(t, &mut g.ds, ds)?;
            let back = Style::Guide(xa);
            let cyc = cycle_consistency_loss(t, p, model, xa, fake, Domain::A, Domain::B, back)?;
            accumulate(t, &mut g.cycle, cyc)?;
        }
        if mode == Mode::Hms {
            g.sup = Some(t.l1(fake, xb)?);
        }
    }

    if batch.to_a {
        let z1 = t.constant(batch.za[0].cast::<T>());
        let sv = model.map_latent(t, p, z1, Domain::A)?;
        let s1 = Style::Vector(sv);
        let fake = model.translate(t, p, xb, Domain::B, Domain::A, s1)?;
        let logits = model.discriminate(t, p, fake, Domain::A)?;
        let adv = g_logistic(t, logits);
        accumulate(t, &mut g.adv_g, adv)?;
        let sr = style_reconstruction_loss(t, p, model, fake, sv, Domain::A)?;
        accumulate(t, &mut g.style_recon, sr)?;
        let z2 = t.constant(batch.za[1].cast::<T>());
        let s2 = Style::Vector(model.map_latent(t, p, z2, Domain::A)?);
        check_diversity_call(Domain::A, s1, s2, asym)?;
        let y2 = model.translate(t, p, xb, Domain::B, Domain::A, s2)?;
        let ds = diversity_from_outputs(t, fake, y2)?;
        accumulate(t, &mut g.ds, ds)?;
        let back = if asym { Style::ZeroStyle } else { Style::Guide(xb) };
        let cyc = cycle_consistency_loss(t, p, model, xb, fake, Domain::B, Domain::A, back)?;
        accumulate(t, &mut g.cycle, cyc)?;
    }

    if asym {
        g.ch_cyc = Some(channel_cycle_loss(t, p, model, xa, xb)?);
    }

    if mode == Mode::Hms && !batch.to_b {
        g.sup = Some(supervised_loss(t, p, model, xa, xb, batch.paired)?);
    }

    let mut total = None;
    weighted(t, &mut total, g.adv_g, lambdas.adv)?;
    weighted(t, &mut total, g.style_recon, lambdas.style_recon)?;
    weighted(t, &mut total, g.cycle, lambdas.cycle)?;
    weighted(t, &mut total, g.ch_cyc, lambdas.ch_cyc)?;
    weighted(t, &mut total, g.ds, lambdas.ds)?;
    weighted(t, &mut total, g.sup, lambdas.sup)?;
    g.total = total;
    Ok(g)
}

/// Reads a step's scalars off the tapes that computed them.
pub fn report<TD: Real, TG: Real>(
    td: &Tape<TD>,
    d: &DiscriminatorTerms,
    tg: &Tape<TG>,
    g: &GeneratorTerms,
) -> LossReport {
    let get_d = |v: Option<Var>| v.map(|v| scalar(td, v)).unwrap_or(0.0);
    let get_g = |v: Option<Var>| v.map(|v| scalar(tg, v)).unwrap_or(0.0);
    LossReport {
        adv_d: get_d(d.adv_d),
        adv_g: get_g(g.adv_g),
        r1: get_d(d.r1),
        style_recon: get_g(g.style_recon),
        cycle: get_g(g.cycle),
        ch_cyc: get_g(g.ch_cyc),
        ds: get_g(g.ds),
        sup: g.sup.map(|v| scalar(tg, v)),
    }
}

/// All terms of both phases for `batch` at the current parameters, with
/// the weighted generator and discriminator totals.
pub fn total_objective(
    model: &ModelBundle,
    batch: &Batch,
    mode: Mode,
    lambdas: &Lambdas,
) -> Result<(LossReport, f64, f64), LossError> {
    let mut td = Tape::new();
    let pd = model.bind(&mut td, |_| false);
    let d = discriminator_objective(&mut td, &pd, model, batch, mode, lambdas)?;
    let mut tg = Tape::new();
    let pg = model.bind(&mut tg, |_| false);
    let g = generator_objective(&mut tg, &pg, model, batch, mode, lambdas)?;
    let rep = report(&td, &d, &tg, &g);
    let d_total = d.total.map(|v| scalar(&td, v)).unwrap_or(0.0);
    let g_total = g.total.map(|v| scalar(&tg, v)).unwrap_or(0.0);
    Ok((rep, d_total, g_total))
}
