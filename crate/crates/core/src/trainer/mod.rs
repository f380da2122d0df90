//! Deterministic adversarial training, checkpointing and evaluation.
//!
//! Every random choice (parameter init, batch order, latent codes) derives
//! from the run seed and the step index, so a run is a pure function of
//! (seed, config, dataset bytes) and can resume from any checkpoint.

pub mod adam;
pub mod protocol;

use std::fs;
use std::io::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmnist::rng::DetRng;
use crate::cmnist::{self, CmnistError, PairedDataset};
use crate::colormetrics::{self, MetricsError, MetricsReport};
use crate::diffcore::{Tape, Tensor};
use crate::losses::{self, Batch, DiscriminatorTerms, GeneratorTerms, Lambdas, LossError, LossReport, Mode};
use crate::m21gan::{Bound, Checkpoint, Domain, Group, ModelBundle, ModelConfig, ModelError, ParamId, StyleInput};
pub use adam::{clip_global_norm, Adam};

const BATCH_STREAM_A: u64 = 0xa11c_e5a0;
const BATCH_STREAM_B: u64 = 0xb0b5_eed0;
const LATENT_STREAM: u64 = 0x1a7e_0000;
const EVAL_CHUNK: usize = 100;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] CmnistError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {phase} loss at step {step}; state dumped to {}", dump.display())]
    NonFinite {
        step: u64,
        phase: &'static str,
        dump: PathBuf,
    },
}

/// Flat run configuration, read from and written as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub steps: u64,
    pub batch_size: usize,
    pub lr_g: f32,
    pub lr_d: f32,
    /// Learning rate of the style encoder and mapping network.
    pub lr_ef: f32,
    pub seed: u64,
    /// Steps between checkpoints and metric snapshots; 0 disables them.
    pub eval_interval: u64,
    /// Test samples scored per snapshot.
    pub eval_samples: usize,
    pub n_bins: usize,
    pub out_dir: PathBuf,
    pub train_data: PathBuf,
    pub test_data: Option<PathBuf>,
    pub base_channels: usize,
    pub max_channels: usize,
    pub style_dim: usize,
    pub latent_dim: usize,
    pub mapping_hidden: usize,
    pub lambda_adv: f32,
    pub lambda_r1: f32,
    pub lambda_style_recon: f32,
    pub lambda_cycle: f32,
    pub lambda_ch_cyc: f32,
    pub lambda_ds: f32,
    pub lambda_sup: f32,
    /// Linear decay of the diversity weight to 0 over this many steps; 0 keeps it constant.
    pub ds_decay_steps: u64,
    pub clip_norm: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let l = Lambdas::default();
        TrainConfig {
            mode: Mode::Hmu,
            steps: 5000,
            batch_size: 16,
            lr_g: 1e-4,
            lr_d: 1e-4,
            lr_ef: 1e-4,
            seed: 0,
            eval_interval: 1000,
            eval_samples: 1000,
            n_bins: colormetrics::DEFAULT_BINS,
            out_dir: PathBuf::from("run"),
            train_data: PathBuf::from("train.cmn1"),
            test_data: None,
            base_channels: m.base_channels,
            max_channels: m.max_channels,
            style_dim: m.style_dim,
            latent_dim: m.latent_dim,
            mapping_hidden: m.mapping_hidden,
            lambda_adv: l.adv,
            lambda_r1: l.r1,
            lambda_style_recon: l.style_recon,
            lambda_cycle: l.cycle,
            lambda_ch_cyc: l.ch_cyc,
            lambda_ds: l.ds,
            lambda_sup: l.sup,
            ds_decay_steps: 0,
            clip_norm: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let c: TrainConfig = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps == 0 {
            return Err(TrainError::Config("steps must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch_size must be at least 2".into()));
        }
        if self.n_bins == 0 {
            return Err(TrainError::Config("n_bins must be positive".into()));
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d), ("lr_ef", self.lr_ef)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::Config(format!("{name} must be a non-negative number")));
            }
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(TrainError::Config("clip_norm must be positive".into()));
        }
        self.model_config().validate()?;
        Ok(())
    }

    /// Architecture implied by the config; gating follows the mode.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_side: cmnist::MODEL_SIDE,
            base_channels: self.base_channels,
            max_channels: self.max_channels,
            style_dim: self.style_dim,
            latent_dim: self.latent_dim,
            mapping_hidden: self.mapping_hidden,
            zero_style_gating: self.mode.is_asymmetric(),
        }
    }

    /// Loss weights at `step`, including the optional diversity decay.
    pub fn lambdas_at(&self, step: u64) -> Lambdas {
        let ds = if self.ds_decay_steps == 0 {
            self.lambda_ds
        } else {
            self.lambda_ds * (1.0 - step as f32 / self.ds_decay_steps as f32).max(0.0)
        };
        Lambdas {
            adv: self.lambda_adv,
            r1: self.lambda_r1,
            style_recon: self.lambda_style_recon,
            cycle: self.lambda_cycle,
            ch_cyc: self.lambda_ch_cyc,
            ds,
            sup: self.lambda_sup,
        }
    }

    fn lr(&self, group: Group) -> f32 {
        match group {
            Group::Discriminator => self.lr_d,
            Group::StyleEncoder | Group::Mapping => self.lr_ef,
            Group::Generator | Group::Mappers => self.lr_g,
        }
    }
}

fn epoch_permutation(seed: u64, stream: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = DetRng::new(seed).fork(stream).fork(epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    perm
}

/// Dataset indices of `step`'s batch from one stream.
pub fn batch_indices(seed: u64, stream: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for j in 0..batch as u64 {
        let pos = step * batch as u64 + j;
        let (epoch, k) = (pos / n as u64, (pos % n as u64) as usize);
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            cached = Some((epoch, epoch_permutation(seed, stream, epoch, n)));
        }
        out.push(cached.as_ref().unwrap().1[k]);
    }
    out
}

/// Builds the minibatch for `step`: A and B images from independent
/// permutations (shared ones for supervised mode) plus two latent codes per
/// image and target domain.
pub fn make_batch(cfg: &TrainConfig, data: &PairedDataset, step: u64) -> Result<Batch, TrainError> {
    let n = data.len();
    if n == 0 {
        return Err(TrainError::Data(CmnistError::Empty));
    }
    let bs = cfg.batch_size;
    let ia = batch_indices(cfg.seed, BATCH_STREAM_A, step, bs, n);
    let paired = cfg.mode == Mode::Hms;
    let ib = if paired {
        ia.clone()
    } else {
        batch_indices(cfg.seed, BATCH_STREAM_B, step, bs, n)
    };
    let color: Vec<&[u8]> = ia.iter().map(|&i| &data.samples[i].color_image[..]).collect();
    let gray: Vec<&[u8]> = ib.iter().map(|&i| data.samples[i].gray.pixels()).collect();
    let mut rng = DetRng::new(cfg.seed).fork(LATENT_STREAM).fork(step);
    let mut z = || Tensor::from_fn(&[bs, cfg.latent_dim], |_| rng.normal());
    let za = [z(), z()];
    let zb = [z(), z()];
    Ok(Batch {
        xa: cmnist::to_model_tensor(&color, 3)?,
        xb: cmnist::to_model_tensor(&gray, 1)?,
        paired,
        za,
        zb,
        to_a: true,
        to_b: true,
    })
}

fn ids_of(model: &ModelBundle, pick: impl Fn(Group) -> bool) -> Vec<ParamId> {
    model
        .params
        .ids()
        .filter(|&id| pick(model.params.get(id).group))
        .collect()
}

fn is_generator_side(g: Group) -> bool {
    g != Group::Discriminator
}

fn collect_grads(tape: &Tape, bound: &Bound, ids: &[ParamId]) -> Vec<Option<Tensor>> {
    ids.iter().map(|&id| tape.grad_of(bound.var(id)).cloned()).collect()
}

/// A phase whose loss was not finite; no update was applied in that phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NonFiniteLoss {
    pub phase: &'static str,
}

/// One discriminator update followed by one update of the generator, style
/// encoder, mapping network and channel mappers. Advances `model.step` on
/// success.
pub fn train_step(
    model: &mut ModelBundle,
    adam: &mut Adam,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<Result<LossReport, NonFiniteLoss>, TrainError> {
    let t = model.step + 1;
    let lambdas = cfg.lambdas_at(model.step);
    let clip = cfg.clip_norm as f64;

    let d_ids = ids_of(model, |g| g == Group::Discriminator);
    let (d_report, mut d_grads) = {
        let mut td = Tape::new();
        let pd = model.bind(&mut td, |g| g == Group::Discriminator);
        let d = losses::discriminator_objective(&mut td, &pd, model, batch, cfg.mode, &lambdas)?;
        let rep = losses::report(&td, &d, &td, &GeneratorTerms::default());
        let grads = match d.total {
            Some(total) => {
                if !td.value(total).all_finite() {
                    return Ok(Err(NonFiniteLoss { phase: "discriminator" }));
                }
                td.backward(total).map_err(LossError::from)?;
                collect_grads(&td, &pd, &d_ids)
            }
            None => vec![None; d_ids.len()],
        };
        (rep, grads)
    };
    clip_global_norm(&mut d_grads, clip);
    adam.update(&mut model.params, &d_ids, &d_grads, |_| cfg.lr_d, t);
    drop(d_grads);

    let g_ids = ids_of(model, is_generator_side);
    let (g_report, mut g_grads) = {
        let mut tg = Tape::new();
        let pg = model.bind(&mut tg, is_generator_side);
        let g = losses::generator_objective(&mut tg, &pg, model, batch, cfg.mode, &lambdas)?;
        let rep = losses::report(&tg, &DiscriminatorTerms::default(), &tg, &g);
        let grads = match g.total {
            Some(total) => {
                if !tg.value(total).all_finite() {
                    return Ok(Err(NonFiniteLoss { phase: "generator" }));
                }
                tg.backward(total).map_err(LossError::from)?;
                collect_grads(&tg, &pg, &g_ids)
            }
            None => vec![None; g_ids.len()],
        };
        (rep, grads)
    };
    clip_global_norm(&mut g_grads, clip);
    let groups: Vec<Group> = model.params.iter().map(|p| p.group).collect();
    adam.update(&mut model.params, &g_ids, &g_grads, |id| cfg.lr(groups[id.index()]), t);
    model.step = t;

    Ok(Ok(LossReport {
        adv_d: d_report.adv_d,
        r1: d_report.r1,
        ..g_report
    }))
}

/// Model, optimizer state and data of one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelBundle,
    pub adam: Adam,
    pub data: PairedDataset,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: PairedDataset) -> Result<Self, TrainError> {
        config.validate()?;
        if data.is_empty() {
            return Err(TrainError::Data(CmnistError::Empty));
        }
        let model = ModelBundle::new(config.model_config(), config.seed)?;
        let adam = Adam::new(&model.params);
        Ok(Trainer {
            config,
            model,
            adam,
            data,
        })
    }

    /// Restores model and optimizer state; the architecture must match `config`.
    pub fn resume(config: TrainConfig, data: PairedDataset, ck: &Checkpoint) -> Result<Self, TrainError> {
        config.validate()?;
        if data.is_empty() {
            return Err(TrainError::Data(CmnistError::Empty));
        }
        let model = ModelBundle::from_checkpoint(ck, Some(&config.model_config()))?;
        let adam = Adam::from_checkpoint(&model.params, ck).map_err(ModelError::Checkpoint)?;
        Ok(Trainer {
            config,
            model,
            adam,
            data,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.blobs.extend(self.adam.to_blobs(&self.model.params));
        ck
    }

    pub fn batch(&self, step: u64) -> Result<Batch, TrainError> {
        make_batch(&self.config, &self.data, step)
    }

    /// Trains on the batch of the current step.
    pub fn step(&mut self) -> Result<Result<LossReport, NonFiniteLoss>, TrainError> {
        let batch = self.batch(self.model.step)?;
        train_step(&mut self.model, &mut self.adam, &batch, &self.config)
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint_{step:06}.m21c"))
}

pub const LOG_FILE: &str = "train_log.csv";

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub model: ModelBundle,
    pub last: Option<LossReport>,
    pub checkpoints: Vec<PathBuf>,
    pub snapshots: Vec<(u64, MetricsReport)>,
}

/// Opens the loss log, keeping only rows at or before `step` so a resumed
/// run continues the log of the run it came from.
fn open_log(path: &Path, step: u64) -> Result<fs::File, TrainError> {
    let mut kept = String::from(LossReport::CSV_HEADER);
    kept.push('\n');
    if step > 0 {
        if let Ok(old) = fs::read_to_string(path) {
            for line in old.lines().skip(1) {
                let row_step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
                if row_step.is_some_and(|s| s <= step) {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
    }
    fs::write(path, kept)?;
    Ok(fs::OpenOptions::new().append(true).open(path)?)
}

/// Runs (or continues) training to `config.steps`, writing the loss log,
/// periodic checkpoints and metric snapshots into `config.out_dir`.
pub fn run(config: TrainConfig, resume_from: Option<&Path>) -> Result<RunSummary, TrainError> {
    config.validate()?;
    let data = cmnist::read_dataset(&config.train_data)?;
    let test = match &config.test_data {
        Some(p) => Some(cmnist::read_dataset(p)?),
        None => None,
    };
    let mut trainer = match resume_from {
        Some(p) => Trainer::resume(config.clone(), data, &Checkpoint::read(p)?)?,
        None => Trainer::new(config.clone(), data)?,
    };
    let out = config.out_dir.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.json"), config.to_json())?;
    let mut log = open_log(&out.join(LOG_FILE), trainer.model.step)?;

    let mut summary = RunSummary {
        model: trainer.model.clone(),
        last: None,
        checkpoints: Vec::new(),
        snapshots: Vec::new(),
    };
    while trainer.model.step < config.steps {
        match trainer.step()? {
            Ok(rep) => {
                writeln!(log, "{}", rep.csv_row(trainer.model.step))?;
                summary.last = Some(rep);
            }
            Err(bad) => {
                let step = trainer.model.step + 1;
                let dump = out.join(format!("nonfinite_{step:06}.m21c"));
                trainer.checkpoint().write(&dump)?;
                log.flush()?;
                return Err(TrainError::NonFinite {
                    step,
                    phase: bad.phase,
                    dump,
                });
            }
        }
        let step = trainer.model.step;
        let at_interval = config.eval_interval > 0 && step % config.eval_interval == 0;
        if at_interval || step == config.steps {
            log.flush()?;
            let path = checkpoint_path(&out, step);
            trainer.checkpoint().write(&path)?;
            summary.checkpoints.push(path);
            if let Some(test) = &test {
                let rep = evaluate(&trainer.model, test, config.n_bins, config.eval_samples, config.seed)?;
                fs::write(out.join(format!("metrics_{step:06}.txt")), rep.to_text())?;
                summary.snapshots.push((step, rep));
            }
        }
    }
    log.flush()?;
    summary.model = trainer.model;
    Ok(summary)
}

/// Batched inference used by evaluation. `z` holds one latent code per
/// image; implementations may ignore it for uni-modal targets.
pub trait Translator {
    fn latent_dim(&self) -> usize;
    fn translate_batch(&self, x: &Tensor, source: Domain, target: Domain, z: &Tensor) -> Result<Tensor, TrainError>;
}

impl Translator for ModelBundle {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn translate_batch(&self, x: &Tensor, source: Domain, target: Domain, z: &Tensor) -> Result<Tensor, TrainError> {
        let style = if target.is_unimodal() && self.config.zero_style_gating {
            StyleInput::ZeroStyle
        } else {
            StyleInput::Latent(z.clone())
        };
        Ok(self.translate_tensor(x, source, target, &style, EVAL_CHUNK)?)
    }
}

/// Scores a translator on the first `limit` samples of `test`: MSE of
/// color→gray against the true grayscale (model resolution, [-1,1]) and the
/// color metrics of gray→color with one random latent per image.
pub fn evaluate(
    model: &impl Translator,
    test: &PairedDataset,
    n_bins: usize,
    limit: usize,
    seed: u64,
) -> Result<MetricsReport, TrainError> {
    let n = limit.min(test.len());
    if n == 0 {
        return Err(TrainError::Metrics(MetricsError::Empty("test set")));
    }
    let mut rng = DetRng::new(seed).fork(0xe7a1);
    let latent = model.latent_dim();
    let mut mse_pairs = Vec::new();
    let mut generated: Vec<Vec<u8>> = Vec::with_capacity(n);
    for range in chunks(n, EVAL_CHUNK) {
        let samples = &test.samples[range.clone()];
        let color: Vec<&[u8]> = samples.iter().map(|s| &s.color_image[..]).collect();
        let gray: Vec<&[u8]> = samples.iter().map(|s| s.gray.pixels()).collect();
        let xa = cmnist::to_model_tensor(&color, 3)?;
        let xb = cmnist::to_model_tensor(&gray, 1)?;
        let za = Tensor::from_fn(&[range.len(), latent], |_| rng.normal());
        let zb = Tensor::from_fn(&[range.len(), latent], |_| rng.normal());
        let yb = model.translate_batch(&xa, Domain::A, Domain::B, &zb)?;
        let ya = model.translate_batch(&xb, Domain::B, Domain::A, &za)?;
        generated.extend(cmnist::from_model_tensor(&ya)?);
        mse_pairs.push((yb, xb));
    }
    let pairs: Vec<(&Tensor, &Tensor)> = mse_pairs.iter().map(|(a, b)| (a, b)).collect();
    let mse = colormetrics::mse(&pairs)?;
    let real: Vec<&[u8]> = test.samples[..n].iter().map(|s| &s.color_image[..]).collect();
    let gen: Vec<&[u8]> = generated.iter().map(|g| g.as_slice()).collect();
    Ok(MetricsReport::from_images(&real, &gen, n_bins, Some(mse))?)
}

fn chunks(n: usize, size: usize) -> impl Iterator<Item = Range<usize>> {
    (0..n).step_by(size).map(move |s| s..(s + size).min(n))
}
