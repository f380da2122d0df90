//! The desk-scale comparison protocol: HMU and BASELINE trained from the
//! same data for the same budget over several seeds, scored on the full
//! test set. Every run checkpoints as it goes and resumes after
//! interruption, so the protocol can be re-invoked until it completes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{evaluate, run, TrainConfig, TrainError};
use crate::cmnist::{self, Split};
use crate::colormetrics::MetricsReport;
use crate::losses::Mode;
use crate::m21gan::{Checkpoint, ModelBundle};

/// Step at which the early uni-modal MSE is recorded.
pub const EARLY_STEP: u64 = 100;
const EARLY_FILE: &str = "metrics_early.txt";
const FINAL_FILE: &str = "metrics_final.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub mnist_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    pub data_seed: u64,
    pub train_count: usize,
    pub test_count: usize,
    /// Template for every run; mode, seed, paths and step count are set per run.
    pub train: TrainConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            mnist_dir: PathBuf::from("mnist"),
            out_dir: PathBuf::from("protocol"),
            seeds: vec![0, 1, 2],
            modes: vec![Mode::Hmu, Mode::Baseline],
            data_seed: 2021,
            train_count: 60_000,
            test_count: 10_000,
            train: TrainConfig {
                eval_interval: 1000,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: Mode,
    pub seed: u64,
    pub steps: u64,
    pub early: MetricsReport,
    pub last: MetricsReport,
}

impl RunResult {
    pub fn mse(&self) -> f64 {
        self.last.mse.unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub steps: u64,
    pub batch_size: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub test_count: usize,
    pub runs: Vec<RunResult>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl ProtocolSummary {
    pub fn runs_of(&self, mode: Mode) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.mode == mode)
    }

    pub fn median_mse(&self, mode: Mode) -> f64 {
        median(&mut self.runs_of(mode).map(RunResult::mse).collect::<Vec<_>>())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        serde_json::from_str(text).map_err(|e| TrainError::Config(format!("bad protocol summary: {e}")))
    }
}

fn mnist_split(dir: &Path, split: Split) -> Result<Vec<(cmnist::GrayImage, u8)>, TrainError> {
    let (img, lab) = match split {
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        _ => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    };
    Ok(cmnist::load_mnist_idx(&dir.join(img), &dir.join(lab))?)
}

/// Generates (or reuses) the train and test containers.
pub fn prepare_data(cfg: &ProtocolConfig) -> Result<(PathBuf, PathBuf), TrainError> {
    let dir = cfg.out_dir.join("data");
    fs::create_dir_all(&dir)?;
    let train = dir.join("train.cmn1");
    let test = dir.join("test.cmn1");
    for (path, split, count, seed) in [
        (&train, Split::Train, cfg.train_count, cfg.data_seed),
        (&test, Split::Test, cfg.test_count, cfg.data_seed + 1),
    ] {
        if cmnist::read_dataset(path).is_ok_and(|d| d.len() == count && d.seed == seed) {
            continue;
        }
        let mnist = mnist_split(&cfg.mnist_dir, split)?;
        cmnist::write_dataset(&cmnist::generate_dataset(&mnist, seed, count, split)?, path)?;
    }
    Ok((train, test))
}

fn latest_checkpoint(dir: &Path, max_step: u64) -> Option<(u64, PathBuf)> {
    let entries = fs::read_dir(dir).ok()?;
    entries
        .filter_map(|e| {
            let name = e.ok()?.file_name().into_string().ok()?;
            let step: u64 = name.strip_prefix("checkpoint_")?.strip_suffix(".m21c")?.parse().ok()?;
            (step <= max_step).then(|| (step, dir.join(name)))
        })
        .max_by_key(|(s, _)| *s)
}

fn read_report(path: &Path) -> Option<MetricsReport> {
    fs::read_to_string(path).ok()?.parse().ok()
}

/// Trains and scores one (mode, seed) run, resuming whatever state exists.
pub fn run_one(
    cfg: &ProtocolConfig,
    mode: Mode,
    seed: u64,
    train: &Path,
    test: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<RunResult, TrainError> {
    let dir = cfg.out_dir.join(format!("{}_seed{seed}", mode.name().to_lowercase()));
    let base = TrainConfig {
        mode,
        seed,
        out_dir: dir.clone(),
        train_data: train.to_path_buf(),
        test_data: None,
        ..cfg.train.clone()
    };
    let steps = base.steps;
    let test_set = cmnist::read_dataset(test)?;
    let score = |model: &ModelBundle| evaluate(model, &test_set, base.n_bins, cfg.test_count, seed);

    let early = match read_report(&dir.join(EARLY_FILE)) {
        Some(r) => r,
        None => {
            let early_steps = EARLY_STEP.min(steps);
            let model = match latest_checkpoint(&dir, early_steps) {
                Some((s, p)) if s == early_steps => ModelBundle::from_checkpoint(&Checkpoint::read(&p)?, None)?,
                _ => {
                    progress(&format!("{mode:?} seed {seed}: training to step {early_steps}"));
                    run(
                        TrainConfig {
                            steps: early_steps,
                            ..base.clone()
                        },
                        None,
                    )?
                    .model
                }
            };
            let r = score(&model)?;
            fs::write(dir.join(EARLY_FILE), r.to_text())?;
            r
        }
    };
    let last = match read_report(&dir.join(FINAL_FILE)) {
        Some(r) => r,
        None => {
            let (from, path) = latest_checkpoint(&dir, steps)
                .ok_or_else(|| TrainError::Config(format!("no checkpoint in {}", dir.display())))?;
            let model = if from == steps {
                ModelBundle::from_checkpoint(&Checkpoint::read(&path)?, None)?
            } else {
                progress(&format!("{mode:?} seed {seed}: training from step {from} to {steps}"));
                let t0 = Instant::now();
                let s = run(base.clone(), Some(&path))?;
                progress(&format!(
                    "{mode:?} seed {seed}: {:.1} s/step",
                    t0.elapsed().as_secs_f64() / (steps - from) as f64
                ));
                s.model
            };
            let r = score(&model)?;
            fs::write(dir.join(FINAL_FILE), r.to_text())?;
            r
        }
    };
    Ok(RunResult {
        mode,
        seed,
        steps,
        early,
        last,
    })
}

/// Runs every (mode, seed) pair and writes `summary.json` into the output directory.
pub fn run_protocol(cfg: &ProtocolConfig, progress: &mut dyn FnMut(&str)) -> Result<ProtocolSummary, TrainError> {
    cfg.train.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let (train, test) = prepare_data(cfg)?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        for &mode in &cfg.modes {
            let r = run_one(cfg, mode, seed, &train, &test, progress)?;
            progress(&format!(
                "{mode:?} seed {seed}: mse {:.5} recall {:.4} unique {}",
                r.mse(),
                r.last.recall_avg,
                r.last.unique_color_count
            ));
            runs.push(r);
        }
    }
    let summary = ProtocolSummary {
        steps: cfg.train.steps,
        batch_size: cfg.train.batch_size,
        base_channels: cfg.train.base_channels,
        max_channels: cfg.train.max_channels,
        test_count: cfg.test_count,
        runs,
    };
    fs::write(cfg.out_dir.join("summary.json"), summary.to_json())?;
    Ok(summary)
}
