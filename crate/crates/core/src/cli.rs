//! Command-line front end. Exit codes: 0 success, 1 runtime or I/O
//! failure, 2 usage error or unreadable input.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cmnist::imageset::ImageSet;
use crate::cmnist::rng::DetRng;
use crate::cmnist::{self, Split};
use crate::colormetrics::{self, MetricsReport};
use crate::losses::Mode;
use crate::m21gan::{Domain, ModelBundle, StyleInput};
use crate::trainer::protocol::{self, ProtocolConfig};
use crate::trainer::{self, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const TRANSLATE_CHUNK: usize = 64;

#[derive(Debug, Parser)]
#[command(
    name = "asymtrans",
    version,
    about = "Colorized-MNIST translation: data, training, metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pair MNIST digits with seeded random colors and write a CMN1 file.
    GenDataset(GenDataset),
    /// Train a model from a JSON run config.
    Train(Train),
    /// Translate the images of a CMN1 file into the target domain (writes M21I).
    Translate(Translate),
    /// Score generated color images (or a model) against real ones.
    Eval(Eval),
    /// Export per-channel Color Recall histograms as CSV.
    Hist(Hist),
    /// Run the HMU vs BASELINE comparison over several seeds.
    Protocol(Protocol),
}

#[derive(Debug, Args)]
pub struct GenDataset {
    /// MNIST IDX image file.
    #[arg(long)]
    pub mnist_images: PathBuf,
    /// MNIST IDX label file.
    #[arg(long)]
    pub mnist_labels: PathBuf,
    /// Output CMN1 path.
    #[arg(long)]
    pub out: PathBuf,
    /// Color stream seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of samples; defaults to every MNIST image.
    #[arg(long)]
    pub count: Option<usize>,
    /// train or test.
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct Train {
    /// Flat JSON run config; omitted fields take their defaults.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's out_dir.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Translate {
    /// Model checkpoint (.m21c).
    #[arg(long)]
    pub model: PathBuf,
    /// CMN1 dataset; its color images are the input for target B, gray for target A.
    #[arg(long)]
    pub input: PathBuf,
    /// A (color) or B (gray).
    #[arg(long)]
    pub target_domain: String,
    /// Styles per input image for a multi-modal target.
    #[arg(long, default_value_t = 1)]
    pub num_styles: usize,
    /// Latent code seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output M21I path; images are ordered input-major, style-minor.
    #[arg(long)]
    pub out: PathBuf,
    /// Translate only the first N inputs.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["model", "generated"])))]
pub struct Eval {
    /// Model checkpoint, evaluated on the real CMN1 test set.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Generated color images (M21I or CMN1).
    #[arg(long)]
    pub generated: Option<PathBuf>,
    /// Real images (CMN1, or M21I with --generated).
    #[arg(long)]
    pub real: PathBuf,
    /// Histogram bins per channel.
    #[arg(long, default_value_t = colormetrics::DEFAULT_BINS)]
    pub bins: usize,
    /// Latent seed for model evaluation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluate a model on the first N test samples only.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Hist {
    /// Real color images (CMN1 or M21I).
    #[arg(long)]
    pub real: PathBuf,
    /// Generated color images (CMN1 or M21I).
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long, default_value_t = colormetrics::DEFAULT_BINS)]
    pub bins: usize,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Protocol {
    /// Directory holding the four MNIST IDX files.
    #[arg(long)]
    pub mnist_dir: PathBuf,
    /// Working directory for data, runs and summary.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', default_value = "HMU,BASELINE")]
    pub modes: Vec<Mode>,
    #[arg(long, default_value_t = 5000)]
    pub steps: u64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Test samples scored per run.
    #[arg(long, default_value_t = 10_000)]
    pub test_count: usize,
    /// Copy the summary here when done.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// Failure of a command, tagged with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, S>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

pub fn execute(cmd: Command, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> Result<(), CliError> {
    let text = match cmd {
        Command::GenDataset(a) => gen_dataset(a)?,
        Command::Train(a) => train(a, err)?,
        Command::Translate(a) => translate(a, err)?,
        Command::Eval(a) => eval(a)?,
        Command::Hist(a) => hist(a)?,
        Command::Protocol(a) => run_protocol(a, err)?,
    };
    out.write_all(text.as_bytes()).map_err(runtime)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn gen_dataset(a: GenDataset) -> Result<String, CliError> {
    let split: Split = a.split.parse().map_err(usage)?;
    let mnist = cmnist::load_mnist_idx(&a.mnist_images, &a.mnist_labels).map_err(usage)?;
    let count = a.count.unwrap_or(mnist.len());
    let ds = cmnist::generate_dataset(&mnist, a.seed, count, split).map_err(usage)?;
    write_file(&a.out, &cmnist::encode_dataset(&ds).map_err(runtime)?)?;
    Ok(format!("count={count}\nseed={}\n", a.seed))
}

fn train(a: Train, err: &mut dyn std::io::Write) -> Result<String, CliError> {
    let text = fs::read_to_string(&a.config).map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    let mut cfg = TrainConfig::from_json(&text).map_err(usage)?;
    if let Some(dir) = a.out_dir {
        cfg.out_dir = dir;
    }
    for p in std::iter::once(&cfg.train_data)
        .chain(cfg.test_data.as_ref())
        .chain(a.resume.as_ref())
    {
        if !p.exists() {
            return Err(usage(format!("{}: no such file", p.display())));
        }
    }
    let _ = writeln!(
        err,
        "training {} for {} steps into {}",
        cfg.mode.name(),
        cfg.steps,
        cfg.out_dir.display()
    );
    let summary = trainer::run(cfg, a.resume.as_deref()).map_err(runtime)?;
    let mut s = format!("step={}\n", summary.model.step);
    if let Some(path) = summary.checkpoints.last() {
        let _ = writeln!(s, "checkpoint={}", path.display());
    }
    if let Some((_, rep)) = summary.snapshots.last() {
        s.push_str(&rep.to_text());
    }
    Ok(s)
}

fn load_model(path: &Path) -> Result<ModelBundle, CliError> {
    ModelBundle::load(path, None).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn translate(a: Translate, err: &mut dyn std::io::Write) -> Result<String, CliError> {
    let target: Domain = a.target_domain.parse().map_err(usage)?;
    if a.num_styles == 0 {
        return Err(usage("--num-styles must be at least 1"));
    }
    let model = load_model(&a.model)?;
    let data = cmnist::read_dataset(&a.input).map_err(|e| usage(format!("{}: {e}", a.input.display())))?;
    let n = a.limit.unwrap_or(data.len()).min(data.len());
    let source = target.other();
    let styles = if target.is_unimodal() && a.num_styles > 1 {
        let _ = writeln!(
            err,
            "warning: target {target} is uni-modal; ignoring --num-styles {}",
            a.num_styles
        );
        1
    } else {
        a.num_styles
    };
    let inputs: Vec<&[u8]> = match source {
        Domain::A => data.samples[..n].iter().map(|s| &s.color_image[..]).collect(),
        Domain::B => data.samples[..n].iter().map(|s| s.gray.pixels()).collect(),
    };
    let x = cmnist::to_model_tensor(&inputs, source.channels()).map_err(runtime)?;
    let mut rng = DetRng::new(a.seed);
    let mut per_style = Vec::with_capacity(styles);
    for _ in 0..styles {
        let style = if target.is_unimodal() && model.config.zero_style_gating {
            StyleInput::ZeroStyle
        } else {
            StyleInput::Latent(model.sample_latents(n, &mut rng))
        };
        let y = model
            .translate_tensor(&x, source, target, &style, TRANSLATE_CHUNK)
            .map_err(runtime)?;
        per_style.push(cmnist::from_model_tensor(&y).map_err(runtime)?);
    }
    let images: Vec<Vec<u8>> = (0..n)
        .flat_map(|i| per_style.iter().map(move |s| s[i].clone()))
        .collect();
    let count = images.len();
    let set = ImageSet::new(cmnist::IMAGE_SIDE, cmnist::IMAGE_SIDE, target.channels(), images).map_err(runtime)?;
    write_file(&a.out, &set.encode().map_err(runtime)?)?;
    Ok(format!("count={count}\ntarget={target}\nstyles={styles}\n"))
}

/// Color images from a CMN1 dataset or a three-channel M21I set.
fn read_color_images(path: &Path) -> Result<Vec<Vec<u8>>, CliError> {
    let bytes = fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let bad = |e: cmnist::CmnistError| usage(format!("{}: {e}", path.display()));
    if bytes.starts_with(cmnist::container::MAGIC) {
        let ds = cmnist::decode_dataset(&bytes).map_err(bad)?;
        return Ok(ds.samples.iter().map(|s| s.color_image.to_vec()).collect());
    }
    let set = ImageSet::decode(&bytes).map_err(bad)?;
    if set.channels != 3 {
        return Err(usage(format!(
            "{}: expected color images, found {} channel(s)",
            path.display(),
            set.channels
        )));
    }
    Ok(set.images)
}

fn eval(a: Eval) -> Result<String, CliError> {
    if a.bins == 0 {
        return Err(usage("--bins must be positive"));
    }
    let report = if let Some(model_path) = &a.model {
        let model = load_model(model_path)?;
        let test = cmnist::read_dataset(&a.real).map_err(|e| usage(format!("{}: {e}", a.real.display())))?;
        let limit = a.limit.unwrap_or(test.len());
        trainer::evaluate(&model, &test, a.bins, limit, a.seed).map_err(runtime)?
    } else {
        let gen_path = a.generated.as_ref().expect("clap enforces one source");
        let real = read_color_images(&a.real)?;
        let gen = read_color_images(gen_path)?;
        let r: Vec<&[u8]> = real.iter().map(Vec::as_slice).collect();
        let g: Vec<&[u8]> = gen.iter().map(Vec::as_slice).collect();
        MetricsReport::from_images(&r, &g, a.bins, None).map_err(usage)?
    };
    let text = report.to_text();
    if let Some(p) = &a.out {
        write_file(p, text.as_bytes())?;
    }
    Ok(text)
}

fn hist(a: Hist) -> Result<String, CliError> {
    if a.bins == 0 {
        return Err(usage("--bins must be positive"));
    }
    let real = read_color_images(&a.real)?;
    let gen = read_color_images(&a.generated)?;
    let r: Vec<&[u8]> = real.iter().map(Vec::as_slice).collect();
    let g: Vec<&[u8]> = gen.iter().map(Vec::as_slice).collect();
    let rows = colormetrics::histogram_export(&r, &g, a.bins).map_err(usage)?;
    write_file(&a.out, colormetrics::histogram_csv(&rows).as_bytes())?;
    Ok(format!("rows={}\n", rows.len()))
}

fn run_protocol(a: Protocol, err: &mut dyn std::io::Write) -> Result<String, CliError> {
    if !a.mnist_dir.is_dir() {
        return Err(usage(format!("{}: not a directory", a.mnist_dir.display())));
    }
    let cfg = ProtocolConfig {
        mnist_dir: a.mnist_dir,
        out_dir: a.out_dir,
        seeds: a.seeds,
        modes: a.modes,
        test_count: a.test_count,
        train: TrainConfig {
            steps: a.steps,
            batch_size: a.batch_size,
            ..ProtocolConfig::default().train
        },
        ..ProtocolConfig::default()
    };
    cfg.train.validate().map_err(usage)?;
    let summary = protocol::run_protocol(&cfg, &mut |m| {
        let _ = writeln!(err, "{m}");
    })
    .map_err(runtime)?;
    if let Some(p) = &a.summary {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(runtime)?;
        }
        write_file(p, summary.to_json().as_bytes())?;
    }
    let mut s = String::new();
    for mode in &cfg.modes {
        let _ = writeln!(s, "{}_median_mse={:.6}", mode.name(), summary.median_mse(*mode));
    }
    Ok(s)
}
