//! The `ssgan` command line: synth, prepare, train, eval, sweep, sample and
//! gradcheck. Every command that draws randomness takes an explicit
//! `--seed`; generated directories are never overwritten without `--force`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use ssgan_tensor::Prng;

use crate::data::codec::{save_pgm, Gray};
use crate::data::dataset::{self, split_path};
use crate::data::{ChannelSelection, Dataset, Pool, SyntheticFieldConfig};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::models::{Generator, Mode};
use crate::train::sweep::DEFAULT_FRACTIONS;
use crate::train::trainer::{FINAL_CHECKPOINT, METRICS_FILE};
use crate::train::{continue_training, evaluate, evaluate_pools, load_checkpoint, run_sweep, split_for, EvalReport, Streams, TrainConfig, TrainMode, Trainer};

pub const CONFIG_FILE: &str = "config.json";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_TXT: &str = "eval.txt";

/// Everything a command can be configured with. Loaded from a JSON file,
/// then `--set key=value` pairs, then dedicated flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub synth: SyntheticFieldConfig,
    pub train: TrainConfig,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Sets a dotted key such as `train.lr` or `synth.soil.red_mean`. The
    /// value is read as JSON, falling back to a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        }
        if slot.is_object() {
            return Err(Error::Config(format!("`{key}` is a section, not a value")));
        }
        *slot = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("{key}={value}: {e}")))?;
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[String]) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("`{pair}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ssgan", version, about = "Semi-supervised GAN crop/weed segmentation on multispectral imagery")]
pub struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multispectral dataset.
    Synth(SynthArgs),
    /// Add NDVI rasters and write a fresh split.
    Prepare(PrepareArgs),
    /// Train a semi-supervised GAN or the supervised baseline.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset pool.
    Eval(EvalArgs),
    /// Channel selection by labeled fraction grid.
    Sweep(SweepArgs),
    /// Write generated tiles as PGM, one file per channel.
    Sample(SampleArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON file with optional `synth` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config field by dotted key, e.g. `train.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Images in the dataset.
    #[arg(long)]
    pub images: Option<usize>,
    /// Labeled share of the training images in the written split.
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub labeled_fraction: f64,
    #[arg(long, default_value_t = SyntheticFieldConfig::default().test_fraction)]
    pub test_fraction: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ssgan,
    Baseline,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ssgan => TrainMode::Ssgan,
            ModeArg::Baseline => TrainMode::SupervisedBaseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Labeled,
    Unlabeled,
    Test,
}

impl From<PoolArg> for Pool {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::Labeled => Pool::Labeled,
            PoolArg::Unlabeled => Pool::Unlabeled,
            PoolArg::Test => Pool::Test,
        }
    }
}

fn parse_selection(s: &str) -> std::result::Result<ChannelSelection, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Training hyperparameters shared by `train` and `sweep`.
#[derive(Debug, Args)]
pub struct HyperArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Adam epsilon.
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Weight of the unsupervised terms in the discriminator loss.
    #[arg(long)]
    pub lambda_u: Option<f64>,
    /// Square tile side; a multiple of 16.
    #[arg(long)]
    pub tile: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

impl HyperArgs {
    /// Dotted keys for every flag given, in a fixed order.
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut put = |k: &'static str, x: Option<String>| {
            if let Some(x) = x {
                v.push((k, x));
            }
        };
        put("lr", self.lr.map(|x| x.to_string()));
        put("beta1", self.beta1.map(|x| x.to_string()));
        put("beta2", self.beta2.map(|x| x.to_string()));
        put("eps", self.adam_eps.map(|x| x.to_string()));
        put("batch_size", self.batch_size.map(|x| x.to_string()));
        put("epochs", self.epochs.map(|x| x.to_string()));
        put("steps_per_epoch", self.steps_per_epoch.map(|x| x.to_string()));
        put("lambda_u", self.lambda_u.map(|x| x.to_string()));
        put("tile_h", self.tile.map(|x| x.to_string()));
        put("tile_w", self.tile.map(|x| x.to_string()));
        put("checkpoint_every", self.checkpoint_every.map(|x| x.to_string()));
        put(
            "mode",
            self.mode.map(|m| serde_json::to_string(&TrainMode::from(m)).expect("mode serializes")),
        );
        v
    }

    fn apply(&self, cfg: &mut CliConfig) -> Result<()> {
        for (k, v) in self.pairs() {
            cfg.set(&format!("train.{k}"), &v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// One of Red, NIR, NDVI, Red+NIR, Red+NIR+NDVI.
    #[arg(long, value_parser = parse_selection)]
    pub channels: Option<ChannelSelection>,
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Continue from a checkpoint; only epochs, steps_per_epoch and
    /// checkpoint_every may change.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Must match the checkpoint's channel count.
    #[arg(long, value_parser = parse_selection)]
    pub channels: Option<ChannelSelection>,
    #[arg(long, value_enum, default_value = "test")]
    pub pool: PoolArg,
    /// Directory for eval.json and eval.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated selections; defaults to all five.
    #[arg(long, value_delimiter = ',', value_parser = parse_selection)]
    pub channels: Vec<ChannelSelection>,
    /// Comma-separated labeled fractions; defaults to 0.5,0.4,0.3.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = SyntheticFieldConfig::default().test_fraction)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Generator source; without it a freshly initialized generator is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, value_parser = parse_selection)]
    pub channels: Option<ChannelSelection>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tile side for a fresh generator.
    #[arg(long, default_value_t = 32)]
    pub tile: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn require_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| Error::Config("--seed is required: runs never draw implicit entropy".into()))
}

fn is_nonempty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn refuse(p: &Path, what: &str) -> Error {
    Error::Config(format!("{} already holds {what}; pass --force to overwrite", p.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn echo(label: &str, value: &impl Serialize) {
    println!("{label}: {}", serde_json::to_string(value).expect("config serializes"));
}

fn remove_if_exists(p: &Path) -> Result<()> {
    let r = if p.is_dir() { fs::remove_dir_all(p) } else { fs::remove_file(p) };
    match r {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(p, e)),
        _ => Ok(()),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = CliConfig::load(a.config.config.as_deref())?;
    cfg.apply(&a.config.set)?;
    cfg.synth.seed = require_seed(a.seed)?;
    if let Some(n) = a.images {
        cfg.synth.num_images = n;
    }
    if let Some(f) = a.labeled_fraction {
        cfg.train.labeled_fraction = f;
    }
    cfg.synth.validate()?;
    if is_nonempty_dir(&a.out) {
        if !a.force {
            return Err(refuse(&a.out, "files"));
        }
        // Only what synth writes, so nothing foreign is deleted.
        for p in [dataset::images_dir(&a.out), dataset::masks_dir(&a.out), split_path(&a.out), a.out.join(CONFIG_FILE)] {
            remove_if_exists(&p)?;
        }
    }
    echo("synth config", &cfg.synth);
    let split = dataset::synthesize(&a.out, &cfg.synth, cfg.train.labeled_fraction)?;
    write_json(&a.out.join(CONFIG_FILE), &cfg.synth)?;
    println!(
        "wrote {} images ({} labeled, {} unlabeled, {} test) to {}",
        cfg.synth.num_images,
        split.labeled_train.len(),
        split.unlabeled_train.len(),
        split.test.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_prepare(a: PrepareArgs) -> Result<()> {
    let seed = require_seed(a.seed)?;
    if split_path(&a.dataset).exists() && !a.force {
        return Err(refuse(&a.dataset, "split.json"));
    }
    let (split, ndvi) = dataset::prepare(&a.dataset, a.labeled_fraction, a.test_fraction, seed)?;
    println!(
        "split: {} labeled, {} unlabeled, {} test (seed {seed}); wrote {ndvi} NDVI raster(s)",
        split.labeled_train.len(),
        split.unlabeled_train.len(),
        split.test.len()
    );
    Ok(())
}

/// Keys `train --resume` may change.
const RESUMABLE: [&str; 3] = ["epochs", "steps_per_epoch", "checkpoint_every"];

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = CliConfig::load(a.config.config.as_deref())?;
    cfg.apply(&a.config.set)?;
    a.hyper.apply(&mut cfg)?;
    if let Some(c) = a.channels {
        cfg.train.selection = c;
    }
    if let Some(f) = a.labeled_fraction {
        cfg.train.labeled_fraction = f;
    }
    cfg.train.seed = require_seed(a.seed)?;
    cfg.train.validate()?;
    Ok(cfg.train)
}

fn resumed(a: &TrainArgs, path: &Path) -> Result<(Trainer, Streams)> {
    let ckpt = load_checkpoint(path)?;
    let fixed_flag = a.channels.is_some()
        || a.labeled_fraction.is_some()
        || a.seed.is_some()
        || a.config.config.is_some()
        || !a.config.set.is_empty()
        || a.hyper.pairs().iter().any(|(k, _)| !RESUMABLE.contains(k));
    if fixed_flag {
        return Err(Error::Config(format!(
            "--resume keeps the checkpoint's config; only {} may change",
            RESUMABLE.map(|k| format!("--{}", k.replace('_', "-"))).join(", ")
        )));
    }
    let mut cfg = CliConfig {
        train: ckpt.config.clone(),
        ..Default::default()
    };
    a.hyper.apply(&mut cfg)?;
    cfg.train.validate()?;
    let (mut trainer, streams) = Trainer::from_checkpoint(ckpt)?;
    trainer.config = cfg.train;
    Ok((trainer, streams))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let existing = [a.out.join(FINAL_CHECKPOINT), a.out.join(METRICS_FILE)];
    if existing.iter().any(|p| p.exists()) && !a.force {
        return Err(refuse(&a.out, "a training run"));
    }
    let (trainer, streams) = match &a.resume {
        Some(path) => resumed(&a, path)?,
        None => Trainer::new(train_config(&a)?)?,
    };
    let config = trainer.config.clone();
    echo("train config", &config);
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_json(&a.out.join(CONFIG_FILE), &config)?;

    let split = split_for(&a.dataset, &config, SyntheticFieldConfig::default().test_fraction)?;
    let ds = Dataset::load_with_split(&a.dataset, split)?;
    let pools = Arc::new(ds.pools(config.selection)?);
    let outcome = continue_training(trainer, streams, pools.clone(), Some(&a.out))?;
    let t = &outcome.trainer;
    let report = evaluate_pools(&t.discriminator, &config, t.step, &pools, Pool::Test)?;
    write_eval(&a.out, &report)?;
    print!("{}", report.text());
    if let Some(p) = &outcome.checkpoint {
        println!("checkpoint {}", p.display());
    }
    Ok(())
}

fn write_eval(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(EVAL_JSON), report)?;
    let p = dir.join(EVAL_TXT);
    fs::write(&p, report.text()).map_err(|e| Error::io(&p, e))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let report = evaluate(&ckpt, &a.dataset, a.pool.into(), a.channels)?;
    echo("config", &report.config);
    if let Some(dir) = &a.out {
        write_eval(dir, &report)?;
    }
    print!("{}", report.text());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = CliConfig::load(a.config.config.as_deref())?;
    cfg.apply(&a.config.set)?;
    a.hyper.apply(&mut cfg)?;
    cfg.train.seed = require_seed(a.seed)?;
    cfg.train.validate()?;
    let selections = if a.channels.is_empty() { ChannelSelection::ALL.to_vec() } else { a.channels.clone() };
    let fractions = if a.fractions.is_empty() { DEFAULT_FRACTIONS.to_vec() } else { a.fractions.clone() };
    if is_nonempty_dir(&a.out) {
        if !a.force {
            return Err(refuse(&a.out, "files"));
        }
        for p in [a.out.join("runs"), a.out.join(crate::train::sweep::SWEEP_JSON), a.out.join(crate::train::sweep::SWEEP_TXT)] {
            remove_if_exists(&p)?;
        }
    }
    echo("sweep config", &cfg.train);
    let report = run_sweep(&cfg.train, &selections, &fractions, &a.dataset, a.test_fraction, Some(&a.out))?;
    print!("{}", report.text());
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed; see sweep.json", report.cells.len());
    }
    Ok(())
}

/// Maps a tanh output in [-1, 1] to a gray level.
pub fn to_gray_level(v: f32) -> u8 {
    (((v + 1.0) * 0.5) * 255.0).round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Serialize)]
struct SampleManifest<'a> {
    checkpoint: Option<&'a Path>,
    selection: ChannelSelection,
    n: usize,
    seed: u64,
    tile_h: usize,
    tile_w: usize,
    config_hash: Option<String>,
    files: Vec<PathBuf>,
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let seed = require_seed(a.seed)?;
    if a.n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let (generator, selection, hash) = match &a.checkpoint {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            let g = ckpt
                .generator
                .ok_or_else(|| Error::Config(format!("{} is a baseline checkpoint with no generator", p.display())))?;
            let sel = a.channels.unwrap_or(ckpt.config.selection);
            if sel.channels() != g.spec.out_channels {
                return Err(Error::Config(format!(
                    "generator emits {} channel(s); {sel} has {}",
                    g.spec.out_channels,
                    sel.channels()
                )));
            }
            (g, sel, Some(ckpt.config.hash()))
        }
        None => {
            let sel = a.channels.unwrap_or(ChannelSelection::RedNir);
            let cfg = TrainConfig {
                selection: sel,
                tile_h: a.tile,
                tile_w: a.tile,
                seed,
                ..Default::default()
            };
            cfg.validate()?;
            (Generator::build(cfg.generator_spec(), &mut Prng::new(seed))?, sel, None)
        }
    };
    if is_nonempty_dir(&a.out) && !a.force {
        return Err(refuse(&a.out, "files"));
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let noise = generator.sample_noise(a.n, &mut Prng::new(seed).split())?;
    let (tiles, _) = generator.generate(&noise, Mode::Infer)?;
    let [n, c, h, w] = tiles.nchw();
    let mut files = Vec::new();
    for i in 0..n {
        for (ch, band) in selection.bands().iter().enumerate().take(c) {
            let start = (i * c + ch) * h * w;
            let g = Gray {
                height: h,
                width: w,
                data: tiles.data()[start..start + h * w].iter().map(|&v| to_gray_level(v)).collect(),
            };
            let p = a.out.join(format!("sample_{i:03}_{}.pgm", band.file_name()));
            save_pgm(&p, &g)?;
            files.push(p);
        }
    }
    let manifest = SampleManifest {
        checkpoint: a.checkpoint.as_deref(),
        selection,
        n: a.n,
        seed,
        tile_h: h,
        tile_w: w,
        config_hash: hash,
        files,
    };
    write_json(&a.out.join("samples.json"), &manifest)?;
    println!("wrote {} PGM file(s) to {}", manifest.files.len(), a.out.display());
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let seed = require_seed(a.seed)?;
    let report = gradcheck::run_suite(seed)?;
    print!("{}", report.text());
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    if !report.passed() {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(Error::GradCheck(failed.join(", ")));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Parses, runs, and returns the process exit code: 0 success, 1 usage,
/// 2 data or format, 3 numeric failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
