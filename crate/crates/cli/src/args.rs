use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

/// Flag misuse detected after parsing (reported with a usage hint).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "wipu", version, about = "Train, evaluate and ablate physics-prior CNN denoisers")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its checkpoint and history.
    Train(TrainArgs),
    /// Score a checkpoint (or the identity baseline) at one or more noise levels.
    Eval(EvalArgs),
    /// Denoise images, optionally writing a clean/noisy/denoised grid.
    Denoise(DenoiseArgs),
    /// Train the single-prior variants and the full model under one config.
    Ablate(AblateArgs),
    /// Merge results CSVs into a model × σ table.
    Report(ReportArgs),
    /// Write a procedural dataset in the CIFAR-10 binary layout.
    SynthCifar(SynthArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Denoise(_) => "denoise",
            Command::Ablate(_) => "ablate",
            Command::Report(_) => "report",
            Command::SynthCifar(_) => "synth-cifar",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CIFAR-10 binary directory (overrides $WIPU_DATA_ROOT). Without either,
    /// a procedural stand-in dataset is generated in memory.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    /// `l2_only` or `eq2_dual`.
    #[arg(long, default_value = "l2_only")]
    pub loss_mode: String,
    #[arg(long, default_value_t = wipu_core::training::DEFAULT_LAMBDA_IMG)]
    pub lambda_img: f32,
    #[arg(long, default_value_t = wipu_core::training::DEFAULT_LAMBDA_RES)]
    pub lambda_res: f32,
    #[arg(long, default_value_t = 1234)]
    pub seed: u64,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Record elapsed seconds in history.csv (makes it run-dependent).
    #[arg(long)]
    pub wall_clock: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// dncnn, ffdnet, unet, simple_pu_cnn, punet_g, punet_pp, wipunet1..4 or wipunet.
    #[arg(long)]
    pub arch: String,
    /// Training noise level on the 8-bit scale.
    #[arg(long, default_value_t = 25.0)]
    pub sigma: f32,
    /// Cycle these noise levels step by step instead of a single `--sigma`.
    #[arg(long, value_delimiter = ',')]
    pub mixed_sigmas: Vec<f32>,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Conv layers (plain CNNs) or scales (U-Nets); arch default if omitted.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Require σ-map conditioning; rejected for σ-blind archs.
    #[arg(long)]
    pub sigma_map: bool,
    /// Training images to use (from the start of the training split).
    #[arg(long)]
    pub subset: Option<usize>,
    /// Held-out test images scored after every epoch; 0 disables.
    #[arg(long, default_value_t = 512)]
    pub eval_subset: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory (default `runs/<arch>_s<sigma>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint to score; omit with `--arch identity` for the noisy baseline.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Expected arch; must match the checkpoint when both are given.
    #[arg(long)]
    pub arch: Option<String>,
    /// Expected base width; must match the checkpoint when given.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "15,25,50,75,100")]
    pub sigmas: Vec<f32>,
    /// Test images to use (default: the whole test split).
    #[arg(long)]
    pub subset: Option<usize>,
    /// Score a folder of PNG/PPM images instead of the CIFAR test split.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Row label in results.csv (default: the arch name).
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = 1234)]
    pub seed: u64,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory; results.csv there is created or updated in place.
    #[arg(long, default_value = "runs/eval")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `identity` to run without a checkpoint.
    #[arg(long)]
    pub arch: Option<String>,
    /// An image file or a folder of PNG/PPM images, treated as clean.
    #[arg(long)]
    pub input: PathBuf,
    /// Noise level(s) to corrupt with and denoise at.
    #[arg(long, value_delimiter = ',', default_value = "25")]
    pub sigmas: Vec<f32>,
    /// Denoise the inputs as given instead of corrupting them first
    /// (uses the first `--sigmas` value as the assumed level).
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long, default_value_t = wipu_core::tiling::DEFAULT_TILE)]
    pub tile: usize,
    #[arg(long, default_value_t = wipu_core::tiling::DEFAULT_STRIDE)]
    pub stride: usize,
    /// Also write grid.png: a clean row, then noisy and denoised rows per σ.
    #[arg(long)]
    pub grid: bool,
    #[arg(long, default_value_t = 1234)]
    pub seed: u64,
    #[arg(long, default_value = "runs/denoise")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long, value_delimiter = ',', default_value = "15,25,50,75,100")]
    pub sigmas: Vec<f32>,
    /// Train once at this σ and score every `--sigmas` level; by default each
    /// level gets its own training run.
    #[arg(long)]
    pub train_sigma: Option<f32>,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 2048)]
    pub subset: usize,
    #[arg(long, default_value_t = 512)]
    pub test_subset: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "runs/ablation")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// results.csv files; later files win on duplicate (model, σ) rows.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Write report.md and report.csv here instead of printing markdown.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = wipu_core::data::synthetic::DEFAULT_SYNTHETIC_SEED)]
    pub seed: u64,
    /// Records per batch file.
    #[arg(long, default_value_t = 10_000)]
    pub records: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Replaces `--config <file>` with the file's `key=value` lines as flags,
/// inserted right after the subcommand so explicit flags still win.
pub fn expand_config(argv: &[OsString]) -> Result<Vec<OsString>> {
    let mut out = Vec::with_capacity(argv.len());
    let mut from_file = Vec::new();
    let mut i = 0;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        let path = if a == "--config" {
            i += 1;
            Some(argv.get(i).context("--config needs a file path")?.clone())
        } else {
            a.strip_prefix("--config=").map(OsString::from)
        };
        match path {
            Some(p) => from_file.extend(parse_config_file(&PathBuf::from(p))?),
            None => out.push(argv[i].clone()),
        }
        i += 1;
    }
    if !from_file.is_empty() {
        // program name, subcommand, then config-derived flags
        let at = out.len().min(2);
        out.splice(at..at, from_file);
    }
    Ok(out)
}

fn parse_config_file(path: &PathBuf) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut flags = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value, got `{line}`", path.display(), n + 1);
        };
        let key = format!("--{}", k.trim().replace('_', "-"));
        match v.trim() {
            "true" => flags.push(key.into()),
            "false" => {}
            v => {
                flags.push(key.into());
                flags.push(v.into());
            }
        }
    }
    Ok(flags)
}
