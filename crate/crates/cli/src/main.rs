//! `vbranch` command-line driver.
//!
//! Every command resolves its settings as defaults, then `--config FILE`,
//! then flags, and writes the result to `<out>/config.resolved` before doing
//! any work. Exit codes: 0 success, 1 validation or runtime failure, 2 usage
//! error.

mod commands;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use vbranch::config::FlatConfig;

#[derive(Parser, Debug)]
#[command(name = "vbranch", version, about = "Virtual branching ensembles for metric learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory; every file a command writes lands here.
    #[arg(long, global = true, default_value = "vbranch-out")]
    out: PathBuf,

    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "VBRANCH_THREADS")]
    threads: Option<usize>,

    /// Flat `key = value` config file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the neuron partition of a layer or of every branched layer.
    Partition(PartitionArgs),
    /// Export per-sample region heatmaps as CSV grids.
    Heatmap(HeatmapArgs),
    /// Assign samples to front/side/back orientation subsets.
    Orient(OrientArgs),
    /// Generate a synthetic dataset with keypoints.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus the loss history.
    Train(TrainArgs),
    /// Rank the query split against the gallery split.
    Eval(EvalArgs),
    /// Time training and inference for several branch counts.
    Bench(BenchArgs),
    /// Run the gradient, oracle and invariant self-checks.
    Verify,
}

#[derive(Args, Debug)]
struct PartitionArgs {
    /// Layer width; without it every branched layer of the model is shown.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    keypoints: Option<PathBuf>,
    /// neck, hip or ankle
    #[arg(long)]
    region: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Heatmap grid as HxW.
    #[arg(long)]
    dims: Option<String>,
    /// Image size the keypoints refer to, as HxW.
    #[arg(long)]
    image: Option<String>,
    #[arg(long)]
    min_confidence: Option<f64>,
}

#[derive(Args, Debug)]
struct OrientArgs {
    #[arg(long)]
    keypoints: Option<PathBuf>,
    #[arg(long)]
    min_confidence: Option<f64>,
    /// Swap front and back.
    #[arg(long)]
    reverse: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    ids: Option<usize>,
    #[arg(long)]
    per_id: Option<usize>,
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Defaults to `keypoints.jsonl` next to the manifest.
    #[arg(long)]
    keypoints: Option<PathBuf>,
    #[arg(long, value_parser = ["baseline", "landmark", "orientation"])]
    scheme: Option<String>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Average each embedding with that of the mirrored image.
    #[arg(long)]
    flip: bool,
    /// Also write per-query AP to `per_query.csv`.
    #[arg(long)]
    per_query: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Branch counts as `LO..HI` (inclusive) or a comma list.
    #[arg(long)]
    branches: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    infer_batch: Option<usize>,
}

/// A problem with how the command was invoked rather than with its inputs.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Flag values as config overrides, skipping flags that were not given.
fn overrides(cmd: &Command, seed: Option<u64>) -> Vec<(&'static str, String)> {
    let mut v: Vec<(&'static str, Option<String>)> = vec![("seed", seed.map(|s| s.to_string()))];
    let s = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string());
    let t = |x: Option<String>| x;
    match cmd {
        Command::Partition(a) => {
            v.push(("d", a.d.map(|x| x.to_string())));
            v.push(("b", a.b.map(|x| x.to_string())));
            v.push(("delta", a.delta.map(|x| x.to_string())));
        }
        Command::Heatmap(a) => {
            v.push(("keypoints", s(&a.keypoints)));
            v.push(("region", t(a.region.clone())));
            v.push(("sigma_h", a.sigma.map(|x| x.to_string())));
            v.push(("dims", t(a.dims.clone())));
            v.push(("image", t(a.image.clone())));
            v.push(("min_confidence", a.min_confidence.map(|x| x.to_string())));
        }
        Command::Orient(a) => {
            v.push(("keypoints", s(&a.keypoints)));
            v.push(("min_confidence", a.min_confidence.map(|x| x.to_string())));
            v.push(("orient_reverse", a.reverse.then(|| "true".into())));
        }
        Command::Synth(a) => {
            v.push(("ids", a.ids.map(|x| x.to_string())));
            v.push(("per_id", a.per_id.map(|x| x.to_string())));
            v.push(("modes", a.modes.map(|x| x.to_string())));
            v.push(("noise", a.noise.map(|x| x.to_string())));
            v.push(("height", a.height.map(|x| x.to_string())));
            v.push(("width", a.width.map(|x| x.to_string())));
            v.push(("train_fraction", a.train_fraction.map(|x| x.to_string())));
        }
        Command::Train(a) => {
            v.push(("manifest", s(&a.manifest)));
            v.push(("keypoints", s(&a.keypoints)));
            v.push(("scheme", t(a.scheme.clone())));
            v.push(("b", a.b.map(|x| x.to_string())));
            v.push(("delta", a.delta.map(|x| x.to_string())));
            v.push(("epochs", a.epochs.map(|x| x.to_string())));
            v.push(("steps_per_epoch", a.steps_per_epoch.map(|x| x.to_string())));
            v.push(("lr0", a.lr0.map(|x| x.to_string())));
        }
        Command::Eval(a) => {
            v.push(("checkpoint", s(&a.checkpoint)));
            v.push(("manifest", s(&a.manifest)));
            v.push(("flip", a.flip.then(|| "true".into())));
            v.push(("per_query", a.per_query.then(|| "true".into())));
        }
        Command::Bench(a) => {
            v.push(("branches", t(a.branches.clone())));
            v.push(("reps", a.reps.map(|x| x.to_string())));
            v.push(("delta", a.delta.map(|x| x.to_string())));
            v.push(("infer_batch", a.infer_batch.map(|x| x.to_string())));
        }
        Command::Verify => {}
    }
    v.into_iter().filter_map(|(k, x)| x.map(|x| (k, x))).collect()
}

/// Defaults, then the config file, then flags. Keys outside `defaults` and
/// `optional` are rejected with the line they appear on.
fn resolve(
    defaults: &FlatConfig,
    optional: &[&str],
    file: Option<&Path>,
    flags: &[(&str, String)],
) -> anyhow::Result<FlatConfig> {
    let mut cfg = match file {
        Some(path) => FlatConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => FlatConfig::default(),
    };
    for (key, entry) in cfg.iter() {
        if defaults.get(key).is_none() && !optional.contains(&key) {
            let at = entry.line.map(|l| format!("line {l}: ")).unwrap_or_default();
            let path = file.map(|p| p.display().to_string()).unwrap_or_default();
            anyhow::bail!("{path}: {at}unknown key '{key}'");
        }
    }
    for (key, entry) in defaults.iter() {
        if cfg.get(key).is_none() {
            cfg.set(key, &entry.value);
        }
    }
    for (key, value) in flags {
        cfg.set(key, value);
    }
    Ok(cfg)
}

fn set_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    set_threads(cli.threads)?;
    let (defaults, optional) = commands::defaults(&cli.command);
    let flags = overrides(&cli.command, cli.seed);
    let cfg = resolve(&defaults, optional, cli.config.as_deref(), &flags)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    fs::write(cli.out.join("config.resolved"), cfg.to_text())
        .with_context(|| format!("writing {}", cli.out.join("config.resolved").display()))?;
    commands::execute(&cli.command, &cfg, &cli.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
