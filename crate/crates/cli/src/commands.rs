use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context as _, Result};
use vbranch::branching::{make_partition, table_header, BranchPlan};
use vbranch::config::FlatConfig;
use vbranch::datapipe::{generate_synthetic, load_keypoints, partition_by_orientation, Dataset, SynthConfig};
use vbranch::evaluator::{bench_branches, bench_csv, evaluate, BenchConfig};
use vbranch::objectives::{region_heatmap, Region};
use vbranch::selfcheck;
use vbranch::trainer::{history_csv, Checkpoint, TrainConfig, Trainer};

use crate::{Command, UsageError};

const MODEL_KEYS: [&str; 8] = [
    "input",
    "stem_channels",
    "stem_strides",
    "block_channels",
    "head_hidden",
    "embed_dim",
    "bn_epsilon",
    "bn_momentum",
];

fn train_defaults(keep: &[&str]) -> FlatConfig {
    let all = TrainConfig::default().to_flat();
    let mut f = FlatConfig::default();
    for (k, e) in all.iter() {
        if keep.contains(&k) || MODEL_KEYS.contains(&k) {
            f.set(k, &e.value);
        }
    }
    f
}

fn flat(pairs: &[(&str, String)]) -> FlatConfig {
    let mut f = FlatConfig::default();
    for (k, v) in pairs {
        f.set(k, v);
    }
    f
}

/// Default values of every key a command accepts, and the keys it accepts
/// without a default.
pub fn defaults(cmd: &Command) -> (FlatConfig, &'static [&'static str]) {
    match cmd {
        Command::Partition(_) => (train_defaults(&["b", "delta", "seed"]), &["d"]),
        Command::Heatmap(_) => (
            flat(&[
                ("region", "neck".into()),
                ("sigma_h", "1.5".into()),
                ("dims", "8x4".into()),
                ("image", "32x16".into()),
                ("min_confidence", "0.1".into()),
                ("seed", "0".into()),
            ]),
            &["keypoints"],
        ),
        Command::Orient(_) => (
            flat(&[
                ("min_confidence", "0.1".into()),
                ("orient_reverse", "false".into()),
                ("seed", "0".into()),
            ]),
            &["keypoints"],
        ),
        Command::Synth(_) => {
            let s = SynthConfig::default();
            (
                flat(&[
                    ("ids", s.ids.to_string()),
                    ("per_id", s.per_id.to_string()),
                    ("modes", s.modes.to_string()),
                    ("noise", s.noise.to_string()),
                    ("height", s.height.to_string()),
                    ("width", s.width.to_string()),
                    ("train_fraction", s.train_fraction.to_string()),
                    ("seed", s.seed.to_string()),
                ]),
                &[],
            )
        }
        Command::Train(_) => (TrainConfig::default().to_flat(), &["manifest", "keypoints"]),
        Command::Eval(_) => (
            flat(&[("flip", "false".into()), ("per_query", "false".into()), ("seed", "0".into())]),
            &["checkpoint", "manifest"],
        ),
        Command::Bench(_) => {
            let b = BenchConfig::default();
            let mut f = train_defaults(&["seed"]);
            f.set("branches", format!("{}..{}", b.branches[0], b.branches[b.branches.len() - 1]));
            f.set("reps", b.reps);
            f.set("delta", b.delta);
            f.set("infer_batch", b.infer_batch);
            f.set("p", b.p);
            f.set("k", b.k);
            f.set("steps_per_epoch", b.steps_per_epoch);
            (f, &[])
        }
        Command::Verify => (flat(&[("seed", "0".into())]), &[]),
    }
}

fn value<T: FromStr>(cfg: &FlatConfig, key: &str) -> Result<T> {
    cfg.parse_value(key)?
        .ok_or_else(|| UsageError(format!("missing setting '{key}'")).into())
}

fn required_path(cfg: &FlatConfig, key: &str) -> Result<PathBuf> {
    let e = cfg
        .get(key)
        .ok_or_else(|| UsageError(format!("--{key} (or '{key}' in the config) is required")))?;
    let path = PathBuf::from(&e.value);
    if !path.exists() {
        bail!("{key} file {} does not exist", path.display());
    }
    Ok(path)
}

fn dims(cfg: &FlatConfig, key: &str) -> Result<(usize, usize)> {
    let e = cfg.get(key).ok_or_else(|| UsageError(format!("missing setting '{key}'")))?;
    let parsed = e
        .value
        .split_once('x')
        .and_then(|(h, w)| Some((h.trim().parse().ok()?, w.trim().parse().ok()?)))
        .filter(|&(h, w): &(usize, usize)| h > 0 && w > 0);
    parsed.ok_or_else(|| {
        vbranch::Error::Config {
            line: e.line,
            message: format!("{key} must look like HxW, got '{}'", e.value),
        }
        .into()
    })
}

fn branch_list(cfg: &FlatConfig) -> Result<Vec<usize>> {
    let e = cfg.get("branches").ok_or_else(|| UsageError("missing setting 'branches'".into()))?;
    let bad = || vbranch::Error::Config {
        line: e.line,
        message: format!("branches must be LO..HI or a comma list, got '{}'", e.value),
    };
    let list: Vec<usize> = match e.value.split_once("..") {
        Some((lo, hi)) => {
            let (lo, hi): (usize, usize) = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
            (lo..=hi).collect()
        }
        None => e
            .value
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?,
    };
    if list.is_empty() || list.contains(&0) {
        return Err(bad().into());
    }
    Ok(list)
}

fn write(out: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = out.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Keep sample ids usable as file names.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

/// Runs the command; `Ok(false)` reports a failed check.
pub fn execute(cmd: &Command, cfg: &FlatConfig, out: &Path) -> Result<bool> {
    match cmd {
        Command::Partition(_) => partition(cfg, out),
        Command::Heatmap(_) => heatmap(cfg, out),
        Command::Orient(_) => orient(cfg, out),
        Command::Synth(_) => synth(cfg, out),
        Command::Train(_) => train(cfg, out),
        Command::Eval(_) => eval(cfg, out),
        Command::Bench(_) => bench(cfg, out),
        Command::Verify => verify(cfg, out),
    }
}

fn partition(cfg: &FlatConfig, out: &Path) -> Result<bool> {
    let b: usize = value(cfg, "b")?;
    let delta: f64 = value(cfg, "delta")?;
    let layers = match cfg.parse_value::<usize>("d")? {
        Some(d) => vec![make_partition("layer", d, b, delta)?],
        None => {
            let model = TrainConfig::from_flat(cfg)?.model;
            BranchPlan::new(&model, b, delta)?.layers
        }
    };
    let mut table = table_header(b) + "\n";
    for p in &layers {
        table += &format!("{p}\n");
    }
    print!("{table}");
    write(out, "partition.txt", &table)?;
    Ok(true)
}

fn heatmap(cfg: &FlatConfig, out: &Path) -> Result<bool> {
    let records = load_keypoints(&required_path(cfg, "keypoints")?)?;
    let region = Region::parse(&value::<String>(cfg, "region")?)?;
    let sigma: f64 = value(cfg, "sigma_h")?;
    let grid = dims(cfg, "dims")?;
    let image = dims(cfg, "image")?;
    let min_conf: f64 = value(cfg, "min_confidence")?;
    let dir = out.join("heatmaps");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let header: Vec<String> = (0..grid.1).map(|c| format!("c{c}")).collect();
    let (mut written, mut skipped) = (0, 0);
    for r in &records {
        match region_heatmap(r, region, sigma, image, grid, min_conf) {
            Ok(h) => {
                write(&dir, &format!("{}.csv", file_stem(&r.sample_id)), &format!("{}\n{}", header.join(","), h.to_csv()))?;
                written += 1;
            }
            Err(vbranch::Error::Data(msg)) => {
                eprintln!("skipped: {msg}");
                skipped += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    println!("{written} {} heatmaps written to {}, {skipped} samples skipped", region.name(), dir.display());
    Ok(true)
}

fn orient(cfg: &FlatConfig, out: &Path) -> Result<bool> {
    let records = load_keypoints(&required_path(cfg, "keypoints")?)?;
    let report = partition_by_orientation(&records, value(cfg, "min_confidence")?, value(cfg, "orient_reverse")?);
    write(out, "orientation.csv", &report.to_csv())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_id", "reason"])?;
    for (id, reason) in &report.unassignable {
        w.write_record([id, reason])?;
    }
    write(out, "unassignable.csv", &String::from_utf8(w.into_inner()?)?)?;
    for s in vbranch::datapipe::Subset::ALL {
        println!("{:<6} {}", s.name(), report.count(s));
    }
    println!("unassignable {}", report.unassignable.len());
    Ok(true)
}

fn synth(cfg: &FlatConfig, out: &Path) -> Result<bool> {
    let sc = SynthConfig {
        ids: value(cfg, "ids")?,
        per_id: value(cfg, "per_id")?,
        modes: value(cfg, "modes")?,
        noise: value(cfg, "noise")?,
        height: value(cfg, "height")?,
        width: value(cfg, "width")?,
        train_fraction: value(cfg, "train_fraction")?,
        seed: value(cfg, "seed")?,
    };
    let data = generate_synthetic(&sc)?.dataset;
    data.save(out)?;
    println!("{} samples of {} identities written to {}", data.len(), sc.ids, out.display());
    Ok(true)
}

fn train(cfg: &FlatConfig, out: &Path) -> Result<bool> {
    let manifest = required_path(cfg, "manifest")?;
    let keypoints = match cfg.get("keypoints") {
        Some(_) => Some(required_path(cfg, "keypoints")?),
        None => None,
    };
    let tc = TrainConfig::from_flat(cfg)?;
    let data = Dataset::load(&manifest, keypoints.as_deref())?;
    let mut trainer = Trainer::new(tc.clone(), &data)?;
    for _ in 0..tc.total_steps() {
        let row = trainer.step()?;
        if row.step % tc.steps_per_epoch == 0 {
            eprintln!("epoch {:>4}  lr {:.3e}  loss {:.5}", row.epoch, row.lr, row.loss.total);
        }
    }
    let outcome = trainer.finish();
    outcome.checkpoint.save(&out.join("checkpoint.vbck"))?;
    write(out, "history.csv", &history_csv(&outcome.history))?;
    if let Some(last) = outcome.history.last() {
        println!("final loss {:.6} (triplet {:.6})", last.loss.total, last.loss.triplet);
    }
    if outcome.resampled > 0 || outcome.unassignable > 0 {
        println!("resampled {} batch slots, {} unassignable samples", outcome.resampled, outcome.unassignable);
    }
    println!("checkpoint written to {}", out.join("checkpoint.vbck").display());
    Ok(true)
}

fn eval(cfg: &FlatConfig, out: &Path) -> Result<bool> {
    let ckpt = Checkpoint::load(&required_path(cfg, "checkpoint")?)?;
    let data = Dataset::load(&required_path(cfg, "manifest")?, None)?;
    let report = evaluate(&ckpt.model()?, &data, value(cfg, "flip")?)?;
    write(out, "metrics.csv", &report.to_csv())?;
    if value(cfg, "per_query")? {
        write(out, "per_query.csv", &report.per_query_csv())?;
    }
    print!("{}", report.to_text());
    Ok(true)
}

fn bench(cfg: &FlatConfig, out: &Path) -> Result<bool> {
    let bc = BenchConfig {
        model: TrainConfig::from_flat(cfg)?.model,
        branches: branch_list(cfg)?,
        delta: value(cfg, "delta")?,
        reps: value(cfg, "reps")?,
        infer_batch: value(cfg, "infer_batch")?,
        p: value(cfg, "p")?,
        k: value(cfg, "k")?,
        steps_per_epoch: value(cfg, "steps_per_epoch")?,
        seed: value(cfg, "seed")?,
    };
    let text = bench_csv(&bench_branches(&bc)?);
    write(out, "bench.csv", &text)?;
    print!("{text}");
    Ok(true)
}

fn verify(cfg: &FlatConfig, out: &Path) -> Result<bool> {
    let results = selfcheck::run_all(value(cfg, "seed")?);
    let text = selfcheck::summary(&results);
    write(out, "verify.txt", &text)?;
    print!("{text}");
    Ok(results.iter().all(|r| r.passed))
}
