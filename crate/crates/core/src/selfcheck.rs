//! Quick self-verification suites run by the `verify` command.
//!
//! Three suites: finite-difference gradient checks of every differentiable
//! op, fixed input/output oracles, and structural invariants of the branched
//! model. Each finishes in seconds on the small shapes used here.

use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::branching::{make_partition, BranchPlan, BranchedModel, ModelConfig, Mode};
use crate::datapipe::{
    assign_subset, generate_synthetic, orientation_angle, KeypointName, KeypointRecord, PkSampler, Subset,
    SynthConfig,
};
use crate::error::Result;
use crate::evaluator::{rank_queries, EmbeddingIndex, IndexRow};
use crate::objectives::{
    combined_loss, localization_loss, make_heatmap, normalize_activation, triplet_loss_batch_hard, Heatmap, Region,
};
use crate::rng::{indexed_stream, Rng, Stream};
use crate::tensor::gradcheck::check_gradients;
use crate::tensor::{BatchNormConfig, BatchNormMode, Padding, Tape, Tensor, Var};
use crate::trainer::lr_at;

/// Largest accepted relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(suite: &'static str, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            suite,
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut out = gradient_suite(seed, 3);
    out.extend(oracle_suite());
    out.extend(invariant_suite(seed));
    out
}

/// One line per check, then a per-suite tally.
pub fn summary(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        writeln!(s, "{tag} {:<10} {:<28} {}", r.suite, r.name, r.detail).unwrap();
    }
    for suite in ["gradient", "oracle", "invariant"] {
        let all: Vec<&CheckResult> = results.iter().filter(|r| r.suite == suite).collect();
        let ok = all.iter().filter(|r| r.passed).count();
        writeln!(s, "{suite}: {ok}/{} passed", all.len()).unwrap();
    }
    s
}

fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(rng))
}

/// Reduce to a scalar through fixed random weights so every output entry
/// contributes a distinct gradient.
fn project(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.mul_const(y, weights)?;
    Ok(tape.sum(w))
}

type Case = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// Names of the ops covered by [`gradient_case`].
pub const GRADIENT_OPS: [&str; 21] = [
    "conv2d_same",
    "conv2d_valid",
    "conv2d_stride2",
    "dense",
    "batchnorm_train",
    "batchnorm_infer",
    "relu",
    "add",
    "scale",
    "sum",
    "mul_const",
    "scale_mask",
    "concat",
    "select_last",
    "channel_mean",
    "global_avg_pool",
    "bilinear_resize",
    "normalize_activation",
    "triplet_loss",
    "localization_loss",
    "combined_loss",
];

/// Random inputs and scalar-valued function exercising one op.
pub fn gradient_case(op: &str, rng: &mut Rng) -> (Vec<Tensor>, Case) {
    let w = |rng: &mut Rng, shape: &[usize]| normal(rng, shape);
    match op {
        "conv2d_same" | "conv2d_valid" | "conv2d_stride2" => {
            let (xs, ks, stride, pad) = match op {
                "conv2d_same" => ([2, 5, 4, 3], [3, 3, 3, 2], 1, Padding::Same),
                "conv2d_valid" => ([1, 5, 5, 2], [3, 3, 2, 3], 1, Padding::Valid),
                _ => ([2, 6, 5, 2], [3, 3, 2, 2], 2, Padding::Same),
            };
            let inputs = vec![normal(rng, &xs), normal(rng, &ks)];
            let mut probe = Tape::new();
            let (a, b) = (probe.leaf(inputs[0].clone()), probe.leaf(inputs[1].clone()));
            let y = probe.conv2d(a, b, stride, pad).expect("conv shapes");
            let weights = w(rng, probe.shape(y));
            (
                inputs,
                Box::new(move |t, v| {
                    let y = t.conv2d(v[0], v[1], stride, pad)?;
                    project(t, y, &weights)
                }),
            )
        }
        "dense" => {
            let weights = w(rng, &[3, 5]);
            (
                vec![normal(rng, &[3, 4]), normal(rng, &[4, 5]), normal(rng, &[5])],
                Box::new(move |t, v| {
                    let y = t.dense(v[0], v[1], v[2])?;
                    project(t, y, &weights)
                }),
            )
        }
        "batchnorm_train" | "batchnorm_infer" => {
            let train = op == "batchnorm_train";
            let weights = w(rng, &[2, 3, 2, 3]);
            let mean: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
            (
                vec![normal(rng, &[2, 3, 2, 3]), normal(rng, &[3]), normal(rng, &[3])],
                Box::new(move |t, v| {
                    let mode = if train {
                        BatchNormMode::Train
                    } else {
                        BatchNormMode::Infer {
                            running_mean: &mean,
                            running_var: &var,
                        }
                    };
                    let (y, _) = t.batchnorm(v[0], v[1], v[2], mode, BatchNormConfig::default())?;
                    project(t, y, &weights)
                }),
            )
        }
        "relu" | "scale" | "sum" | "mul_const" | "scale_mask" | "channel_mean" | "global_avg_pool" => {
            let shape = [2, 3, 2, 4];
            let x = normal(rng, &shape);
            let factor = rng.random_range(-2.0..2.0);
            let constant = w(rng, &shape);
            let mask: Vec<f64> = (0..4).map(|j| (j % 2) as f64).collect();
            let op = op.to_string();
            let out_shape: Vec<usize> = match op.as_str() {
                "sum" => vec![],
                "channel_mean" => vec![2, 3, 2],
                "global_avg_pool" => vec![2, 4],
                _ => shape.to_vec(),
            };
            let weights = w(rng, &out_shape);
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = match op.as_str() {
                        "relu" => t.relu(v[0]),
                        "scale" => t.scale(v[0], factor),
                        "sum" => t.sum(v[0]),
                        "mul_const" => t.mul_const(v[0], &constant)?,
                        "scale_mask" => t.scale_mask(v[0], &mask)?,
                        "channel_mean" => t.channel_mean(v[0])?,
                        _ => t.global_avg_pool(v[0])?,
                    };
                    project(t, y, &weights)
                }),
            )
        }
        "add" => {
            let weights = w(rng, &[3, 4]);
            (
                vec![normal(rng, &[3, 4]), normal(rng, &[3, 4])],
                Box::new(move |t, v| {
                    let y = t.add(v[0], v[1])?;
                    project(t, y, &weights)
                }),
            )
        }
        "concat" => {
            let weights = w(rng, &[3, 5]);
            (
                vec![normal(rng, &[3, 2]), normal(rng, &[3, 3])],
                Box::new(move |t, v| {
                    let y = t.concat(&[v[0], v[1]], 1)?;
                    project(t, y, &weights)
                }),
            )
        }
        "select_last" => {
            let weights = w(rng, &[3, 3]);
            (
                vec![normal(rng, &[3, 5])],
                Box::new(move |t, v| {
                    let y = t.select_last(v[0], &[4, 1, 2])?;
                    project(t, y, &weights)
                }),
            )
        }
        "bilinear_resize" => {
            let weights = w(rng, &[2, 5, 7]);
            (
                vec![normal(rng, &[2, 3, 4])],
                Box::new(move |t, v| {
                    let y = t.bilinear_resize(v[0], (5, 7))?;
                    project(t, y, &weights)
                }),
            )
        }
        "normalize_activation" => {
            let weights = w(rng, &[2, 4, 3]);
            (
                vec![normal(rng, &[2, 4, 3, 2])],
                Box::new(move |t, v| {
                    let y = normalize_activation(t, v[0])?;
                    project(t, y, &weights)
                }),
            )
        }
        "triplet_loss" => (
            vec![normal(rng, &[6, 3])],
            Box::new(|t, v| triplet_loss_batch_hard(t, v[0], &[0, 0, 1, 1, 2, 2], 0.2)),
        ),
        "localization_loss" | "combined_loss" => {
            let maps = random_heatmaps(rng, 2, (6, 5));
            let combined = op == "combined_loss";
            let mut inputs = vec![normal(rng, &[2, 4, 3, 2])];
            if combined {
                inputs.push(normal(rng, &[4, 3]));
            }
            (
                inputs,
                Box::new(move |t, v| {
                    let refs: Vec<Option<&Heatmap>> = maps.iter().map(Some).collect();
                    let loc = localization_loss(t, v[0], &refs)?;
                    if !combined {
                        return Ok(loc);
                    }
                    let trip = triplet_loss_batch_hard(t, v[1], &[0, 0, 1, 1], 0.2)?;
                    crate::objectives::combine_on_tape(t, trip, &[loc], 0.2)
                }),
            )
        }
        other => panic!("no gradient case for {other}"),
    }
}

fn random_heatmaps(rng: &mut Rng, n: usize, dims: (usize, usize)) -> Vec<Heatmap> {
    (0..n)
        .map(|_| {
            let kp = (rng.random_range(0.0..dims.1 as f64), rng.random_range(0.0..dims.0 as f64));
            make_heatmap(kp, rng.random_range(0.8..2.0), dims, Region::Neck).expect("valid heatmap")
        })
        .collect()
}

pub fn gradient_suite(seed: u64, instances: usize) -> Vec<CheckResult> {
    GRADIENT_OPS
        .iter()
        .enumerate()
        .map(|(k, op)| {
            let mut rng = indexed_stream(seed, Stream::Verify, k as u64);
            let mut worst = 0.0f64;
            let mut error = None;
            for _ in 0..instances {
                let (inputs, f) = gradient_case(op, &mut rng);
                match check_gradients(&inputs, FD_STEP, f) {
                    Ok(r) => worst = worst.max(r.max_rel_error),
                    Err(e) => error = Some(e.to_string()),
                }
            }
            match error {
                Some(e) => CheckResult::new("gradient", *op, false, e),
                None => CheckResult::new(
                    "gradient",
                    *op,
                    worst < GRAD_TOLERANCE,
                    format!("max rel error {worst:.2e} over {instances} instances"),
                ),
            }
        })
        .collect()
}

fn check(name: &str, f: impl FnOnce() -> Result<bool>) -> CheckResult {
    match f() {
        Ok(ok) => CheckResult::new("oracle", name, ok, ""),
        Err(e) => CheckResult::new("oracle", name, false, e.to_string()),
    }
}

fn torso(rs: (f64, f64), ls: (f64, f64), height: f64) -> KeypointRecord {
    KeypointRecord::new("t")
        .with(KeypointName::RightShoulder, rs.0, rs.1, 1.0)
        .with(KeypointName::LeftShoulder, ls.0, ls.1, 1.0)
        .with(KeypointName::RightHip, rs.0, rs.1 + height, 1.0)
        .with(KeypointName::LeftHip, ls.0, ls.1 + height, 1.0)
}

fn index_row(id: &str, identity: i64, camera: i64, e: f64) -> IndexRow {
    IndexRow {
        sample_id: id.into(),
        identity,
        camera,
        embedding: vec![e],
    }
}

pub fn oracle_suite() -> Vec<CheckResult> {
    let one_minus_inv_e = 1.0 - (-1.0f64).exp();
    vec![
        check("partition_12_2_half", || {
            let p = make_partition("l", 12, 2, 0.5)?;
            Ok((p.sigma, p.omega) == (4, 4) && p.unique_idx[1] == vec![8, 9, 10, 11])
        }),
        check("partition_10_3_quarter", || {
            let p = make_partition("l", 10, 3, 0.25)?;
            Ok((p.sigma, p.omega, p.remainder) == (1, 3, 0))
        }),
        check("partition_delta_zero", || {
            let p = make_partition("l", 128, 4, 0.0)?;
            Ok((p.sigma, p.omega) == (0, 32))
        }),
        check("concat_dim_172", || {
            Ok(BranchPlan::new(&ModelConfig::default(), 2, 0.5)?.concat_dim()? == 172)
        }),
        check("heatmap_values", || {
            let a = make_heatmap((2.0, 4.0), 1.0, (8, 8), Region::Neck)?;
            let b = make_heatmap((2.0, 4.0), 2.0, (8, 8), Region::Neck)?;
            Ok(a.at(4, 2) == 0.0
                && (a.at(4, 3) - one_minus_inv_e).abs() < 1e-9
                && (b.at(6, 2) - one_minus_inv_e).abs() < 1e-9)
        }),
        check("heatmap_fusion", || {
            let l = make_heatmap((1.0, 2.0), 1.0, (5, 5), Region::Hip)?;
            let r = make_heatmap((3.0, 2.0), 1.0, (5, 5), Region::Hip)?;
            Ok((l.fuse_bilateral(&r)?.at(2, 1) - (1.0 - (-4.0f64).exp())).abs() < 1e-9)
        }),
        check("normalize_activation", || {
            let mut t = Tape::new();
            let x = t.constant(Tensor::new([2, 2, 1], vec![0.0, 2.0, 4.0, 8.0])?);
            let y = normalize_activation(&mut t, x)?;
            Ok(t.value(y).data() == [0.0, 0.25, 0.5, 1.0])
        }),
        check("localization_loss", || {
            let h = Heatmap {
                height: 2,
                width: 2,
                grid: vec![0.0, 0.5, 0.5, 0.8],
                region: Region::Neck,
                sigma_h: 1.0,
            };
            let mut t = Tape::new();
            let a = t.constant(Tensor::new([1, 2, 2, 1], vec![1.0, 0.0, 0.0, 0.0])?);
            let b = t.constant(Tensor::new([1, 2, 2, 1], vec![0.0, 0.0, 0.0, 1.0])?);
            let la = localization_loss(&mut t, a, &[Some(&h)])?;
            let lb = localization_loss(&mut t, b, &[Some(&h)])?;
            Ok(t.value(la).item() == 0.0 && t.value(lb).item() == 0.8)
        }),
        check("triplet_hand_example", || {
            let mut t = Tape::new();
            let e = t.constant(Tensor::new([4, 1], vec![0.0, 0.1, 0.3, 0.5])?);
            let l = triplet_loss_batch_hard(&mut t, e, &[0, 0, 1, 1], 0.2)?;
            Ok((t.value(l).item() - 0.3).abs() < 1e-15)
        }),
        check("triplet_identical_rows", || {
            let mut t = Tape::new();
            let e = t.constant(Tensor::full([6, 2], 0.4));
            let l = triplet_loss_batch_hard(&mut t, e, &[0, 0, 1, 1, 2, 2], 0.2)?;
            Ok((t.value(l).item() - 6.0 * 0.2).abs() < 1e-15)
        }),
        check("combined_loss", || {
            Ok((combined_loss(0.3, &[(Region::Neck, 0.8)], 0.2)?.total - 0.46).abs() < 1e-15)
        }),
        check("orientation_examples", || {
            let cases = [
                ((6.0, 2.0), (0.0, 2.0), 0.7227, Subset::Front),
                ((4.0, 2.0), (3.0, 2.0), 1.4455, Subset::Side),
                ((0.0, 2.0), (6.0, 2.0), 2.4189, Subset::Back),
            ];
            let mut ok = true;
            for (rs, ls, want, subset) in cases {
                let theta = orientation_angle(&torso(rs, ls, 8.0), 0.1)?;
                ok &= (theta - want).abs() < 5e-5 && assign_subset(theta) == subset;
            }
            Ok(ok && assign_subset(0.0) == Subset::Front && assign_subset(std::f64::consts::PI) == Subset::Back)
        }),
        check("lr_schedule", || {
            Ok(lr_at(50, 3e-4, 50) == 3e-4 && lr_at(65, 3e-4, 50) == 1.5e-4 && lr_at(150, 3e-4, 50) == 3e-4 / 1024.0)
        }),
        check("average_precision", || {
            let q = EmbeddingIndex::new(vec![index_row("q", 1, 0, 0.0)])?;
            let g = EmbeddingIndex::new(vec![
                index_row("a", 1, 1, 1.0),
                index_row("b", 2, 1, 2.0),
                index_row("c", 1, 1, 3.0),
            ])?;
            let r = rank_queries(&q, &g)?;
            Ok(r.map == 0.5 * (1.0 + 2.0 / 3.0) && r.cmc_at(1) == 1.0)
        }),
        check("same_camera_exclusion", || {
            let q = EmbeddingIndex::new(vec![index_row("q", 1, 0, 0.0)])?;
            let g = EmbeddingIndex::new(vec![index_row("a", 1, 0, 0.0), index_row("b", 2, 1, 1.0)])?;
            let r = rank_queries(&q, &g)?;
            Ok((r.scored, r.skipped) == (0, 1))
        }),
    ]
}

fn invariant(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((ok, detail)) => CheckResult::new("invariant", name, ok, detail),
        Err(e) => CheckResult::new("invariant", name, false, e.to_string()),
    }
}

fn small_model() -> ModelConfig {
    ModelConfig {
        in_height: 8,
        in_width: 4,
        in_channels: 3,
        stem_channels: vec![4, 6],
        stem_strides: vec![1, 2],
        block_channels: vec![6, 6],
        head_hidden: 12,
        embed_dim: 10,
        bn: BatchNormConfig::default(),
    }
}

/// Inference-mode per-branch embeddings.
fn branch_embeddings(model: &BranchedModel, x: &Tensor) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let outs = model.forward_branches(&mut tape, &bound, xv, Mode::Infer, &mut Vec::new())?;
    Ok(outs.iter().map(|o| tape.value(o.embedding).clone()).collect())
}

fn unmasked_embedding(model: &BranchedModel, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = model.forward_unmasked(&mut tape, &bound, xv, Mode::Infer, &mut Vec::new())?;
    Ok(tape.value(out.embedding).clone())
}

/// Fill every parameter, running statistics included, with random values.
/// Every branch gets branch 1's statistics, as after identical batches.
fn randomize(model: &mut BranchedModel, rng: &mut Rng) {
    for p in model.params_mut() {
        let positive = p.name.contains("running_var");
        for v in p.value.data_mut() {
            *v = if positive { rng.random_range(0.5..2.0) } else { rng.random_range(-1.0..1.0) };
        }
    }
    let copies: Vec<(usize, Tensor)> = model
        .params()
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (stem, branch) = p.name.rsplit_once(".b")?;
            let branch: usize = branch.parse().ok()?;
            (branch > 1).then(|| (i, model.param(&format!("{stem}.b1")).unwrap().value.clone()))
        })
        .collect();
    for (i, v) in copies {
        model.params_mut()[i].value = v;
    }
}

pub fn invariant_suite(seed: u64) -> Vec<CheckResult> {
    let cfg = small_model();
    vec![
        invariant("partition_grid", || {
            let mut bad = 0;
            for d in [8, 12, 100, 128] {
                for b in 1..=6 {
                    for delta in [0.0, 0.25, 0.5, 1.0] {
                        let p = make_partition("l", d, b, delta)?;
                        let mut seen = vec![0u8; d];
                        for &j in p.shared_idx.iter().chain(p.unique_idx.iter().flatten()) {
                            seen[j] += 1;
                        }
                        let recovers = p.omega == 0
                            || (delta - p.sigma as f64 / (p.sigma + p.omega) as f64).abs()
                                <= 1.0 / (p.sigma + p.omega) as f64;
                        if seen.iter().any(|&c| c != 1) || p.sigma + b * p.omega + p.remainder != d || !recovers {
                            bad += 1;
                        }
                    }
                }
            }
            Ok((bad == 0, format!("{bad} failing layouts")))
        }),
        invariant("parameter_count", || {
            let base = BranchedModel::baseline(cfg.clone(), seed)?.trainable_count();
            for b in 1..=4 {
                for delta in [0.0, 0.25, 0.5, 1.0] {
                    let m = BranchedModel::new(cfg.clone(), BranchPlan::new(&cfg, b, delta)?, seed)?;
                    if m.trainable_count() != base {
                        return Ok((false, format!("b={b} delta={delta}")));
                    }
                }
            }
            Ok((true, format!("{base} trainable values")))
        }),
        invariant("baseline_collapse", || {
            let mut rng = indexed_stream(seed, Stream::Verify, 100);
            let mut base = BranchedModel::baseline(cfg.clone(), seed)?;
            randomize(&mut base, &mut rng);
            let values: Vec<(String, Tensor)> =
                base.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
            let mut single = BranchedModel::new(cfg.clone(), BranchPlan::new(&cfg, 1, 0.3)?, seed)?;
            single.load_values(&values)?;
            let x = normal(&mut rng, &[3, 8, 4, 3]);
            let reference = unmasked_embedding(&base, &x)?;
            Ok((branch_embeddings(&single, &x)?[0] == reference, String::new()))
        }),
        invariant("full_sharing_collapse", || {
            let mut rng = indexed_stream(seed, Stream::Verify, 101);
            let mut m = BranchedModel::new(cfg.clone(), BranchPlan::new(&cfg, 3, 1.0)?, seed)?;
            randomize(&mut m, &mut rng);
            let x = normal(&mut rng, &[3, 8, 4, 3]);
            let reference = unmasked_embedding(&m, &x)?;
            let outs = branch_embeddings(&m, &x)?;
            Ok((outs.iter().all(|e| *e == reference), String::new()))
        }),
        invariant("branch_isolation", || {
            let mut rng = indexed_stream(seed, Stream::Verify, 102);
            let mut m = BranchedModel::new(cfg.clone(), BranchPlan::new(&cfg, 3, 0.5)?, seed)?;
            let x = normal(&mut rng, &[2, 8, 4, 3]);
            let before = branch_embeddings(&m, &x)?;
            let exclusive = m.branch_exclusive(1)?;
            for _ in 0..10 {
                for (pi, flat) in &exclusive {
                    for &j in flat {
                        m.params_mut()[*pi].value.data_mut()[j] = rng.random_range(-2.0..2.0);
                    }
                }
                let after = branch_embeddings(&m, &x)?;
                if after[0] != before[0] || after[2] != before[2] {
                    return Ok((false, "branch 1 or 3 moved".into()));
                }
            }
            Ok((true, String::new()))
        }),
        invariant("flops_affine_in_b", || {
            let flops: Vec<u64> = (1..=4)
                .map(|b| {
                    BranchedModel::new(cfg.clone(), BranchPlan::new(&cfg, b, 0.5)?, seed)?.forward_flops(2)
                })
                .collect::<Result<_>>()?;
            let slope = flops[1] - flops[0];
            let affine = flops.windows(2).all(|w| w[1] - w[0] == slope);
            Ok((affine, format!("slope {slope}")))
        }),
        invariant("synth_orientation_round_trip", || {
            let out = generate_synthetic(&SynthConfig {
                ids: 4,
                per_id: 6,
                noise: 0.3,
                seed,
                ..SynthConfig::default()
            })?;
            let mut ok = true;
            for (kp, pose) in out.dataset.keypoints.iter().zip(&out.poses) {
                let kp = kp.as_ref().expect("synthetic keypoints");
                ok &= assign_subset(orientation_angle(kp, 0.1)?) == *pose;
            }
            Ok((ok, format!("{} samples", out.poses.len())))
        }),
        invariant("pk_batch_shape", || {
            let groups = (0..5).map(|id| (id, (id as usize * 3..id as usize * 3 + 3).collect())).collect();
            let mut sampler = PkSampler::new(groups, 3, 4, indexed_stream(seed, Stream::Sampler, 0))?;
            let mut ok = true;
            for _ in 0..20 {
                let batch = sampler.next_batch();
                let mut ids = batch.labels.clone();
                ids.dedup();
                ok &= batch.len() == 12 && ids.len() == 3;
                ok &= ids.iter().all(|id| batch.labels.iter().filter(|l| *l == id).count() == 4);
            }
            Ok((ok, String::new()))
        }),
    ]
}
