//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero when any
//! criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vbranch::branching::{make_partition, BranchPlan, BranchedModel, Mode, ModelConfig};
use vbranch::datapipe::{
    assign_subset, generate_synthetic, orientation_angle, KeypointName, KeypointRecord, Subset, SynthConfig,
};
use vbranch::evaluator::{bench_branches, evaluate, rank_queries, BenchConfig, EmbeddingIndex, IndexRow};
use vbranch::objectives::{make_heatmap, triplet_loss_batch_hard, Region};
use vbranch::selfcheck::{gradient_case, GRADIENT_OPS};
use vbranch::tensor::{Tape, Tensor};
use vbranch::trainer::{low_heatmap_mass, lr_at, train, Scheme, TrainConfig, Trainer};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- 1

fn eval_scalar(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[vbranch::tensor::Var]) -> vbranch::Result<vbranch::tensor::Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars).expect("forward");
    tape.value(out).item()
}

fn gradient_suite() -> Outcome {
    const INSTANCES: usize = 20;
    const STEP: f64 = 1e-5;
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    for (k, op) in GRADIENT_OPS.iter().enumerate() {
        let mut r = rng(1000 + k as u64);
        for _ in 0..INSTANCES {
            let (inputs, f) = gradient_case(op, &mut r);
            let mut tape = Tape::new();
            let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = f(&mut tape, &vars).expect("forward");
            let grads = tape.backward(out).expect("backward");
            let mut probe = inputs.clone();
            for (i, v) in vars.iter().enumerate() {
                let analytic = grads.get_or_zeros(*v, inputs[i].shape());
                for j in 0..inputs[i].numel() {
                    let x = inputs[i].data()[j];
                    probe[i].data_mut()[j] = x + STEP;
                    let plus = eval_scalar(&probe, &f);
                    probe[i].data_mut()[j] = x - STEP;
                    let minus = eval_scalar(&probe, &f);
                    probe[i].data_mut()[j] = x;
                    let numeric = (plus - minus) / (2.0 * STEP);
                    let a = analytic.data()[j];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                    if rel > worst.0 {
                        worst = (rel, op);
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 < 1e-4 && secs < 60.0,
        format!(
            "{} ops x {INSTANCES} instances, max rel error {:.2e} ({}), {secs:.1}s",
            GRADIENT_OPS.len(),
            worst.0,
            worst.1
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Exact (sigma, omega) for the grid's sharing degrees, whose inverses are
/// integers.
fn partition_oracle(d: usize, b: usize, delta: f64) -> (usize, usize) {
    if delta == 0.0 {
        return (0, d / b);
    }
    let inv = (1.0 / delta) as usize;
    let sigma = d / (1 + b * (inv - 1));
    (sigma, (inv - 1) * sigma)
}

fn partition_suite() -> Outcome {
    let mut failures = Vec::new();
    let mut layouts = 0;
    for d in [8, 12, 100, 128] {
        for b in 1..=6 {
            for delta in [0.0, 0.25, 0.5, 1.0] {
                layouts += 1;
                let p = make_partition("l", d, b, delta).expect("valid grid point");
                let (sigma, omega) = partition_oracle(d, b, delta);
                let mut count = vec![0usize; d];
                for &j in p.shared_idx.iter().chain(p.unique_idx.iter().flatten()) {
                    count[j] += 1;
                }
                let total_disjoint = count.iter().all(|&c| c == 1);
                let sizes = p.unique_idx.len() == b && p.unique_idx.iter().all(|u| u.len() == omega);
                let sums = sigma + b * omega + p.remainder == d && p.shared_idx.len() == sigma + p.remainder;
                let recovery = omega == 0
                    || (delta - sigma as f64 / (sigma + omega) as f64).abs() <= 1.0 / (sigma + omega) as f64;
                let special = delta != 0.0 || (p.sigma == 0 && p.omega == d / b);
                if (p.sigma, p.omega) != (sigma, omega) || !total_disjoint || !sizes || !sums || !recovery || !special {
                    failures.push(format!("d={d} b={b} delta={delta}"));
                }
            }
        }
    }
    outcome(failures.is_empty(), format!("{layouts} layouts, failures: {failures:?}"))
}

// ---------------------------------------------------------------- 3, 4, 5

fn randomize(model: &mut BranchedModel, r: &mut ChaCha8Rng) {
    for p in model.params_mut() {
        let var = p.name.contains("running_var");
        for v in p.value.data_mut() {
            *v = if var { r.random_range(0.5..2.0) } else { r.random_range(-1.0..1.0) };
        }
    }
}

fn copy_values(from: &BranchedModel, to: &mut BranchedModel) {
    // running statistics map onto every branch's copy
    for p in to.params_mut() {
        let base = p.name.split(".running_").next().unwrap();
        let name = match p.name.split_once(".running_") {
            Some((_, rest)) => format!("{base}.running_{}.b1", rest.split('.').next().unwrap()),
            None => p.name.clone(),
        };
        p.value = from.param(&name).or_else(|| from.param(&p.name)).unwrap().value.clone();
    }
}

fn embeddings(model: &BranchedModel, x: &Tensor, mode: Mode) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let outs = model.forward_branches(&mut tape, &bound, xv, mode, &mut Vec::new()).unwrap();
    outs.iter().map(|o| tape.value(o.embedding).clone()).collect()
}

fn unmasked(model: &BranchedModel, x: &Tensor, mode: Mode) -> Tensor {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = model.forward_unmasked(&mut tape, &bound, xv, mode, &mut Vec::new()).unwrap();
    tape.value(out.embedding).clone()
}

fn random_batch(cfg: &ModelConfig, n: usize, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn([n, cfg.in_height, cfg.in_width, cfg.in_channels], |_| r.random_range(-1.0..1.0))
}

fn collapse() -> Outcome {
    let cfg = ModelConfig::default();
    let mut r = rng(3);
    let mut checked = 0;
    let mut mismatches = 0;
    for trial in 0..10 {
        let mut base = BranchedModel::baseline(cfg.clone(), trial).unwrap();
        randomize(&mut base, &mut r);
        let delta = r.random_range(0.0..=1.0);
        let mut single = BranchedModel::new(cfg.clone(), BranchPlan::new(&cfg, 1, delta).unwrap(), trial).unwrap();
        let mut full = BranchedModel::new(cfg.clone(), BranchPlan::new(&cfg, 3, 1.0).unwrap(), trial).unwrap();
        copy_values(&base, &mut single);
        copy_values(&base, &mut full);
        // 10 inputs per trial, as one batch
        let x = random_batch(&cfg, 10, &mut r);
        for mode in [Mode::Infer, Mode::Train] {
            let reference = unmasked(&base, &x, mode);
            let outs = embeddings(&single, &x, mode).into_iter().chain(embeddings(&full, &x, mode));
            for e in outs {
                mismatches += (e != reference) as usize;
            }
        }
        checked += 10;
    }
    outcome(mismatches == 0, format!("{checked} inputs, b=1 and delta=1 (b=3), {mismatches} mismatching outputs"))
}

/// Trainable value count derived from the architecture alone.
fn expected_params(cfg: &ModelConfig) -> usize {
    let mut total = 0;
    let mut c_in = cfg.in_channels;
    for &c in cfg.stem_channels.iter().chain(&cfg.block_channels) {
        total += 9 * c_in * c + 2 * c;
        c_in = c;
    }
    total += c_in * cfg.head_hidden + cfg.head_hidden + 2 * cfg.head_hidden;
    total + cfg.head_hidden * cfg.embed_dim + cfg.embed_dim
}

fn parameter_count() -> Outcome {
    let cfg = ModelConfig::default();
    let expected = expected_params(&cfg);
    let base = BranchedModel::baseline(cfg.clone(), 0).unwrap().trainable_count();
    let mut bad = Vec::new();
    for b in 1..=8 {
        for delta in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let m = BranchedModel::new(cfg.clone(), BranchPlan::new(&cfg, b, delta).unwrap(), 0).unwrap();
            if m.trainable_count() != expected {
                bad.push((b, delta));
            }
        }
    }
    outcome(
        base == expected && bad.is_empty(),
        format!("baseline {base}, expected {expected}, mismatches {bad:?}"),
    )
}

/// Every parameter entry only branch 2 reads, from the partitions: outgoing
/// weights and normalization terms of its unique neurons, incoming weights
/// from them in the next layer, and its own running statistics.
fn branch_two_entries(model: &BranchedModel) -> Vec<(String, Vec<usize>)> {
    let plan = model.plan();
    let cfg = model.config();
    let unique = |id: &str| plan.layer(id).unwrap().unique_idx[1].clone();
    let cols = |shape: &[usize], u: &[usize]| -> Vec<usize> {
        let d = *shape.last().unwrap();
        let rows = shape.iter().product::<usize>() / d;
        (0..rows).flat_map(|r| u.iter().map(move |&j| r * d + j)).collect()
    };
    let rows_of = |shape: &[usize], u: &[usize]| -> Vec<usize> {
        // input axis is second to last
        let (cin, cout) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let taps = shape.iter().product::<usize>() / (cin * cout);
        (0..taps)
            .flat_map(|t| u.iter().flat_map(move |&i| (0..cout).map(move |o| (t * cin + i) * cout + o)))
            .collect()
    };
    let shape = |name: &str| model.param(name).unwrap().value.shape().to_vec();
    let mut out = Vec::new();
    let mut layers: Vec<(String, String)> = (1..=cfg.block_channels.len())
        .map(|i| (format!("block4.conv{i}"), format!("block4.conv{i}.kernel")))
        .collect();
    layers.push(("head.fc1".into(), "head.fc1.weight".into()));
    layers.push(("head.fc2".into(), "head.fc2.weight".into()));
    for (k, (layer, weight)) in layers.iter().enumerate() {
        let u = unique(layer);
        if u.is_empty() {
            continue;
        }
        out.push((weight.clone(), cols(&shape(weight), &u)));
        let extras: &[&str] = match layer.as_str() {
            "head.fc2" => &["bias"],
            "head.fc1" => &["bias", "bn.gamma", "bn.beta"],
            _ => &["bn.gamma", "bn.beta"],
        };
        for e in extras {
            out.push((format!("{layer}.{e}"), u.clone()));
        }
        if let Some((_, next)) = layers.get(k + 1) {
            out.push((next.clone(), rows_of(&shape(next), &u)));
        }
    }
    for p in model.params() {
        if p.name.ends_with(".b2") {
            out.push((p.name.clone(), (0..p.value.numel()).collect()));
        }
    }
    out
}

fn isolation() -> Outcome {
    let cfg = ModelConfig::default();
    let mut r = rng(5);
    let mut model = BranchedModel::new(cfg.clone(), BranchPlan::new(&cfg, 3, 0.5).unwrap(), 0).unwrap();
    randomize(&mut model, &mut r);
    let entries = branch_two_entries(&model);
    let n_entries: usize = entries.iter().map(|e| e.1.len()).sum();
    let x = random_batch(&cfg, 4, &mut r);
    let before: Vec<Vec<Tensor>> = [Mode::Infer, Mode::Train].iter().map(|&m| embeddings(&model, &x, m)).collect();
    let (mut max_change, mut branch_two_moved) = (0.0f64, 0);
    for _ in 0..50 {
        for (name, idx) in &entries {
            let i = model.param_index(name).unwrap();
            let positive = name.contains("running_var");
            for &j in idx {
                model.params_mut()[i].value.data_mut()[j] =
                    if positive { r.random_range(0.5..2.0) } else { r.random_range(-3.0..3.0) };
            }
        }
        for (m, mode) in [Mode::Infer, Mode::Train].into_iter().enumerate() {
            let after = embeddings(&model, &x, mode);
            for b in [0, 2] {
                let diff = before[m][b].data().iter().zip(after[b].data()).map(|(a, c)| (a - c).abs());
                max_change = max_change.max(diff.fold(0.0, f64::max));
            }
            branch_two_moved += (after[1] != before[m][1]) as usize;
        }
    }
    outcome(
        max_change == 0.0 && branch_two_moved == 100,
        format!("50 trials over {n_entries} entries, max change in branches 1/3 = {max_change:e}"),
    )
}

// ---------------------------------------------------------------- 6

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Sum over anchors of the largest hinge over every (positive, negative).
fn triplet_oracle(e: &[Vec<f64>], labels: &[i64], margin: f64) -> f64 {
    let n = e.len();
    let mut total = 0.0;
    for a in 0..n {
        let mut best = 0.0f64;
        for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
            for q in (0..n).filter(|&q| labels[q] != labels[a]) {
                best = best.max((margin + l1(&e[a], &e[p]) - l1(&e[a], &e[q])).max(0.0));
            }
        }
        total += best;
    }
    total
}

fn triplet_suite() -> Outcome {
    let mut r = rng(6);
    let mut mismatches = 0;
    for _ in 0..200 {
        let (p, k, dim) = (r.random_range(2..=4), r.random_range(2..=4), r.random_range(1..=4));
        let mut labels: Vec<i64> = (0..p * k).map(|i| (i / k) as i64 * 7).collect();
        // shuffle rows so identities are not contiguous
        for i in (1..labels.len()).rev() {
            labels.swap(i, r.random_range(0..=i));
        }
        let coarse = r.random_bool(0.5);
        let e: Vec<Vec<f64>> = (0..p * k)
            .map(|_| {
                (0..dim)
                    .map(|_| if coarse { r.random_range(0..4) as f64 / 4.0 } else { r.random_range(-1.0..1.0) })
                    .collect()
            })
            .collect();
        let margin = if r.random_bool(0.5) { 0.2 } else { r.random_range(0.0..1.0) };
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::new([p * k, dim], e.concat()).unwrap());
        let loss = triplet_loss_batch_hard(&mut tape, v, &labels, margin).unwrap();
        mismatches += (tape.value(loss).item() != triplet_oracle(&e, &labels, margin)) as usize;
    }
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::new([4, 1], vec![0.0, 0.1, 0.3, 0.5]).unwrap());
    let hand = triplet_loss_batch_hard(&mut tape, v, &[0, 0, 1, 1], 0.2).unwrap();
    let hand = tape.value(hand).item();
    outcome(
        mismatches == 0 && hand == 0.3,
        format!("200 batches, {mismatches} mismatches; hand example {hand}"),
    )
}

// ---------------------------------------------------------------- 7

fn heatmap_orientation() -> Outcome {
    let target = 1.0 - (-1.0f64).exp();
    let a = make_heatmap((2.0, 4.0), 1.0, (8, 8), Region::Neck).unwrap();
    let b = make_heatmap((2.0, 4.0), 2.0, (8, 8), Region::Neck).unwrap();
    let heat_ok = a.at(4, 2).abs() < 1e-9 && (a.at(4, 3) - target).abs() < 1e-9 && (b.at(6, 2) - target).abs() < 1e-9;

    let torso = |rs: (f64, f64), ls: (f64, f64)| {
        KeypointRecord::new("x")
            .with(KeypointName::RightShoulder, rs.0, rs.1, 1.0)
            .with(KeypointName::LeftShoulder, ls.0, ls.1, 1.0)
            .with(KeypointName::RightHip, rs.0, rs.1 + 8.0, 1.0)
            .with(KeypointName::LeftHip, ls.0, ls.1 + 8.0, 1.0)
    };
    let cases = [
        ((6.0, 2.0), (0.0, 2.0), 0.75f64.acos(), Subset::Front),
        ((4.0, 2.0), (3.0, 2.0), 0.125f64.acos(), Subset::Side),
        ((0.0, 2.0), (6.0, 2.0), PI - 0.75f64.acos(), Subset::Back),
    ];
    let mut thetas = Vec::new();
    let mut orient_ok = true;
    for (rs, ls, want, subset) in cases {
        let theta = orientation_angle(&torso(rs, ls), 0.1).unwrap();
        orient_ok &= (theta - want).abs() < 1e-9 && assign_subset(theta) == subset;
        thetas.push(format!("{theta:.4}"));
    }
    outcome(
        heat_ok && orient_ok,
        format!("H(sigma_h) = {:.5}, theta = {}", a.at(4, 3), thetas.join(" / ")),
    )
}

// ---------------------------------------------------------------- 8

fn lr_schedule() -> Outcome {
    let got = [lr_at(50, 3e-4, 50), lr_at(65, 3e-4, 50), lr_at(150, 3e-4, 50)];
    outcome(got == [3e-4, 1.5e-4, 3e-4 / 1024.0], format!("{got:?}"))
}

// ---------------------------------------------------------------- 9

fn row(id: &str, identity: i64, camera: i64, e: f64) -> IndexRow {
    IndexRow {
        sample_id: id.into(),
        identity,
        camera,
        embedding: vec![e],
    }
}

fn evaluation_oracle() -> Outcome {
    let idx = |rows| EmbeddingIndex::new(rows).unwrap();
    // relevant at ranks 1 and 3
    let r = rank_queries(
        &idx(vec![row("q", 1, 0, 0.0)]),
        &idx(vec![row("a", 1, 1, 1.0), row("b", 2, 1, 2.0), row("c", 1, 1, 3.0)]),
    )
    .unwrap();
    let ap_ok = r.map == 0.5 * (1.0 + 2.0 / 3.0);

    // exact match at rank 1
    let r = rank_queries(
        &idx(vec![row("q", 1, 0, 5.0)]),
        &idx(vec![row("a", 1, 1, 5.0), row("b", 2, 1, 50.0), row("c", 3, 1, -50.0)]),
    )
    .unwrap();
    let perfect_ok = r.map == 1.0 && r.cmc_at(1) == 1.0;

    // only same-identity gallery entry shares the query's camera
    let r = rank_queries(
        &idx(vec![row("q", 1, 0, 0.0)]),
        &idx(vec![row("a", 1, 0, 0.0), row("b", 2, 1, 1.0)]),
    )
    .unwrap();
    let skip_ok = (r.scored, r.skipped) == (0, 1);

    // four queries over five gallery images: first hits at 1, 3 (tie broken
    // by id, same-camera entry dropped), 2, and one query without a match
    let gallery = idx(vec![
        row("g1", 1, 1, 1.0),
        row("g2", 2, 1, 2.0),
        row("g3", 1, 0, 0.5),
        row("g4", 3, 1, 4.0),
        row("g5", 2, 0, 6.0),
    ]);
    let queries = idx(vec![
        row("q1", 1, 0, 0.0),
        row("q2", 2, 1, 3.5),
        row("q3", 3, 0, 10.0),
        row("q4", 4, 0, 0.0),
    ]);
    let r = rank_queries(&queries, &gallery).unwrap();
    let mixed_ok = r.map == (1.0 + 1.0 / 3.0 + 0.5) / 3.0
        && r.cmc[..3] == [1.0 / 3.0, 2.0 / 3.0, 1.0]
        && (r.scored, r.skipped) == (3, 1)
        && r.queries[1].ranked == ["g4", "g1", "g5", "g3"];
    outcome(
        ap_ok && perfect_ok && skip_ok && mixed_ok,
        format!("AP case {ap_ok}, perfect {perfect_ok}, exclusion {skip_ok}, mixed {mixed_ok}"),
    )
}

// ---------------------------------------------------------------- 10

fn localization() -> Outcome {
    let start = Instant::now();
    let mut passes = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let data = generate_synthetic(&SynthConfig {
            ids: 12,
            per_id: 6,
            train_fraction: 1.0,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
        .dataset;
        let cfg = TrainConfig {
            scheme: Scheme::Landmark,
            b: 3,
            epochs: 1,
            steps_per_epoch: 300,
            seed,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(cfg, &data).unwrap();
        let rows: Vec<usize> = (0..data.len()).step_by(2).collect();
        let before = low_heatmap_mass(&trainer, &rows, 0.5).unwrap();
        for _ in 0..300 {
            trainer.step().unwrap();
        }
        let after = low_heatmap_mass(&trainer, &rows, 0.5).unwrap();
        let ok = before.iter().zip(&after).all(|(b, a)| a.1 > b.1);
        passes += ok as usize;
        let deltas: Vec<String> =
            before.iter().zip(&after).map(|(b, a)| format!("{} {:.3}->{:.3}", b.0.name(), b.1, a.1)).collect();
        lines.push(format!("seed {seed} {}: {}", if ok { "up" } else { "not all up" }, deltas.join(", ")));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        passes >= 2 && secs < 300.0,
        format!("{passes}/3 seeds, {secs:.0}s; {}", lines.join("; ")),
    )
}

// ---------------------------------------------------------------- 11

fn ensemble() -> Outcome {
    let start = Instant::now();
    let mut maps: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in 0..5u64 {
        let data = generate_synthetic(&SynthConfig {
            ids: 24,
            modes: 3,
            seed: 100 + seed,
            ..SynthConfig::default()
        })
        .unwrap()
        .dataset;
        for (name, scheme, b) in [("baseline", Scheme::Baseline, 1), ("orientation", Scheme::Orientation, 3)] {
            let cfg = TrainConfig {
                scheme,
                b,
                epochs: 1,
                steps_per_epoch: 400,
                seed,
                ..TrainConfig::default()
            };
            let out = train(cfg, &data).unwrap();
            maps.entry(name).or_default().push(evaluate(&out.model, &data, true).unwrap().map);
        }
    }
    let mean = |k: &str| maps[k].iter().sum::<f64>() / maps[k].len() as f64;
    let (base, orient) = (mean("baseline"), mean("orientation"));
    let secs = start.elapsed().as_secs_f64();
    let per_seed: Vec<String> = maps["baseline"]
        .iter()
        .zip(&maps["orientation"])
        .map(|(b, o)| format!("{b:.3}/{o:.3}"))
        .collect();
    outcome(
        orient >= base && secs < 900.0,
        format!(
            "mAP baseline {base:.4}, orientation b=3 {orient:.4}, delta {:+.4}; per seed {}; {secs:.0}s",
            orient - base,
            per_seed.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- 12

/// Inference-mode flops for one sample, counted from the architecture:
/// returns (stem, one branch).
fn static_flops(cfg: &ModelConfig) -> (u64, u64) {
    let conv = |h: usize, w: usize, cin: usize, cout: usize| (2 * h * w * cout * 9 * cin) as u64;
    let (mut h, mut w, mut c) = (cfg.in_height, cfg.in_width, cfg.in_channels);
    let mut stem = 0;
    for (&f, &s) in cfg.stem_channels.iter().zip(&cfg.stem_strides) {
        (h, w) = (h.div_ceil(s), w.div_ceil(s));
        let numel = (h * w * f) as u64;
        // conv, batchnorm (4 per value), relu
        stem += conv(h, w, c, f) + 4 * numel + numel;
        c = f;
    }
    let mut branch = 0;
    for &f in &cfg.block_channels {
        let numel = (h * w * f) as u64;
        branch += conv(h, w, c, f) + 4 * numel + numel;
        c = f;
    }
    let (u, e) = (cfg.head_hidden as u64, cfg.embed_dim as u64);
    // pooling, fc1 with bias, batchnorm, relu, fc2 with bias
    branch += (h * w * c) as u64 + (2 * c as u64 * u + u) + 4 * u + u + (2 * u * e + e);
    (stem, branch)
}

fn timing_ops() -> Outcome {
    let cfg = ModelConfig::default();
    let (stem, branch) = static_flops(&cfg);
    let mut mismatches = Vec::new();
    for b in 1..=8u64 {
        for delta in [0.0, 0.5, 1.0] {
            let m = BranchedModel::new(cfg.clone(), BranchPlan::new(&cfg, b as usize, delta).unwrap(), 0).unwrap();
            let got = m.forward_flops(1).unwrap();
            if got != stem + b * branch {
                mismatches.push((b, delta, got));
            }
        }
    }
    let baseline = BranchedModel::baseline(cfg.clone(), 0).unwrap().forward_flops(1).unwrap();
    let rows = bench_branches(&BenchConfig {
        branches: vec![1, 4],
        reps: 21,
        ..BenchConfig::default()
    })
    .unwrap();
    let ratio = rows[1].infer_s_per_1k / rows[0].infer_s_per_1k;
    outcome(
        mismatches.is_empty() && baseline == stem + branch && ratio < 2.0,
        format!(
            "stem {stem} + b x {branch} flops exact for b=1..8 (mismatches {mismatches:?}); \
             inference b=4/b=1 time ratio {ratio:.2}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gradient suite", gradient_suite),
        ("partition suite", partition_suite),
        ("baseline collapse", collapse),
        ("no extra parameters", parameter_count),
        ("branch isolation", isolation),
        ("triplet oracle", triplet_suite),
        ("heatmap and orientation oracles", heatmap_orientation),
        ("learning-rate schedule", lr_schedule),
        ("evaluation oracle", evaluation_oracle),
        ("localization behavior", localization),
        ("ensemble benefit", ensemble),
        ("timing and op count", timing_ops),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += !o.passed as usize;
        println!("{} {:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
