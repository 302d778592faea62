//! Training and inference cost as a function of the branch count.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng as _;

use crate::branching::{concat_embeddings, BranchPlan, BranchedModel, Mode, ModelConfig};
use crate::error::{Error, Result};
use crate::objectives::triplet_loss_batch_hard;
use crate::rng::{stream, Stream};
use crate::tensor::{Tape, Tensor, Var};
use crate::trainer::Adam;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub model: ModelConfig,
    pub branches: Vec<usize>,
    pub delta: f64,
    /// Timed repetitions per branch count; the median is reported.
    pub reps: usize,
    pub infer_batch: usize,
    pub p: usize,
    pub k: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            model: ModelConfig::default(),
            branches: (1..=8).collect(),
            delta: 0.5,
            reps: 5,
            infer_batch: 100,
            p: 6,
            k: 3,
            steps_per_epoch: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub b: usize,
    pub train_s_per_epoch: f64,
    pub infer_s_per_1k: f64,
    /// Flops of one inference forward pass over a single sample.
    pub flops_fwd: u64,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("b,train_s_per_epoch,infer_s_per_1k,flops_fwd\n");
    for r in rows {
        writeln!(s, "{},{:.6},{:.6},{}", r.b, r.train_s_per_epoch, r.infer_s_per_1k, r.flops_fwd).unwrap();
    }
    s
}

/// Flops one extra branch adds to a single-sample forward pass.
pub fn branch_flops(model: &ModelConfig, delta: f64) -> Result<u64> {
    let build = |b| BranchedModel::new(model.clone(), BranchPlan::new(model, b, delta)?, 0);
    Ok(build(2)?.forward_flops(1)? - build(1)?.forward_flops(1)?)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// One untimed warm-up call per entry, then `reps` rounds that time every
/// entry once each, so slow drift in machine speed affects all entries alike.
/// Returns the median time per entry.
fn time_interleaved<T>(items: &mut [T], reps: usize, mut f: impl FnMut(&mut T) -> Result<()>) -> Result<Vec<f64>> {
    for item in items.iter_mut() {
        f(item)?;
    }
    let mut times = vec![Vec::with_capacity(reps); items.len()];
    for _ in 0..reps {
        for (item, t) in items.iter_mut().zip(&mut times) {
            let start = Instant::now();
            f(item)?;
            t.push(start.elapsed().as_secs_f64());
        }
    }
    Ok(times.into_iter().map(median).collect())
}

fn random_images(n: usize, m: &ModelConfig, rng: &mut crate::rng::Rng) -> Tensor {
    Tensor::from_fn([n, m.in_height, m.in_width, m.in_channels], |_| rng.random())
}

/// Rows sorted by `b`. Every model shares the same initial weights.
pub fn bench_branches(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.reps == 0 || cfg.infer_batch == 0 || cfg.p < 2 || cfg.k < 2 || cfg.branches.is_empty() {
        return Err(Error::Param("bench needs reps, infer_batch >= 1, p, k >= 2 and some branch counts".into()));
    }
    let mut rng = stream(cfg.seed, Stream::Bench);
    let infer_x = random_images(cfg.infer_batch, &cfg.model, &mut rng);
    let train_x = random_images(cfg.p * cfg.k, &cfg.model, &mut rng);
    let labels: Vec<i64> = (0..cfg.p * cfg.k).map(|i| (i / cfg.k) as i64).collect();

    let mut branches = cfg.branches.clone();
    branches.sort_unstable();
    branches.dedup();
    let mut models = branches
        .iter()
        .map(|&b| {
            let model = BranchedModel::new(cfg.model.clone(), BranchPlan::new(&cfg.model, b, cfg.delta)?, cfg.seed)?;
            let adam = Adam::new(model.params(), 0.9, 0.999, 1e-8);
            Ok((model, adam))
        })
        .collect::<Result<Vec<_>>>()?;

    let infer = time_interleaved(&mut models, cfg.reps, |(model, _)| model.embed(&infer_x).map(|_| ()))?;
    let train = time_interleaved(&mut models, cfg.reps, |(model, adam)| {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let x = tape.constant(train_x.clone());
        let mut stats = Vec::new();
        let outs = model.forward_branches(&mut tape, &bound, x, Mode::Train, &mut stats)?;
        let emb: Vec<Var> = outs.iter().map(|o| o.embedding).collect();
        let emb = concat_embeddings(&mut tape, &emb)?;
        let loss = triplet_loss_batch_hard(&mut tape, emb, &labels, 0.2)?;
        let grads = tape.backward(loss)?;
        let grads = model.collect_grads(&bound, &grads);
        adam.update(model.params_mut(), &grads, 0.0)?;
        model.apply_stats(&stats);
        Ok(())
    })?;

    branches
        .iter()
        .zip(&models)
        .zip(infer.iter().zip(&train))
        .map(|((&b, (model, _)), (&infer, &train))| {
            Ok(BenchRow {
                b,
                train_s_per_epoch: train * cfg.steps_per_epoch as f64,
                infer_s_per_1k: infer * 1000.0 / cfg.infer_batch as f64,
                flops_fwd: model.forward_flops(1)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            in_height: 8,
            in_width: 4,
            stem_channels: vec![4],
            stem_strides: vec![2],
            block_channels: vec![4],
            head_hidden: 8,
            embed_dim: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn rows_sorted_and_affine() {
        let cfg = BenchConfig {
            model: tiny(),
            branches: vec![3, 1, 2, 2],
            reps: 1,
            infer_batch: 4,
            p: 2,
            k: 2,
            steps_per_epoch: 2,
            ..BenchConfig::default()
        };
        let rows = bench_branches(&cfg).unwrap();
        assert_eq!(rows.iter().map(|r| r.b).collect::<Vec<_>>(), vec![1, 2, 3]);
        let slope = branch_flops(&tiny(), 0.5).unwrap();
        for r in &rows {
            assert_eq!(r.flops_fwd, rows[0].flops_fwd + (r.b as u64 - 1) * slope);
        }
        let baseline = BranchedModel::baseline(tiny(), 0).unwrap();
        assert_eq!(rows[0].flops_fwd, baseline.forward_flops(1).unwrap());
        assert!(bench_csv(&rows).starts_with("b,train_s_per_epoch,infer_s_per_1k,flops_fwd\n1,"));
    }
}
