//! Toy backbone with a virtually branched top block.
//!
//! Layout, all convolutions 3×3 with same padding and no bias:
//!
//! ```text
//! stem:    [conv → bn → relu] × len(stem_channels)       (shared, run once)
//! block4:  [conv → bn → relu → mask] × len(block_channels)
//! head:    gap → fc1 → bn → relu → mask → fc2 → keep B_i coordinates
//! ```
//!
//! The masks are the only difference between branches, so a branched model
//! owns exactly the same trainable parameters as the unbranched baseline.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};

use super::partition::{make_partition, LayerPartition};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{BatchNormConfig, BatchNormMode, BatchStats, Padding, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_height: usize,
    pub in_width: usize,
    pub in_channels: usize,
    pub stem_channels: Vec<usize>,
    pub stem_strides: Vec<usize>,
    pub block_channels: Vec<usize>,
    pub head_hidden: usize,
    pub embed_dim: usize,
    pub bn: BatchNormConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_height: 32,
            in_width: 16,
            in_channels: 3,
            stem_channels: vec![16, 32, 32],
            stem_strides: vec![1, 2, 2],
            block_channels: vec![16, 16],
            head_hidden: 1024,
            embed_dim: 128,
            bn: BatchNormConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.in_height, self.in_width, self.in_channels, self.head_hidden, self.embed_dim];
        if dims.contains(&0)
            || self.stem_channels.is_empty()
            || self.block_channels.is_empty()
            || self.stem_channels.len() != self.stem_strides.len()
            || self.stem_channels.iter().chain(&self.block_channels).any(|&c| c == 0)
            || self.stem_strides.contains(&0)
        {
            return Err(Error::Model(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    /// Spatial size of the block's activations (and of the pre-pool map).
    pub fn feature_dims(&self) -> (usize, usize) {
        self.stem_strides
            .iter()
            .fold((self.in_height, self.in_width), |(h, w), &s| (h.div_ceil(s), w.div_ceil(s)))
    }

    /// Ids and widths of the layers that receive drop masks.
    pub fn branched_layers(&self) -> Vec<(String, usize)> {
        let mut layers: Vec<(String, usize)> = self
            .block_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| (format!("block4.conv{}", i + 1), c))
            .collect();
        layers.push(("head.fc1".into(), self.head_hidden));
        layers.push(("head.fc2".into(), self.embed_dim));
        layers
    }
}

/// Partition of every branched layer for a given `(b, delta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchPlan {
    pub b: usize,
    pub delta: f64,
    pub layers: Vec<LayerPartition>,
}

impl BranchPlan {
    pub fn new(cfg: &ModelConfig, b: usize, delta: f64) -> Result<Self> {
        let layers = cfg
            .branched_layers()
            .iter()
            .map(|(id, d)| make_partition(id, *d, b, delta))
            .collect::<Result<Vec<_>>>()?;
        Ok(BranchPlan { b, delta, layers })
    }

    pub fn layer(&self, id: &str) -> Result<&LayerPartition> {
        self.layers
            .iter()
            .find(|p| p.layer_id == id)
            .ok_or_else(|| Error::Model(format!("plan has no layer {id}")))
    }

    /// Branch `i`'s neuron set: per layer, its active indices.
    pub fn branch_set(&self, i: usize) -> Result<Vec<(String, Vec<usize>)>> {
        self.layers
            .iter()
            .map(|p| Ok((p.layer_id.clone(), p.active_indices(i)?)))
            .collect()
    }

    /// Width of branch `i`'s embedding after dropping masked coordinates.
    pub fn embedding_dim(&self, i: usize) -> Result<usize> {
        Ok(self.layers.last().unwrap().active_indices(i)?.len())
    }

    /// Width of the concatenated embedding.
    pub fn concat_dim(&self) -> Result<usize> {
        (0..self.b).map(|i| self.embedding_dim(i)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Tape handles of every trainable parameter, aligned with
/// [`BranchedModel::params`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Option<Var>>,
}

impl BoundParams {
    pub fn var(&self, index: usize) -> Option<Var> {
        self.vars[index]
    }
}

/// Output of one branch (or of the unmasked baseline path).
#[derive(Clone, Copy, Debug)]
pub struct BranchOutput {
    /// `[N, |B_i ∩ final layer|]`
    pub embedding: Var,
    /// Masked activation feeding the global average pool, `[N,h,w,c]`.
    pub pre_pool: Var,
}

/// Training-mode batch statistics waiting to be folded into running stats.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    mean_param: usize,
    var_param: usize,
    stats: BatchStats,
}

#[derive(Clone, Debug)]
pub struct BranchedModel {
    config: ModelConfig,
    plan: BranchPlan,
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

fn running_suffix(branch: Option<usize>) -> String {
    format!(".b{}", branch.unwrap_or(0) + 1)
}

impl BranchedModel {
    /// Build with He-normal weights drawn from the seed's init stream. The
    /// initial values depend only on the architecture, never on `(b, delta)`.
    pub fn new(config: ModelConfig, plan: BranchPlan, seed: u64) -> Result<Self> {
        config.validate()?;
        let expected: Vec<(String, usize)> = config.branched_layers();
        let actual: Vec<(String, usize)> = plan.layers.iter().map(|p| (p.layer_id.clone(), p.d)).collect();
        if expected != actual {
            return Err(Error::Model(format!(
                "plan layers {actual:?} do not match model layers {expected:?}"
            )));
        }

        let mut rng = rng::stream(seed, Stream::Init);
        let mut params = Vec::new();
        let mut he = |shape: Vec<usize>, fan_in: usize| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            Tensor::from_fn(shape, |_| normal.sample(&mut rng))
        };
        let mut push = |name: String, value: Tensor, trainable: bool| {
            params.push(Parameter {
                name,
                value,
                trainable,
            })
        };
        let bn_params = |push: &mut dyn FnMut(String, Tensor, bool), layer: &str, c: usize, branches: &[Option<usize>]| {
            push(format!("{layer}.bn.gamma"), Tensor::full([c], 1.0), true);
            push(format!("{layer}.bn.beta"), Tensor::zeros([c]), true);
            for &br in branches {
                let sfx = if branches.len() == 1 && br.is_none() { String::new() } else { running_suffix(br) };
                push(format!("{layer}.bn.running_mean{sfx}"), Tensor::zeros([c]), false);
                push(format!("{layer}.bn.running_var{sfx}"), Tensor::full([c], 1.0), false);
            }
        };
        let per_branch: Vec<Option<usize>> = (0..plan.b).map(Some).collect();
        let k = 3;

        let mut c_in = config.in_channels;
        for (i, &c) in config.stem_channels.iter().enumerate() {
            let layer = format!("stem.conv{}", i + 1);
            push(format!("{layer}.kernel"), he(vec![k, k, c_in, c], k * k * c_in), true);
            bn_params(&mut push, &layer, c, &[None]);
            c_in = c;
        }
        for (i, &c) in config.block_channels.iter().enumerate() {
            let layer = format!("block4.conv{}", i + 1);
            push(format!("{layer}.kernel"), he(vec![k, k, c_in, c], k * k * c_in), true);
            bn_params(&mut push, &layer, c, &per_branch);
            c_in = c;
        }
        let hidden = config.head_hidden;
        push("head.fc1.weight".into(), he(vec![c_in, hidden], c_in), true);
        push("head.fc1.bias".into(), Tensor::zeros([hidden]), true);
        bn_params(&mut push, "head.fc1", hidden, &per_branch);
        push("head.fc2.weight".into(), he(vec![hidden, config.embed_dim], hidden), true);
        push("head.fc2.bias".into(), Tensor::zeros([config.embed_dim]), true);

        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Ok(BranchedModel {
            config,
            plan,
            params,
            index,
        })
    }

    /// Unbranched reference model (single all-ones branch).
    pub fn baseline(config: ModelConfig, seed: u64) -> Result<Self> {
        let plan = BranchPlan::new(&config, 1, 1.0)?;
        Self::new(config, plan, seed)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn plan(&self) -> &BranchPlan {
        &self.plan
    }

    pub fn branches(&self) -> usize {
        self.plan.b
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.param_index(name).map(|i| &self.params[i])
    }

    fn lookup(&self, name: &str) -> Result<usize> {
        self.param_index(name)
            .ok_or_else(|| Error::Model(format!("model has no parameter {name}")))
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Replace parameter values by name; every name and shape must match.
    pub fn load_values(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Model(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (name, t) in values {
            let i = self.lookup(name)?;
            if self.params[i].value.shape() != t.shape() {
                return Err(Error::Model(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    t.shape(),
                    self.params[i].value.shape()
                )));
            }
            self.params[i].value = t.clone();
        }
        Ok(())
    }

    /// Put every trainable parameter on the tape.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self
                .params
                .iter()
                .map(|p| p.trainable.then(|| tape.leaf(p.value.clone())))
                .collect(),
        }
    }

    /// Gradients of the bound parameters, zeros where none flowed,
    /// aligned with [`params`](Self::params) (`None` for buffers).
    pub fn collect_grads(&self, bound: &BoundParams, grads: &crate::tensor::Gradients) -> Vec<Option<Tensor>> {
        self.params
            .iter()
            .zip(&bound.vars)
            .map(|(p, v)| v.map(|v| grads.get_or_zeros(v, p.value.shape())))
            .collect()
    }

    fn bound(&self, bound: &BoundParams, name: &str) -> Result<Var> {
        let i = self.lookup(name)?;
        bound.vars[i].ok_or_else(|| Error::Model(format!("{name} is not trainable")))
    }

    fn bn_layer(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        layer: &str,
        stats_key: &str,
        mode: Mode,
        updates: &mut Vec<StatUpdate>,
    ) -> Result<Var> {
        let gamma = self.bound(bound, &format!("{layer}.bn.gamma"))?;
        let beta = self.bound(bound, &format!("{layer}.bn.beta"))?;
        let mi = self.lookup(&format!("{layer}.bn.running_mean{stats_key}"))?;
        let vi = self.lookup(&format!("{layer}.bn.running_var{stats_key}"))?;
        let bn_mode = match mode {
            Mode::Train => BatchNormMode::Train,
            Mode::Infer => BatchNormMode::Infer {
                running_mean: self.params[mi].value.data(),
                running_var: self.params[vi].value.data(),
            },
        };
        let (y, stats) = tape.batchnorm(x, gamma, beta, bn_mode, self.config.bn)?;
        if let Some(stats) = stats {
            updates.push(StatUpdate {
                mean_param: mi,
                var_param: vi,
                stats,
            });
        }
        Ok(y)
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let s = tape.shape(x);
        let c = &self.config;
        if s.len() != 4 || s[1..] != [c.in_height, c.in_width, c.in_channels] {
            return Err(Error::Model(format!(
                "input shape {s:?} does not match model input {}x{}x{}",
                c.in_height, c.in_width, c.in_channels
            )));
        }
        Ok(())
    }

    /// Shared stem; run once per input batch.
    pub fn stem(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        mode: Mode,
        updates: &mut Vec<StatUpdate>,
    ) -> Result<Var> {
        self.check_input(tape, x)?;
        let mut h = x;
        for (i, &stride) in self.config.stem_strides.iter().enumerate() {
            let layer = format!("stem.conv{}", i + 1);
            let k = self.bound(bound, &format!("{layer}.kernel"))?;
            h = tape.conv2d(h, k, stride, Padding::Same)?;
            h = self.bn_layer(tape, bound, h, &layer, "", mode, updates)?;
            h = tape.relu(h);
        }
        Ok(h)
    }

    /// Branched block and head for branch `i` (0-based), or the unmasked
    /// baseline path when `branch` is `None`.
    pub fn branch(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        stem_out: Var,
        branch: Option<usize>,
        mode: Mode,
        updates: &mut Vec<StatUpdate>,
    ) -> Result<BranchOutput> {
        if let Some(i) = branch {
            if i >= self.plan.b {
                return Err(Error::Partition(format!(
                    "branch {} out of range 1..={}",
                    i + 1,
                    self.plan.b
                )));
            }
        }
        let stats_key = running_suffix(branch);
        let mask = |layer: &str| -> Result<Option<Vec<f64>>> {
            branch.map(|i| self.plan.layer(layer)?.branch_mask(i)).transpose()
        };

        let mut h = stem_out;
        for i in 0..self.config.block_channels.len() {
            let layer = format!("block4.conv{}", i + 1);
            let k = self.bound(bound, &format!("{layer}.kernel"))?;
            h = tape.conv2d(h, k, 1, Padding::Same)?;
            h = self.bn_layer(tape, bound, h, &layer, &stats_key, mode, updates)?;
            h = tape.relu(h);
            if let Some(m) = mask(&layer)? {
                h = tape.scale_mask(h, &m)?;
            }
        }
        let pre_pool = h;

        let pooled = tape.global_avg_pool(pre_pool)?;
        let w1 = self.bound(bound, "head.fc1.weight")?;
        let b1 = self.bound(bound, "head.fc1.bias")?;
        let mut z = tape.dense(pooled, w1, b1)?;
        z = self.bn_layer(tape, bound, z, "head.fc1", &stats_key, mode, updates)?;
        z = tape.relu(z);
        if let Some(m) = mask("head.fc1")? {
            z = tape.scale_mask(z, &m)?;
        }
        let w2 = self.bound(bound, "head.fc2.weight")?;
        let b2 = self.bound(bound, "head.fc2.bias")?;
        let mut embedding = tape.dense(z, w2, b2)?;
        if let Some(i) = branch {
            let keep = self.plan.layer("head.fc2")?.active_indices(i)?;
            embedding = tape.select_last(embedding, &keep)?;
        }
        Ok(BranchOutput {
            embedding,
            pre_pool,
        })
    }

    /// Stem once, then every branch on the same stem features.
    pub fn forward_branches(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        mode: Mode,
        updates: &mut Vec<StatUpdate>,
    ) -> Result<Vec<BranchOutput>> {
        let stem_out = self.stem(tape, bound, x, mode, updates)?;
        (0..self.plan.b)
            .map(|i| self.branch(tape, bound, stem_out, Some(i), mode, updates))
            .collect()
    }

    /// The model with every mask removed.
    pub fn forward_unmasked(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        mode: Mode,
        updates: &mut Vec<StatUpdate>,
    ) -> Result<BranchOutput> {
        let stem_out = self.stem(tape, bound, x, mode, updates)?;
        self.branch(tape, bound, stem_out, None, mode, updates)
    }

    /// Fold training-mode statistics into the running estimates, in order.
    pub fn apply_stats(&mut self, updates: &[StatUpdate]) {
        let momentum = self.config.bn.momentum;
        for u in updates {
            let mut mean = std::mem::replace(&mut self.params[u.mean_param].value, Tensor::scalar(0.0));
            let mut var = std::mem::replace(&mut self.params[u.var_param].value, Tensor::scalar(0.0));
            u.stats.update_running(mean.data_mut(), var.data_mut(), momentum);
            self.params[u.mean_param].value = mean;
            self.params[u.var_param].value = var;
        }
    }

    /// Inference-mode concatenated embedding of a `[N,H,W,C]` batch.
    ///
    /// Each branch runs on its own tape, so memory stays flat in `b`.
    pub fn embed(&self, batch: &Tensor) -> Result<Tensor> {
        let stem_out = {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let x = tape.constant(batch.clone());
            let s = self.stem(&mut tape, &bound, x, Mode::Infer, &mut Vec::new())?;
            tape.value(s).clone()
        };
        let mut parts = Vec::with_capacity(self.plan.b);
        for i in 0..self.plan.b {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let s = tape.constant(stem_out.clone());
            let out = self.branch(&mut tape, &bound, s, Some(i), Mode::Infer, &mut Vec::new())?;
            parts.push(tape.value(out.embedding).clone());
        }
        let mut tape = Tape::new();
        let e: Vec<Var> = parts.into_iter().map(|p| tape.constant(p)).collect();
        let cat = concat_embeddings(&mut tape, &e)?;
        Ok(tape.value(cat).clone())
    }

    /// Flops of one inference-mode forward pass over `n` samples.
    pub fn forward_flops(&self, n: usize) -> Result<u64> {
        let c = &self.config;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(Tensor::zeros([n, c.in_height, c.in_width, c.in_channels]));
        let before = tape.flops();
        let outs = self.forward_branches(&mut tape, &bound, x, Mode::Infer, &mut Vec::new())?;
        let e: Vec<Var> = outs.iter().map(|o| o.embedding).collect();
        concat_embeddings(&mut tape, &e)?;
        Ok(tape.flops() - before)
    }

    /// Parameter entries that only branch `i` (0-based) can see: weights and
    /// normalization terms of neurons unique to `i` in the branched layers.
    /// Returns `(parameter index, flat element indices)`.
    pub fn branch_exclusive(&self, i: usize) -> Result<Vec<(usize, Vec<usize>)>> {
        let mut out = Vec::new();
        for p in &self.plan.layers {
            let unique = p
                .unique_idx
                .get(i)
                .ok_or_else(|| Error::Partition(format!("branch {} out of range", i + 1)))?;
            if unique.is_empty() {
                continue;
            }
            let d = p.d;
            let (weight, extra): (String, Vec<String>) = if p.layer_id.starts_with("block4") {
                (
                    format!("{}.kernel", p.layer_id),
                    vec![format!("{}.bn.gamma", p.layer_id), format!("{}.bn.beta", p.layer_id)],
                )
            } else if p.layer_id == "head.fc1" {
                (
                    "head.fc1.weight".into(),
                    vec!["head.fc1.bias".into(), "head.fc1.bn.gamma".into(), "head.fc1.bn.beta".into()],
                )
            } else {
                ("head.fc2.weight".into(), vec!["head.fc2.bias".into()])
            };
            // weights are laid out with the output neuron on the last axis
            let wi = self.lookup(&weight)?;
            let rows = self.params[wi].value.numel() / d;
            let flat = (0..rows)
                .flat_map(|r| unique.iter().map(move |&u| r * d + u))
                .collect();
            out.push((wi, flat));
            for name in extra {
                out.push((self.lookup(&name)?, unique.clone()));
            }
        }
        Ok(out)
    }
}

/// Concatenate per-branch embeddings in branch order along the feature axis.
pub fn concat_embeddings(tape: &mut Tape, embeddings: &[Var]) -> Result<Var> {
    let n = embeddings
        .first()
        .map(|&e| tape.shape(e)[0])
        .ok_or_else(|| Error::shape("no embeddings to concatenate"))?;
    if embeddings.iter().any(|&e| tape.shape(e).len() != 2 || tape.shape(e)[0] != n) {
        return Err(Error::shape("embeddings disagree on batch size"));
    }
    if embeddings.len() == 1 {
        return Ok(embeddings[0]);
    }
    tape.concat(embeddings, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            in_height: 8,
            in_width: 4,
            in_channels: 2,
            stem_channels: vec![4, 6],
            stem_strides: vec![1, 2],
            block_channels: vec![6, 6],
            head_hidden: 12,
            embed_dim: 8,
            bn: BatchNormConfig::default(),
        }
    }

    fn input(n: usize, seed: u64) -> Tensor {
        Tensor::from_fn([n, 8, 4, 2], |i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0)
    }

    #[test]
    fn param_count_is_invariant() {
        let base = BranchedModel::baseline(small(), 1).unwrap().trainable_count();
        for b in 1..=4 {
            for delta in [0.0, 0.3, 0.5, 1.0] {
                let plan = BranchPlan::new(&small(), b, delta).unwrap();
                let m = BranchedModel::new(small(), plan, 1).unwrap();
                assert_eq!(m.trainable_count(), base);
            }
        }
    }

    #[test]
    fn concat_dims() {
        let cfg = ModelConfig::default();
        let plan = BranchPlan::new(&cfg, 4, 0.0).unwrap();
        assert_eq!(plan.concat_dim().unwrap(), 128);
        let plan = BranchPlan::new(&cfg, 2, 0.5).unwrap();
        assert_eq!(plan.concat_dim().unwrap(), 172);
        let plan = BranchPlan::new(&cfg, 1, 0.5).unwrap();
        assert_eq!(plan.concat_dim().unwrap(), 128);
    }

    #[test]
    fn single_branch_matches_baseline_bitwise() {
        let base = BranchedModel::baseline(small(), 9).unwrap();
        let plan = BranchPlan::new(&small(), 1, 0.4).unwrap();
        let branched = BranchedModel::new(small(), plan, 9).unwrap();
        for mode in [Mode::Train, Mode::Infer] {
            let x = input(3, 5);
            let mut t1 = Tape::new();
            let b1 = base.bind(&mut t1);
            let xv = t1.constant(x.clone());
            let o1 = base.forward_unmasked(&mut t1, &b1, xv, mode, &mut Vec::new()).unwrap();
            let e2 = branched.embed(&x).unwrap();
            if mode == Mode::Infer {
                assert_eq!(t1.value(o1.embedding), &e2);
            }
            let mut t2 = Tape::new();
            let b2 = branched.bind(&mut t2);
            let xv = t2.constant(x);
            let o2 = branched.forward_branches(&mut t2, &b2, xv, mode, &mut Vec::new()).unwrap();
            assert_eq!(t1.value(o1.embedding), t2.value(o2[0].embedding));
        }
    }

    #[test]
    fn embed_matches_single_tape_forward() {
        let plan = BranchPlan::new(&small(), 3, 0.5).unwrap();
        let m = BranchedModel::new(small(), plan, 2).unwrap();
        let x = input(4, 8);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let outs = m.forward_branches(&mut tape, &bound, xv, Mode::Infer, &mut Vec::new()).unwrap();
        let e: Vec<Var> = outs.iter().map(|o| o.embedding).collect();
        let cat = concat_embeddings(&mut tape, &e).unwrap();
        assert_eq!(tape.value(cat), &m.embed(&x).unwrap());
    }

    #[test]
    fn full_sharing_gives_identical_branches() {
        let plan = BranchPlan::new(&small(), 3, 1.0).unwrap();
        let m = BranchedModel::new(small(), plan, 4).unwrap();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let x = tape.constant(input(2, 1));
        let outs = m.forward_branches(&mut tape, &bound, x, Mode::Train, &mut Vec::new()).unwrap();
        assert_eq!(tape.value(outs[0].embedding), tape.value(outs[1].embedding));
        assert_eq!(tape.value(outs[0].embedding), tape.value(outs[2].embedding));
    }

    #[test]
    fn perturbing_branch_two_leaves_others_untouched() {
        let plan = BranchPlan::new(&small(), 3, 0.0).unwrap();
        let mut m = BranchedModel::new(small(), plan, 4).unwrap();
        let x = input(2, 3);
        let run = |m: &BranchedModel| {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape);
            let xv = tape.constant(x.clone());
            let outs = m.forward_branches(&mut tape, &bound, xv, Mode::Train, &mut Vec::new()).unwrap();
            outs.iter().map(|o| tape.value(o.embedding).clone()).collect::<Vec<_>>()
        };
        let before = run(&m);
        for (pi, flat) in m.branch_exclusive(1).unwrap() {
            for j in flat {
                m.params_mut()[pi].value.data_mut()[j] += 0.75;
            }
        }
        let after = run(&m);
        assert_eq!(before[0], after[0]);
        assert_eq!(before[2], after[2]);
        assert_ne!(before[1], after[1]);
    }

    #[test]
    fn running_stats_update_in_train_mode() {
        let plan = BranchPlan::new(&small(), 2, 0.5).unwrap();
        let mut m = BranchedModel::new(small(), plan, 4).unwrap();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let x = tape.constant(input(4, 8));
        let mut updates = Vec::new();
        m.forward_branches(&mut tape, &bound, x, Mode::Train, &mut updates).unwrap();
        // two stem layers, then per branch two block layers and fc1
        assert_eq!(updates.len(), 2 + 2 * 3);
        m.apply_stats(&updates);
        let rm = m.param("block4.conv1.bn.running_mean.b2").unwrap();
        assert!(rm.value.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn wrong_input_shape() {
        let m = BranchedModel::baseline(small(), 1).unwrap();
        assert!(matches!(
            m.embed(&Tensor::zeros([1, 4, 4, 2])),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn mismatched_plan_rejected() {
        let other = ModelConfig {
            head_hidden: 10,
            ..small()
        };
        let plan = BranchPlan::new(&other, 2, 0.5).unwrap();
        assert!(matches!(
            BranchedModel::new(small(), plan, 0),
            Err(Error::Model(_))
        ));
    }
}
