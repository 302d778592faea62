//! Optimization: Adam under a stepped schedule, the baseline, landmark and
//! orientation training schemes, loss history and checkpoints.

mod adam;
mod checkpoint;
mod config;

pub use adam::{lr_at, Adam};
pub use checkpoint::{quantize_f32, Checkpoint, CHECKPOINT_VERSION};
pub use config::{Scheme, TrainConfig};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::branching::{concat_embeddings, BranchPlan, BranchedModel, Mode, StatUpdate};
use crate::datapipe::{partition_by_orientation, Dataset, KeypointRecord, PkBatch, PkSampler, Split, Subset};
use crate::error::{Error, Result};
use crate::objectives::{
    combine_on_tape, localization_loss, low_region_mass, normalized_maps, region_heatmap, triplet_loss_batch_hard,
    Heatmap, LossBreakdown, Region,
};
use crate::rng::{indexed_stream, Stream};
use crate::tensor::{Tape, Tensor, Var};

/// Attempts at replacing a batch slot whose keypoints are unusable.
const MAX_RESAMPLE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

pub const HISTORY_HEADER: &str = "step,epoch,lr,triplet,loc_neck,loc_hip,loc_ankle,total";

/// Loss history as CSV; localization columns are empty where unsupervised.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in rows {
        let loc = |region| r.loss.localization_for(region).map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.epoch,
            r.lr,
            r.loss.triplet,
            loc(Region::Neck),
            loc(Region::Hip),
            loc(Region::Ankle),
            r.loss.total
        )
        .unwrap();
    }
    s
}

/// Gradients of one step, before the optimizer runs.
#[derive(Clone, Debug)]
pub struct StepGradients {
    pub loss: LossBreakdown,
    /// Aligned with the model's parameters; `None` for buffers.
    pub grads: Vec<Option<Tensor>>,
    stats: Vec<StatUpdate>,
}

/// Batch source for one branch (orientation scheme) or for all of them.
#[derive(Clone, Debug)]
struct Feed {
    sampler: PkSampler,
}

#[derive(Clone, Debug)]
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Dataset,
    model: BranchedModel,
    adam: Adam,
    feeds: Vec<Feed>,
    /// Landmark scheme: per dataset row, one heatmap per supervised region.
    heatmaps: Vec<Option<Vec<Heatmap>>>,
    regions: Vec<Region>,
    steps_done: usize,
    history: Vec<HistoryRow>,
    resampled: usize,
    unassignable: usize,
}

/// Result of a full run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: BranchedModel,
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryRow>,
    /// Landmark scheme: batch slots replaced because of missing keypoints.
    pub resampled: usize,
    /// Orientation scheme: training records without a usable orientation.
    pub unassignable: usize,
}

fn check_input_dims(cfg: &TrainConfig, data: &Dataset) -> Result<()> {
    let m = &cfg.model;
    match data.image_shape() {
        Some(s) if s == [m.in_height, m.in_width, m.in_channels] => Ok(()),
        Some(s) => Err(Error::config(
            None,
            format!(
                "input = {}x{}x{} but the dataset holds {}x{}x{} images",
                m.in_height, m.in_width, m.in_channels, s[0], s[1], s[2]
            ),
        )),
        None => Err(Error::Data("empty dataset".into())),
    }
}

/// Heatmaps of `regions` for one record, or `None` if any keypoint is unusable.
fn record_heatmaps(cfg: &TrainConfig, kp: Option<&KeypointRecord>, regions: &[Region]) -> Option<Vec<Heatmap>> {
    let kp = kp?;
    let image = (cfg.model.in_height, cfg.model.in_width);
    let dims = cfg.model.feature_dims();
    regions
        .iter()
        .map(|&r| region_heatmap(kp, r, cfg.sigma_h, image, dims, cfg.min_confidence).ok())
        .collect()
}

impl<'a> Trainer<'a> {
    /// Fresh model initialized from `cfg.seed`.
    pub fn new(cfg: TrainConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let (b, delta) = cfg.effective_branches();
        let plan = BranchPlan::new(&cfg.model, b, delta)?;
        let model = BranchedModel::new(cfg.model.clone(), plan, cfg.seed)?;
        Self::with_model(cfg, data, model)
    }

    pub fn with_model(cfg: TrainConfig, data: &'a Dataset, model: BranchedModel) -> Result<Self> {
        cfg.validate()?;
        check_input_dims(&cfg, data)?;
        if (model.branches(), model.plan().delta) != cfg.effective_branches() || model.config() != &cfg.model {
            return Err(Error::Model("model does not match the training config".into()));
        }
        let train = data.manifest.identity_groups(Split::Train);
        let adam = Adam::new(model.params(), cfg.beta1, cfg.beta2, cfg.eps_adam);
        let mut t = Trainer {
            data,
            model,
            adam,
            feeds: Vec::new(),
            heatmaps: Vec::new(),
            regions: Vec::new(),
            steps_done: 0,
            history: Vec::new(),
            resampled: 0,
            unassignable: 0,
            cfg,
        };
        let sampler = |groups: BTreeMap<i64, Vec<usize>>, p: usize, index: u64, seed: u64, k: usize| {
            PkSampler::new(groups, p, k, indexed_stream(seed, Stream::Sampler, index))
        };
        let (p, k, seed) = (t.cfg.p, t.cfg.k, t.cfg.seed);
        match t.cfg.scheme {
            Scheme::Baseline => t.feeds.push(Feed {
                sampler: sampler(train, p, 0, seed, k)?,
            }),
            Scheme::Landmark => {
                if !data.has_keypoints() {
                    return Err(Error::config(None, "the landmark scheme needs keypoints"));
                }
                t.regions = (0..t.model.branches()).filter_map(Region::for_branch).collect();
                t.heatmaps = data
                    .keypoints
                    .iter()
                    .map(|kp| record_heatmaps(&t.cfg, kp.as_ref(), &t.regions))
                    .collect();
                // identities without a single usable record can never fill a slot
                let usable: BTreeMap<i64, Vec<usize>> = train
                    .into_iter()
                    .filter(|(_, rows)| rows.iter().any(|&r| t.heatmaps[r].is_some()))
                    .collect();
                t.feeds.push(Feed {
                    sampler: sampler(usable, p, 0, seed, k)?,
                });
            }
            Scheme::Orientation => {
                let rows: Vec<usize> = train.values().flatten().copied().collect();
                let records: Vec<KeypointRecord> = rows
                    .iter()
                    .map(|&r| {
                        data.keypoints[r]
                            .clone()
                            .unwrap_or_else(|| KeypointRecord::new(data.manifest.records[r].sample_id.clone()))
                    })
                    .collect();
                let report = partition_by_orientation(&records, t.cfg.min_confidence, t.cfg.orient_reverse);
                t.unassignable = report.unassignable.len();
                let subset_of: BTreeMap<&str, Subset> =
                    report.assigned.iter().map(|(id, _, s)| (id.as_str(), *s)).collect();
                for i in 0..t.model.branches() {
                    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
                    for &r in &rows {
                        let rec = &data.manifest.records[r];
                        let keep = match Subset::ALL.get(i) {
                            Some(s) => subset_of.get(rec.sample_id.as_str()) == Some(s),
                            None => true,
                        };
                        if keep {
                            groups.entry(rec.identity).or_default().push(r);
                        }
                    }
                    if groups.len() < 2 {
                        let name = Subset::ALL.get(i).map_or("full", |s| s.name());
                        return Err(Error::config(
                            None,
                            format!("{name} subset has {} identities; at least 2 are needed", groups.len()),
                        ));
                    }
                    let pi = p.min(groups.len());
                    t.feeds.push(Feed {
                        sampler: sampler(groups, pi, i as u64, seed, k)?,
                    });
                }
            }
        }
        Ok(t)
    }

    pub fn model(&self) -> &BranchedModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn resampled(&self) -> usize {
        self.resampled
    }

    pub fn unassignable(&self) -> usize {
        self.unassignable
    }

    /// Regions supervised in the landmark scheme, in branch order.
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Landmark scheme: heatmaps of a dataset row, one per supervised region.
    pub fn heatmaps_of(&self, row: usize) -> Option<&[Heatmap]> {
        self.heatmaps.get(row)?.as_deref()
    }

    fn landmark_batch(&mut self) -> Result<PkBatch> {
        let sampler = &mut self.feeds[0].sampler;
        let mut batch = sampler.next_batch();
        for slot in 0..batch.rows.len() {
            let mut tries = 0;
            while self.heatmaps[batch.rows[slot]].is_none() {
                if tries == MAX_RESAMPLE {
                    return Err(Error::Data(format!(
                        "identity {} has no usable keypoints after {MAX_RESAMPLE} draws",
                        batch.labels[slot]
                    )));
                }
                batch.rows[slot] = sampler.draw_from(batch.labels[slot]).expect("identity is in the sampler");
                self.resampled += 1;
                tries += 1;
            }
        }
        Ok(batch)
    }

    /// Forward and backward for the next step without touching parameters.
    pub fn compute_gradients(&mut self) -> Result<StepGradients> {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let mut stats = Vec::new();
        let lambda = self.cfg.lambda;
        let (total, triplet, localization) = match self.cfg.scheme {
            Scheme::Baseline | Scheme::Landmark => {
                let batch = if self.cfg.scheme == Scheme::Landmark {
                    self.landmark_batch()?
                } else {
                    self.feeds[0].sampler.next_batch()
                };
                let x = tape.constant(self.data.batch(&batch.rows)?);
                let outs = self.model.forward_branches(&mut tape, &bound, x, Mode::Train, &mut stats)?;
                let emb: Vec<Var> = outs.iter().map(|o| o.embedding).collect();
                let emb = concat_embeddings(&mut tape, &emb)?;
                let lt = triplet_loss_batch_hard(&mut tape, emb, &batch.labels, self.cfg.margin)?;
                let mut loc_vars = Vec::new();
                let mut loc = Vec::new();
                for (i, &region) in self.regions.iter().enumerate() {
                    let maps: Vec<Option<&Heatmap>> =
                        batch.rows.iter().map(|&r| self.heatmaps[r].as_ref().map(|h| &h[i])).collect();
                    let l = localization_loss(&mut tape, outs[i].pre_pool, &maps)?;
                    loc.push((region, tape.value(l).item()));
                    loc_vars.push(l);
                }
                let total = combine_on_tape(&mut tape, lt, &loc_vars, lambda)?;
                (total, tape.value(lt).item(), loc)
            }
            Scheme::Orientation => {
                let mut total: Option<Var> = None;
                for i in 0..self.feeds.len() {
                    let batch = self.feeds[i].sampler.next_batch();
                    let x = tape.constant(self.data.batch(&batch.rows)?);
                    let stem = self.model.stem(&mut tape, &bound, x, Mode::Train, &mut stats)?;
                    let out = self.model.branch(&mut tape, &bound, stem, Some(i), Mode::Train, &mut stats)?;
                    let l = triplet_loss_batch_hard(&mut tape, out.embedding, &batch.labels, self.cfg.margin)?;
                    total = Some(match total {
                        Some(t) => tape.add(t, l)?,
                        None => l,
                    });
                }
                let total = total.expect("at least one branch");
                (total, tape.value(total).item(), Vec::new())
            }
        };
        let grads = tape.backward(total)?;
        Ok(StepGradients {
            loss: LossBreakdown {
                triplet,
                localization,
                total: tape.value(total).item(),
            },
            grads: self.model.collect_grads(&bound, &grads),
            stats,
        })
    }

    /// One optimizer step; returns its history row.
    pub fn step(&mut self) -> Result<HistoryRow> {
        let step = self.steps_done + 1;
        let epoch = (step - 1) / self.cfg.steps_per_epoch + 1;
        let lr = lr_at(epoch, self.cfg.lr0, self.cfg.t0);
        let g = self.compute_gradients()?;
        self.adam.update(self.model.params_mut(), &g.grads, lr)?;
        self.model.apply_stats(&g.stats);
        self.steps_done = step;
        let row = HistoryRow {
            step,
            epoch,
            lr,
            loss: g.loss,
        };
        self.history.push(row.clone());
        Ok(row)
    }

    /// Run until `cfg.epochs · cfg.steps_per_epoch` steps are done.
    pub fn run(mut self) -> Result<TrainOutcome> {
        while self.steps_done < self.cfg.total_steps() {
            self.step()?;
        }
        Ok(self.finish())
    }

    /// Quantize the model to checkpoint precision and capture a checkpoint,
    /// so the returned model and a reloaded checkpoint agree exactly.
    pub fn finish(mut self) -> TrainOutcome {
        for p in self.model.params_mut() {
            p.value = quantize_f32(&p.value);
        }
        let epoch = (self.steps_done / self.cfg.steps_per_epoch) as u32;
        let checkpoint = Checkpoint::capture(&self.model, &self.cfg, &self.adam, epoch);
        TrainOutcome {
            model: self.model,
            checkpoint,
            history: self.history,
            resampled: self.resampled,
            unassignable: self.unassignable,
        }
    }
}

pub fn train(cfg: TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    Trainer::new(cfg, data)?.run()
}

/// Mean share of normalized pre-pool activation mass on cells with heatmap
/// value below `threshold`, per supervised region, over `rows`. Uses
/// inference-mode statistics.
pub fn low_heatmap_mass(trainer: &Trainer<'_>, rows: &[usize], threshold: f64) -> Result<Vec<(Region, f64)>> {
    let model = trainer.model();
    let rows: Vec<usize> = rows.iter().copied().filter(|&r| trainer.heatmaps_of(r).is_some()).collect();
    if rows.is_empty() {
        return Err(Error::Data("no rows with usable keypoints".into()));
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let x = tape.constant(trainer.data.batch(&rows)?);
    let outs = model.forward_branches(&mut tape, &bound, x, Mode::Infer, &mut Vec::new())?;
    let dims = model.config().feature_dims();
    let cells = dims.0 * dims.1;
    trainer
        .regions()
        .iter()
        .enumerate()
        .map(|(i, &region)| {
            let maps = normalized_maps(&mut tape, outs[i].pre_pool, dims)?;
            let data = tape.value(maps).data();
            let shares: Vec<f64> = rows
                .iter()
                .enumerate()
                .filter_map(|(n, &r)| {
                    low_region_mass(&data[n * cells..(n + 1) * cells], &trainer.heatmaps_of(r).unwrap()[i], threshold)
                })
                .collect();
            let mean = if shares.is_empty() { 0.0 } else { shares.iter().sum::<f64>() / shares.len() as f64 };
            Ok((region, mean))
        })
        .collect()
}
