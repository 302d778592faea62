//! Batch-hard triplet loss with L1 distances.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Function, Tape, Tensor, Var};

pub const DEFAULT_MARGIN: f64 = 0.2;

/// L1 distance between two rows, summed in coordinate order.
pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Hardest positive and negative for one anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorTerm {
    pub positive: usize,
    pub negative: usize,
    pub rho: f64,
    pub nu: f64,
    /// `max(m + rho − nu, 0)`
    pub hinge: f64,
}

/// Check the batch shape: at least two identities, each with at least two rows.
pub fn validate_labels(labels: &[i64]) -> Result<()> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::Batch(format!(
            "batch-hard mining needs at least 2 identities, got {}",
            counts.len()
        )));
    }
    if let Some((id, n)) = counts.iter().find(|(_, &n)| n < 2) {
        return Err(Error::Batch(format!("identity {id} has only {n} sample(s) in the batch")));
    }
    Ok(())
}

/// Per-anchor hardest positive (max distance, same label, other row) and
/// hardest negative (min distance, other label). Ties keep the lowest row.
pub fn batch_hard_terms(embeddings: &Tensor, labels: &[i64], margin: f64) -> Result<Vec<AnchorTerm>> {
    if embeddings.rank() != 2 || embeddings.shape()[0] != labels.len() {
        return Err(Error::shape(format!(
            "embeddings {:?} vs {} labels",
            embeddings.shape(),
            labels.len()
        )));
    }
    validate_labels(labels)?;
    let e = embeddings.shape()[1];
    let rows: Vec<&[f64]> = embeddings.data().chunks(e).collect();
    let n = rows.len();
    let dist: Vec<f64> = (0..n * n).map(|k| l1(rows[k / n], rows[k % n])).collect();

    Ok((0..n)
        .map(|a| {
            let (mut pos, mut neg) = (None::<(usize, f64)>, None::<(usize, f64)>);
            for j in 0..n {
                let d = dist[a * n + j];
                if labels[j] == labels[a] {
                    if j != a && pos.is_none_or(|(_, best)| d > best) {
                        pos = Some((j, d));
                    }
                } else if neg.is_none_or(|(_, best)| d < best) {
                    neg = Some((j, d));
                }
            }
            let ((positive, rho), (negative, nu)) = (pos.unwrap(), neg.unwrap());
            AnchorTerm {
                positive,
                negative,
                rho,
                nu,
                hinge: (margin + rho - nu).max(0.0),
            }
        })
        .collect())
}

struct BatchHard {
    terms: Vec<AnchorTerm>,
}

impl Function for BatchHard {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let e = x.shape()[1];
        let g = grad.item();
        let mut gx = vec![0.0; x.numel()];
        let sign = |v: f64| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        };
        for (a, t) in self.terms.iter().enumerate() {
            if t.hinge <= 0.0 {
                continue;
            }
            for k in 0..e {
                let sp = sign(x.data()[a * e + k] - x.data()[t.positive * e + k]) * g;
                let sn = sign(x.data()[a * e + k] - x.data()[t.negative * e + k]) * g;
                gx[a * e + k] += sp - sn;
                gx[t.positive * e + k] -= sp;
                gx[t.negative * e + k] += sn;
            }
        }
        vec![Some(Tensor::new(x.shape().to_vec(), gx).unwrap())]
    }
}

/// `Σ_anchors max(m + ρ − ν, 0)` over an `[N, E]` embedding batch.
pub fn triplet_loss_batch_hard(tape: &mut Tape, embeddings: Var, labels: &[i64], margin: f64) -> Result<Var> {
    let ev = tape.value(embeddings);
    let terms = batch_hard_terms(ev, labels, margin)?;
    let total = terms.iter().map(|t| t.hinge).sum();
    let n = labels.len() as u64;
    let flops = 3 * n * n * ev.shape()[1] as u64;
    Ok(tape.push_op(Tensor::scalar(total), &[embeddings], Box::new(BatchHard { terms }), flops))
}
