//! P×K identity-balanced batch sampling.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Row indices (into the dataset) and identity labels of one P×K batch,
/// grouped by identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PkBatch {
    pub rows: Vec<usize>,
    pub labels: Vec<i64>,
    pub p: usize,
    pub k: usize,
}

impl PkBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct PkSampler {
    groups: Vec<(i64, Vec<usize>)>,
    p: usize,
    k: usize,
    rng: Rng,
}

impl PkSampler {
    /// Identities are drawn without replacement per batch. Samples within an
    /// identity are drawn without replacement when it has at least K of them,
    /// otherwise with replacement.
    pub fn new(groups: BTreeMap<i64, Vec<usize>>, p: usize, k: usize, rng: Rng) -> Result<Self> {
        if p == 0 || k == 0 {
            return Err(Error::Batch(format!("P and K must be positive, got P={p} K={k}")));
        }
        let groups: Vec<(i64, Vec<usize>)> = groups.into_iter().filter(|(_, v)| !v.is_empty()).collect();
        if groups.len() < p {
            return Err(Error::Batch(format!(
                "need at least P={p} identities with samples, found {}",
                groups.len()
            )));
        }
        Ok(PkSampler { groups, p, k, rng })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn identities(&self) -> usize {
        self.groups.len()
    }

    pub fn next_batch(&mut self) -> PkBatch {
        let (p, k) = (self.p, self.k);
        let mut rows = Vec::with_capacity(p * k);
        let mut labels = Vec::with_capacity(p * k);
        let mut picked = sample(&mut self.rng, self.groups.len(), p).into_vec();
        picked.sort_unstable();
        for g in picked {
            let (id, members) = &self.groups[g];
            if members.len() >= k {
                rows.extend(sample(&mut self.rng, members.len(), k).into_iter().map(|i| members[i]));
            } else {
                rows.extend((0..k).map(|_| members[self.rng.random_range(0..members.len())]));
            }
            labels.extend(std::iter::repeat_n(*id, k));
        }
        PkBatch { rows, labels, p, k }
    }

    /// One more row of `identity`, drawn uniformly.
    pub fn draw_from(&mut self, identity: i64) -> Option<usize> {
        let members = &self.groups.iter().find(|(id, _)| *id == identity)?.1;
        Some(members[self.rng.random_range(0..members.len())])
    }
}
