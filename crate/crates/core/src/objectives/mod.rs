//! Training objectives: batch-hard triplet loss, keypoint heatmaps and the
//! localization-inducing loss, plus their weighted combination.

mod heatmap;
mod localization;
mod triplet;

pub use heatmap::{image_to_grid, make_heatmap, region_heatmap, Heatmap, Region};
pub use localization::{
    localization_loss, low_region_mass, normalize_activation, normalized_maps, FLAT_MAP_GUARD,
};
pub use triplet::{
    batch_hard_terms, l1, triplet_loss_batch_hard, validate_labels, AnchorTerm, DEFAULT_MARGIN,
};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Weight of the localization term.
pub const DEFAULT_LAMBDA: f64 = 0.2;

/// Loss values of one training step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub triplet: f64,
    /// Localization loss per supervised region.
    pub localization: Vec<(Region, f64)>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn localization_for(&self, region: Region) -> Option<f64> {
        self.localization.iter().find(|(r, _)| *r == region).map(|(_, v)| *v)
    }
}

/// `total = triplet + λ·Σ localization`.
pub fn combined_loss(triplet: f64, localization: &[(Region, f64)], lambda: f64) -> Result<LossBreakdown> {
    if !(lambda >= 0.0) {
        return Err(Error::Param(format!("lambda must be >= 0, got {lambda}")));
    }
    let loc: f64 = localization.iter().map(|(_, v)| v).sum();
    Ok(LossBreakdown {
        triplet,
        localization: localization.to_vec(),
        total: triplet + lambda * loc,
    })
}

/// Tape version of [`combined_loss`].
pub fn combine_on_tape(tape: &mut Tape, triplet: Var, localization: &[Var], lambda: f64) -> Result<Var> {
    let mut total = triplet;
    for &l in localization {
        let weighted = tape.scale(l, lambda);
        total = tape.add(total, weighted)?;
    }
    Ok(total)
}
