//! Pose orientation from shoulder width relative to torso height.
//!
//! `θ = arccos(μ · D(RS, LS) / (½(D(RS, RH) + D(LS, LH))))` with
//! `μ = sign(RS.x − LS.x)`. The argument is clamped to `[−1, 1]`; equal
//! shoulder x gives `θ = π/2`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use super::keypoints::{KeypointName, KeypointRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subset {
    Front,
    Side,
    Back,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Front, Subset::Side, Subset::Back];

    pub fn name(self) -> &'static str {
        match self {
            Subset::Front => "front",
            Subset::Side => "side",
            Subset::Back => "back",
        }
    }

    /// Branch (0-based) trained on this subset in the orientation scheme.
    pub fn branch(self) -> usize {
        self as usize
    }

    fn swapped(self) -> Subset {
        match self {
            Subset::Front => Subset::Back,
            Subset::Back => Subset::Front,
            Subset::Side => Subset::Side,
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

pub fn orientation_angle(kp: &KeypointRecord, min_confidence: f64) -> Result<f64> {
    let get = |name: KeypointName| {
        kp.confident(name, min_confidence).map(|k| (k.x, k.y)).ok_or_else(|| Error::Unassignable {
            sample_id: kp.sample_id.clone(),
            reason: format!("{} missing or below confidence {min_confidence}", name.as_str()),
        })
    };
    let rs = get(KeypointName::RightShoulder)?;
    let ls = get(KeypointName::LeftShoulder)?;
    let rh = get(KeypointName::RightHip)?;
    let lh = get(KeypointName::LeftHip)?;
    let torso = 0.5 * (dist(rs, rh) + dist(ls, lh));
    if !(torso > 0.0) {
        return Err(Error::Unassignable {
            sample_id: kp.sample_id.clone(),
            reason: "zero torso height".into(),
        });
    }
    let dx = rs.0 - ls.0;
    if dx == 0.0 {
        return Ok(FRAC_PI_2);
    }
    let mu = dx.signum();
    Ok((mu * dist(rs, ls) / torso).clamp(-1.0, 1.0).acos())
}

/// Bucket an angle; boundaries go to the lower bucket.
pub fn assign_subset(theta: f64) -> Subset {
    if theta <= PI / 3.0 {
        Subset::Front
    } else if theta <= 2.0 * PI / 3.0 {
        Subset::Side
    } else {
        Subset::Back
    }
}

#[derive(Clone, Debug, Default)]
pub struct OrientationReport {
    /// `(sample_id, θ, subset)` for every assignable record, input order.
    pub assigned: Vec<(String, f64, Subset)>,
    /// `(sample_id, reason)` for the rest.
    pub unassignable: Vec<(String, String)>,
}

impl OrientationReport {
    pub fn members(&self, subset: Subset) -> impl Iterator<Item = &str> {
        self.assigned.iter().filter(move |a| a.2 == subset).map(|a| a.0.as_str())
    }

    pub fn count(&self, subset: Subset) -> usize {
        self.members(subset).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample_id,theta,subset\n");
        for (id, theta, subset) in &self.assigned {
            s.push_str(&format!("{id},{theta:.9},{subset}\n"));
        }
        s
    }
}

/// Assign every record; `reverse` swaps the front and back labels for
/// datasets whose keypoint convention mirrors left and right.
pub fn partition_by_orientation(records: &[KeypointRecord], min_confidence: f64, reverse: bool) -> OrientationReport {
    let mut report = OrientationReport::default();
    for r in records {
        match orientation_angle(r, min_confidence) {
            Ok(theta) => {
                let s = assign_subset(theta);
                report
                    .assigned
                    .push((r.sample_id.clone(), theta, if reverse { s.swapped() } else { s }));
            }
            Err(Error::Unassignable { reason, .. }) => report.unassignable.push((r.sample_id.clone(), reason)),
            Err(e) => report.unassignable.push((r.sample_id.clone(), e.to_string())),
        }
    }
    report
}
