use std::fmt;

use crate::error::{Error, Result};

/// Split of one layer's `d` neurons into a shared set and `b` disjoint
/// branch-unique sets.
///
/// Indices are 0-based internally. Shared neurons occupy `0..sigma`, branch
/// `i` (0-based) owns `sigma + i·omega .. sigma + (i+1)·omega`, and any
/// remainder at the top of the range joins the shared set so every neuron
/// stays active for every branch that could use it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPartition {
    pub layer_id: String,
    pub d: usize,
    pub sigma: usize,
    pub omega: usize,
    pub remainder: usize,
    pub shared_idx: Vec<usize>,
    pub unique_idx: Vec<Vec<usize>>,
}

/// Tolerance used before flooring so exact ratios such as `12 / 3` are not
/// lost to representation error.
const FLOOR_SLACK: f64 = 1e-9;

fn floor_with_slack(x: f64) -> usize {
    (x + FLOOR_SLACK).floor().max(0.0) as usize
}

/// Partition `d` neurons among `b` branches with sharing degree `delta`.
///
/// For `delta > 0`:
/// `sigma = floor(d / (1 − b(1 − 1/delta)))`, `omega = floor((1/delta − 1)·sigma)`.
/// For `delta = 0`: `sigma = 0`, `omega = floor(d / b)`.
pub fn make_partition(layer_id: &str, d: usize, b: usize, delta: f64) -> Result<LayerPartition> {
    if b == 0 {
        return Err(Error::Partition("branch count must be at least 1".into()));
    }
    if d < b {
        return Err(Error::Partition(format!(
            "layer {layer_id}: {d} neurons cannot host {b} branches"
        )));
    }
    if !(0.0..=1.0).contains(&delta) || delta.is_nan() {
        return Err(Error::Partition(format!(
            "sharing degree {delta} outside [0, 1]"
        )));
    }

    let (sigma, mut omega) = if delta == 0.0 {
        (0, d / b)
    } else {
        let inv = 1.0 / delta;
        let sigma = floor_with_slack(d as f64 / (1.0 - b as f64 * (1.0 - inv))).min(d);
        let omega = floor_with_slack((inv - 1.0) * sigma as f64);
        (sigma, omega)
    };
    // the slack must never push the layout past d
    while sigma + b * omega > d {
        omega -= 1;
    }
    let remainder = d - sigma - b * omega;

    let mut shared_idx: Vec<usize> = (0..sigma).collect();
    shared_idx.extend(sigma + b * omega..d);
    let unique_idx = (0..b)
        .map(|i| (sigma + i * omega..sigma + (i + 1) * omega).collect())
        .collect();

    Ok(LayerPartition {
        layer_id: layer_id.to_string(),
        d,
        sigma,
        omega,
        remainder,
        shared_idx,
        unique_idx,
    })
}

impl LayerPartition {
    pub fn branches(&self) -> usize {
        self.unique_idx.len()
    }

    /// Sorted neuron indices visible to branch `i` (0-based).
    pub fn active_indices(&self, i: usize) -> Result<Vec<usize>> {
        let unique = self.unique_idx.get(i).ok_or_else(|| {
            Error::Partition(format!(
                "branch {} out of range 1..={}",
                i + 1,
                self.branches()
            ))
        })?;
        let mut idx: Vec<usize> = self.shared_idx.iter().chain(unique).copied().collect();
        idx.sort_unstable();
        Ok(idx)
    }

    /// Constant 0/1 drop mask of length `d` for branch `i` (0-based).
    pub fn branch_mask(&self, i: usize) -> Result<Vec<f64>> {
        let mut mask = vec![0.0; self.d];
        for j in self.active_indices(i)? {
            mask[j] = 1.0;
        }
        Ok(mask)
    }

    /// True when every branch sees every neuron.
    pub fn is_full(&self) -> bool {
        self.shared_idx.len() == self.d
    }

    /// Realized sharing ratio `sigma / (sigma + omega)`, if defined.
    pub fn realized_delta(&self) -> Option<f64> {
        (self.sigma + self.omega > 0).then(|| self.sigma as f64 / (self.sigma + self.omega) as f64)
    }
}

/// Render `lo..hi` (0-based, half-open) as a 1-based closed range.
fn one_based(range: &[usize]) -> String {
    match (range.first(), range.last()) {
        (Some(a), Some(b)) if b + 1 - a == range.len() => format!("{}-{}", a + 1, b + 1),
        (Some(_), Some(_)) => range
            .iter()
            .map(|v| (v + 1).to_string())
            .collect::<Vec<_>>()
            .join(","),
        _ => "-".to_string(),
    }
}

impl fmt::Display for LayerPartition {
    /// One row of the partition table: layer, d, sigma, omega, remainder,
    /// shared range, then each branch's unique range (1-based).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let core: Vec<usize> = (0..self.sigma).collect();
        let tail: Vec<usize> = (self.sigma + self.branches() * self.omega..self.d).collect();
        let shared = match (core.is_empty(), tail.is_empty()) {
            (true, true) => "-".to_string(),
            (false, true) => one_based(&core),
            (true, false) => one_based(&tail),
            (false, false) => format!("{}+{}", one_based(&core), one_based(&tail)),
        };
        write!(
            f,
            "{:<14} {:>6} {:>6} {:>6} {:>6}  {:<12}",
            self.layer_id, self.d, self.sigma, self.omega, self.remainder, shared
        )?;
        for u in &self.unique_idx {
            write!(f, " {:<10}", one_based(u))?;
        }
        Ok(())
    }
}

/// Header matching [`LayerPartition`]'s `Display` rows.
pub fn table_header(b: usize) -> String {
    let mut s = format!(
        "{:<14} {:>6} {:>6} {:>6} {:>6}  {:<12}",
        "layer", "d", "sigma", "omega", "rem", "shared"
    );
    for i in 1..=b {
        s.push_str(&format!(" {:<10}", format!("branch{i}")));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn twelve_two_half() {
        let p = make_partition("l", 12, 2, 0.5).unwrap();
        assert_eq!((p.sigma, p.omega, p.remainder), (4, 4, 0));
        assert_eq!(p.shared_idx, vec![0, 1, 2, 3]);
        assert_eq!(p.unique_idx, vec![vec![4, 5, 6, 7], vec![8, 9, 10, 11]]);
    }

    #[test]
    fn ten_three_quarter() {
        let p = make_partition("l", 10, 3, 0.25).unwrap();
        assert_eq!((p.sigma, p.omega, p.remainder), (1, 3, 0));
    }

    #[test]
    fn zero_delta_special_case() {
        let p = make_partition("l", 128, 4, 0.0).unwrap();
        assert_eq!((p.sigma, p.omega, p.remainder), (0, 32, 0));
        let p = make_partition("l", 10, 3, 0.0).unwrap();
        assert_eq!((p.sigma, p.omega, p.remainder), (0, 3, 1));
        assert_eq!(p.shared_idx, vec![9]);
    }

    #[test]
    fn remainder_joins_shared() {
        let p = make_partition("l", 128, 2, 0.5).unwrap();
        assert_eq!((p.sigma, p.omega, p.remainder), (42, 42, 2));
        assert_eq!(p.shared_idx.len(), 44);
        assert_eq!(p.active_indices(0).unwrap().len(), 86);
    }

    #[test]
    fn masks() {
        let p = make_partition("l", 12, 2, 0.5).unwrap();
        let m = p.branch_mask(0).unwrap();
        assert_eq!(&m[..8], &[1.0; 8]);
        assert_eq!(&m[8..], &[0.0; 4]);
        assert!(matches!(p.branch_mask(2), Err(Error::Partition(_))));

        let full = make_partition("l", 7, 3, 1.0).unwrap();
        for i in 0..3 {
            assert!(full.branch_mask(i).unwrap().iter().all(|&v| v == 1.0));
        }
        let single = make_partition("l", 9, 1, 0.3).unwrap();
        assert!(single.branch_mask(0).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn too_few_neurons() {
        assert!(matches!(
            make_partition("l", 3, 4, 0.5),
            Err(Error::Partition(_))
        ));
    }

    proptest! {
        #[test]
        fn partition_is_total_and_disjoint(d in 1usize..300, b in 1usize..9, delta in 0.0f64..=1.0) {
            prop_assume!(d >= b);
            let p = make_partition("l", d, b, delta).unwrap();
            let mut seen = vec![0u8; d];
            for &j in p.shared_idx.iter().chain(p.unique_idx.iter().flatten()) {
                seen[j] += 1;
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            prop_assert_eq!(p.sigma + b * p.omega + p.remainder, d);
            prop_assert!(p.unique_idx.iter().all(|u| u.len() == p.omega));
            if let (Some(real), true) = (p.realized_delta(), p.omega > 0) {
                prop_assert!((delta - real).abs() <= 1.0 / (p.sigma + p.omega) as f64 + 1e-12);
            }
        }

        #[test]
        fn mask_applied_twice_equals_once(d in 2usize..64, b in 1usize..5, delta in 0.0f64..=1.0) {
            prop_assume!(d >= b);
            let p = make_partition("l", d, b, delta).unwrap();
            for i in 0..b {
                let m = p.branch_mask(i).unwrap();
                let twice: Vec<f64> = m.iter().map(|v| v * v).collect();
                prop_assert_eq!(&m, &twice);
            }
        }
    }
}
