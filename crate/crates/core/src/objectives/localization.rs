//! Activation normalization and the localization-inducing loss.

use super::heatmap::Heatmap;
use crate::error::{Error, Result};
use crate::tensor::{Function, Tape, Tensor, Var};

/// Spatial ranges below this are treated as constant maps.
pub const FLAT_MAP_GUARD: f64 = 1e-12;

/// Per map over the trailing two axes: `(x − min) / (max − min)`.
struct MinMaxNormalize {
    map: usize,
    /// Per map: (argmin, argmax, range); `None` for flat maps.
    extrema: Vec<Option<(usize, usize, f64)>>,
}

impl Function for MinMaxNormalize {
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut gx = vec![0.0; inputs[0].numel()];
        for (m, ext) in self.extrema.iter().enumerate() {
            let Some((lo, hi, range)) = *ext else { continue };
            let span = m * self.map..(m + 1) * self.map;
            let (g, y) = (&grad.data()[span.clone()], &out.data()[span.clone()]);
            let dst = &mut gx[span];
            let (mut to_min, mut to_max) = (0.0, 0.0);
            for j in 0..self.map {
                dst[j] += g[j] / range;
                to_min += g[j] * (1.0 - y[j]);
                to_max += g[j] * y[j];
            }
            dst[lo] -= to_min / range;
            dst[hi] -= to_max / range;
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), gx).unwrap())]
    }
}

fn minmax_normalize(tape: &mut Tape, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    let r = xv.rank();
    if r < 2 {
        return Err(Error::shape(format!("normalize needs a 2-D map, got {:?}", xv.shape())));
    }
    let map = xv.shape()[r - 2] * xv.shape()[r - 1];
    let mut out = Vec::with_capacity(xv.numel());
    let mut extrema = Vec::new();
    for chunk in xv.data().chunks(map) {
        let (mut lo, mut hi) = (0, 0);
        for (j, v) in chunk.iter().enumerate() {
            if *v < chunk[lo] {
                lo = j;
            }
            if *v > chunk[hi] {
                hi = j;
            }
        }
        let range = chunk[hi] - chunk[lo];
        if range < FLAT_MAP_GUARD {
            out.extend(std::iter::repeat_n(0.0, map));
            extrema.push(None);
        } else {
            out.extend(chunk.iter().map(|v| (v - chunk[lo]) / range));
            extrema.push(Some((lo, hi, range)));
        }
    }
    let flops = 3 * xv.numel() as u64;
    let value = Tensor::new(xv.shape().to_vec(), out)?;
    Ok(tape.push_op(value, &[x], Box::new(MinMaxNormalize { map, extrema }), flops))
}

/// Channel-average an activation (`[h,w,c]` or `[N,h,w,c]`) and rescale each
/// spatial map to `[0, 1]`: subtract the spatial minimum, divide by the
/// resulting maximum. Constant maps become all zeros.
pub fn normalize_activation(tape: &mut Tape, alpha: Var) -> Result<Var> {
    let rank = tape.shape(alpha).len();
    if rank != 3 && rank != 4 {
        return Err(Error::shape(format!(
            "activation must be [h,w,c] or [N,h,w,c], got {:?}",
            tape.shape(alpha)
        )));
    }
    let avg = tape.channel_mean(alpha)?;
    minmax_normalize(tape, avg)
}

/// Normalized activation maps resized to the heatmap grid, `[N, hk, wk]`.
pub fn normalized_maps(tape: &mut Tape, alpha: Var, dims: (usize, usize)) -> Result<Var> {
    let norm = normalize_activation(tape, alpha)?;
    tape.bilinear_resize(norm, dims)
}

/// `Σ_images Σ_cells α_norm · H` for an `[N,h,w,c]` activation batch.
///
/// Every image must come with a heatmap; all heatmaps share one grid size.
/// Activations are normalized at their own resolution and then bilinearly
/// resized onto the heatmap grid when the sizes differ.
pub fn localization_loss(tape: &mut Tape, alpha: Var, heatmaps: &[Option<&Heatmap>]) -> Result<Var> {
    let shape = tape.shape(alpha).to_vec();
    if shape.len() != 4 {
        return Err(Error::shape(format!("localization loss expects [N,h,w,c], got {shape:?}")));
    }
    if heatmaps.len() != shape[0] {
        return Err(Error::Data(format!(
            "{} heatmaps for a batch of {}",
            heatmaps.len(),
            shape[0]
        )));
    }
    let maps: Vec<&Heatmap> = heatmaps
        .iter()
        .enumerate()
        .map(|(i, h)| h.ok_or_else(|| Error::Data(format!("missing heatmap for batch row {i}"))))
        .collect::<Result<_>>()?;
    let dims = (maps[0].height, maps[0].width);
    if maps.iter().any(|h| (h.height, h.width) != dims) {
        return Err(Error::Data("heatmaps in one batch must share a grid size".into()));
    }
    let target = Tensor::new(
        vec![maps.len(), dims.0, dims.1],
        maps.iter().flat_map(|h| h.grid.iter().copied()).collect(),
    )?;
    let norm = normalized_maps(tape, alpha, dims)?;
    let weighted = tape.mul_const(norm, &target)?;
    Ok(tape.sum(weighted))
}

/// Share of normalized activation mass on cells where `H < threshold`.
/// Returns `None` when the map has no mass at all.
pub fn low_region_mass(norm_map: &[f64], heatmap: &Heatmap, threshold: f64) -> Option<f64> {
    let total: f64 = norm_map.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let inside: f64 = norm_map
        .iter()
        .zip(&heatmap.grid)
        .filter(|(_, h)| **h < threshold)
        .map(|(a, _)| a)
        .sum();
    Some(inside / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::heatmap::{make_heatmap, Region};
    use crate::tensor::gradcheck::check_gradients;

    fn hm(grid: &[f64], h: usize, w: usize) -> Heatmap {
        Heatmap {
            height: h,
            width: w,
            grid: grid.to_vec(),
            region: Region::Neck,
            sigma_h: 1.0,
        }
    }

    fn normalized(shape: &[usize], data: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(shape.to_vec(), data.to_vec()).unwrap());
        let n = normalize_activation(&mut tape, a).unwrap();
        tape.value(n).data().to_vec()
    }

    #[test]
    fn single_channel_hand_values() {
        assert_eq!(normalized(&[2, 2, 1], &[0.0, 2.0, 4.0, 8.0]), vec![0.0, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn two_channel_average() {
        // channel means [1, 3]
        assert_eq!(normalized(&[1, 2, 2], &[0.0, 2.0, 5.0, 1.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn constant_map_is_zero() {
        assert_eq!(normalized(&[2, 2, 3], &[0.7; 12]), vec![0.0; 4]);
    }

    #[test]
    fn loss_hand_values() {
        let h = hm(&[0.0, 0.5, 0.5, 0.8], 2, 2);
        let run = |alpha: &[f64]| {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::new([1, 2, 2, 1], alpha.to_vec()).unwrap());
            let l = localization_loss(&mut tape, a, &[Some(&h)]).unwrap();
            tape.value(l).item()
        };
        assert_eq!(run(&[1.0, 0.0, 0.0, 0.0]), 0.0);
        assert!((run(&[0.0, 0.0, 0.0, 1.0]) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn mass_at_keypoint_costs_nothing() {
        let h = make_heatmap((1.0, 2.0), 1.5, (4, 2), Region::Hip).unwrap();
        let mut alpha = vec![0.0; 8];
        alpha[2 * 2 + 1] = 3.0;
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new([1, 4, 2, 1], alpha).unwrap());
        let l = localization_loss(&mut tape, a, &[Some(&h)]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn missing_heatmap_is_data_error() {
        let h = hm(&[0.0; 4], 2, 2);
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros([2, 2, 2, 1]));
        assert!(matches!(
            localization_loss(&mut tape, a, &[Some(&h), None]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn gradient_through_normalize_and_resize() {
        let alpha = Tensor::from_fn([2, 3, 2, 3], |i| ((i * 7 + 3) as f64 * 0.61).sin() + 0.05 * i as f64);
        let h0 = make_heatmap((1.0, 2.0), 1.5, (8, 4), Region::Neck).unwrap();
        let h1 = make_heatmap((2.5, 6.0), 1.5, (8, 4), Region::Ankle).unwrap();
        let report = check_gradients(&[alpha], 1e-5, |tape, v| {
            localization_loss(tape, v[0], &[Some(&h0), Some(&h1)])
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn low_region_share() {
        let h = hm(&[0.0, 0.6, 0.3, 0.9], 2, 2);
        let share = low_region_mass(&[1.0, 1.0, 1.0, 1.0], &h, 0.5).unwrap();
        assert_eq!(share, 0.5);
        assert!(low_region_mass(&[0.0; 4], &h, 0.5).is_none());
    }
}
