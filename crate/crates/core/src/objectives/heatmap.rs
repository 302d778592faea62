//! Inverted Gaussian keypoint heatmaps.
//!
//! `H(x, y) = 1 − exp(−((x − kx)² + (y − ky)²) / σ²)` on an `h × w` grid:
//! zero at the keypoint and rising towards 1 away from it. The localization
//! loss multiplies normalized activations by `H`, so activation mass far from
//! the keypoint is what gets penalized.

use std::fmt::Write as _;

use crate::datapipe::{KeypointName, KeypointRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Neck,
    Hip,
    Ankle,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Neck, Region::Hip, Region::Ankle];

    pub fn name(self) -> &'static str {
        match self {
            Region::Neck => "neck",
            Region::Hip => "hip",
            Region::Ankle => "ankle",
        }
    }

    pub fn parse(s: &str) -> Result<Region> {
        Region::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Param(format!("unknown region '{s}' (neck|hip|ankle)")))
    }

    /// Keypoints whose heatmaps are fused for this region.
    pub fn keypoints(self) -> &'static [KeypointName] {
        match self {
            Region::Neck => &[KeypointName::Neck],
            Region::Hip => &[KeypointName::RightHip, KeypointName::LeftHip],
            Region::Ankle => &[KeypointName::RightAnkle, KeypointName::LeftAnkle],
        }
    }

    /// Region supervised by branch `i` (0-based) in the landmark scheme.
    /// Branches past the third are left unconstrained.
    pub fn for_branch(i: usize) -> Option<Region> {
        Region::ALL.get(i).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// Row-major `height × width`, every entry in `[0, 1]`.
    pub grid: Vec<f64>,
    pub region: Region,
    pub sigma_h: f64,
}

impl Heatmap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.width + col]
    }

    /// Cellwise maximum of two maps of the same region and size.
    pub fn fuse_bilateral(&self, other: &Heatmap) -> Result<Heatmap> {
        if (self.height, self.width, self.region) != (other.height, other.width, other.region) {
            return Err(Error::Param(format!(
                "cannot fuse {}x{} {} map with {}x{} {} map",
                self.height,
                self.width,
                self.region.name(),
                other.height,
                other.width,
                other.region.name()
            )));
        }
        Ok(Heatmap {
            grid: self.grid.iter().zip(&other.grid).map(|(a, b)| a.max(*b)).collect(),
            ..self.clone()
        })
    }

    /// Row-major grid with six decimals, one line per row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.grid.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(s, "{}", cells.join(",")).unwrap();
        }
        s
    }
}

/// Heatmap for a keypoint given in grid coordinates (`x` = column, `y` = row).
/// Keypoints slightly outside the grid are clamped onto its border.
pub fn make_heatmap(
    keypoint: (f64, f64),
    sigma_h: f64,
    dims: (usize, usize),
    region: Region,
) -> Result<Heatmap> {
    if !(sigma_h > 0.0) || !sigma_h.is_finite() {
        return Err(Error::Param(format!("heatmap bandwidth must be > 0, got {sigma_h}")));
    }
    let (h, w) = dims;
    if h == 0 || w == 0 {
        return Err(Error::Param("heatmap dims must be positive".into()));
    }
    if !keypoint.0.is_finite() || !keypoint.1.is_finite() {
        return Err(Error::Param("keypoint coordinates must be finite".into()));
    }
    let kx = keypoint.0.clamp(0.0, (w - 1) as f64);
    let ky = keypoint.1.clamp(0.0, (h - 1) as f64);
    let s2 = sigma_h * sigma_h;
    let mut grid = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let d2 = (x as f64 - kx).powi(2) + (y as f64 - ky).powi(2);
            grid.push(1.0 - (-d2 / s2).exp());
        }
    }
    Ok(Heatmap {
        height: h,
        width: w,
        grid,
        region,
        sigma_h,
    })
}

/// Map an image-space point onto a `dims` grid whose cells tile the image,
/// so a point at a cell's center lands on that cell's integer coordinate.
pub fn image_to_grid(point: (f64, f64), image: (usize, usize), dims: (usize, usize)) -> (f64, f64) {
    let (ih, iw) = image;
    let (gh, gw) = dims;
    (
        point.0 * gw as f64 / iw as f64 - 0.5,
        point.1 * gh as f64 / ih as f64 - 0.5,
    )
}

/// Region heatmap for one sample: bilateral regions fuse left and right.
///
/// Fails with a data error when a required keypoint is absent or its
/// confidence is below `min_confidence`.
pub fn region_heatmap(
    record: &KeypointRecord,
    region: Region,
    sigma_h: f64,
    image: (usize, usize),
    dims: (usize, usize),
    min_confidence: f64,
) -> Result<Heatmap> {
    let mut fused: Option<Heatmap> = None;
    for &name in region.keypoints() {
        let kp = record.confident(name, min_confidence).ok_or_else(|| {
            Error::Data(format!(
                "sample {}: no confident {} keypoint",
                record.sample_id,
                name.as_str()
            ))
        })?;
        let map = make_heatmap(image_to_grid((kp.x, kp.y), image, dims), sigma_h, dims, region)?;
        fused = Some(match fused {
            Some(f) => f.fuse_bilateral(&map)?,
            None => map,
        });
    }
    Ok(fused.expect("every region has at least one keypoint"))
}
