//! Synthetic pedestrian-like images with consistent keypoints.
//!
//! Shirt, trouser and hair colours come from small shared palettes, so they
//! narrow an identity down without pinning it. Each pose also shows one
//! identity-specific colour of its own: an emblem from the front, a sleeve
//! patch from the side and a bag from behind. Sample `j` is rendered in pose
//! `j % modes` (front, side, back, repeating) by camera `j % 2`, each camera
//! with its own colour response, and shifted by up to one template pixel in
//! each direction. Camera response and shift are skipped when `noise` is 0.
//! Keypoints follow the rendered pose: for keypoint jitter up to 0.5 px the recovered
//! orientation subset always equals the generating pose.
//!
//! Shapes are drawn on a 16×32 template scaled to the requested size, which
//! must keep the 1:2 width to height ratio so that orientation angles are
//! unaffected by scaling.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::keypoints::{KeypointName, KeypointRecord};
use super::manifest::{Manifest, Record, Split};
use super::orientation::Subset;
use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{indexed_stream, Stream};
use crate::tensor::Tensor;

/// Largest keypoint jitter for which orientation round-trips exactly.
pub const ROUND_TRIP_NOISE: f64 = 0.5;

const TEMPLATE_W: f64 = 16.0;
const TEMPLATE_H: f64 = 32.0;
const BACKGROUND: f64 = 0.2;
const SKIN: [f64; 3] = [0.9, 0.75, 0.6];
/// Per-camera colour response.
const CAMERA_TINT: [[f64; 3]; 2] = [[1.0, 1.0, 1.0], [0.8, 0.85, 1.05]];
/// Largest per-sample translation, in template pixels.
const MAX_SHIFT: i32 = 1;
const SHIRTS: [[f64; 3]; 4] = [[0.8, 0.1, 0.1], [0.1, 0.3, 0.8], [0.9, 0.9, 0.9], [0.2, 0.6, 0.2]];
const TROUSERS: [[f64; 3]; 3] = [[0.1, 0.1, 0.15], [0.35, 0.3, 0.6], [0.55, 0.45, 0.3]];
const HAIR: [[f64; 3]; 3] = [[0.1, 0.07, 0.05], [0.5, 0.35, 0.1], [0.85, 0.75, 0.4]];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub ids: usize,
    pub per_id: usize,
    pub modes: usize,
    /// Pixel noise standard deviation and keypoint jitter bound.
    pub noise: f64,
    pub height: usize,
    pub width: usize,
    /// Share of identities (rounded) used for training; the rest are split
    /// into query and gallery.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            ids: 24,
            per_id: 6,
            modes: 3,
            noise: 0.05,
            height: 32,
            width: 16,
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(m));
        if self.ids < 2 || self.per_id < 2 {
            return bad(format!("need ids >= 2 and per_id >= 2, got {} and {}", self.ids, self.per_id));
        }
        if self.modes == 0 {
            return bad("modes must be >= 1".into());
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if self.width < 8 || self.height != 2 * self.width {
            return bad(format!(
                "image must be h = 2w with w >= 8, got {}x{}",
                self.height, self.width
            ));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad(format!("train_fraction must be in [0, 1], got {}", self.train_fraction));
        }
        Ok(())
    }

    pub fn train_ids(&self) -> usize {
        (self.ids as f64 * self.train_fraction).round() as usize
    }
}

/// Generated data plus the pose each sample was rendered in.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub poses: Vec<Subset>,
}

struct Palette {
    shirt: [f64; 3],
    trousers: [f64; 3],
    emblem: [f64; 3],
    sleeve: [f64; 3],
    bag: [f64; 3],
    hair: [f64; 3],
}

fn random_colour(rng: &mut crate::rng::Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn in_box(u: f64, v: f64, u0: f64, u1: f64, v0: f64, v1: f64) -> bool {
    (u0..u1).contains(&u) && (v0..v1).contains(&v)
}

/// Colour of template point `(u, v)` for a pose.
fn template_colour(p: &Palette, pose: Subset, u: f64, v: f64) -> [f64; 3] {
    let side = pose == Subset::Side;
    let (body0, body1) = if side { (6.0, 10.0) } else { (4.0, 12.0) };
    // head
    if in_box(u, v, 6.0, 10.0, 2.0, 7.0) {
        return match pose {
            Subset::Front if v >= 3.5 => SKIN,
            Subset::Side if v >= 3.5 && u < 8.5 => SKIN,
            _ => p.hair,
        };
    }
    if in_box(u, v, 7.0, 9.0, 7.0, 8.0) {
        return SKIN;
    }
    // torso
    if in_box(u, v, body0, body1 + if side { 1.0 } else { 0.0 }, 8.0, 18.0) {
        return match pose {
            Subset::Front if in_box(u, v, 6.0, 10.0, 10.0, 14.0) => p.emblem,
            Subset::Back if in_box(u, v, 5.0, 11.0, 9.0, 16.0) => p.bag,
            Subset::Side if in_box(u, v, 7.0, 9.0, 9.0, 13.0) => p.sleeve,
            Subset::Side if in_box(u, v, 9.5, 11.0, 9.0, 16.0) => p.bag.map(|c| 0.5 * c),
            Subset::Side if u >= 10.0 => [BACKGROUND; 3],
            _ => p.shirt,
        };
    }
    // legs and shoes
    let on_leg = if side {
        (6.5..9.5).contains(&u)
    } else {
        (5.0..7.5).contains(&u) || (8.5..11.0).contains(&u)
    };
    if on_leg && (18.0..31.0).contains(&v) {
        return if v < 30.0 { p.trousers } else { p.trousers.map(|c| 0.5 * c) };
    }
    [BACKGROUND; 3]
}

/// Template keypoints `(name, x, y)` for a pose.
fn template_keypoints(pose: Subset) -> [(KeypointName, f64, f64); 7] {
    use KeypointName::*;
    let (rs, ls, ra, la) = match pose {
        Subset::Front => (12.0, 4.0, 10.0, 6.0),
        Subset::Side => (8.5, 7.5, 8.5, 7.5),
        Subset::Back => (4.0, 12.0, 6.0, 10.0),
    };
    [
        (Neck, 8.0, 7.5),
        (RightShoulder, rs, 8.0),
        (LeftShoulder, ls, 8.0),
        (RightHip, rs, 18.0),
        (LeftHip, ls, 18.0),
        (RightAnkle, ra, 29.5),
        (LeftAnkle, la, 29.5),
    ]
}

pub fn pose_of_mode(mode: usize) -> Subset {
    Subset::ALL[mode % 3]
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let (sx, sy) = (w as f64 / TEMPLATE_W, h as f64 / TEMPLATE_H);
    let pixel_noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Param(e.to_string()))?;
    let train_ids = cfg.train_ids();

    let mut records = Vec::new();
    let mut images = Vec::new();
    let mut keypoints = Vec::new();
    let mut poses = Vec::new();
    for id in 0..cfg.ids {
        // one stream per identity keeps identities stable when `ids` grows
        let mut rng = indexed_stream(cfg.seed, Stream::Synth, id as u64);
        let palette = Palette {
            shirt: SHIRTS[rng.random_range(0..SHIRTS.len())],
            trousers: TROUSERS[rng.random_range(0..TROUSERS.len())],
            hair: HAIR[rng.random_range(0..HAIR.len())],
            emblem: random_colour(&mut rng),
            sleeve: random_colour(&mut rng),
            bag: random_colour(&mut rng),
        };
        for j in 0..cfg.per_id {
            let mode = j % cfg.modes;
            let pose = pose_of_mode(mode);
            // modes beyond the three poses repeat them under dimmer light
            let light = 1.0 - 0.1 * (mode / 3) as f64;
            let camera = j % 2;
            // camera response and placement are nuisances like pixel noise
            let nuisance = cfg.noise > 0.0;
            let tint = if nuisance { CAMERA_TINT[camera] } else { [1.0; 3] };
            // whole template pixels keep the keypoints consistent with the drawing
            let (du, dv) = if nuisance {
                (
                    rng.random_range(-MAX_SHIFT..=MAX_SHIFT) as f64,
                    rng.random_range(-MAX_SHIFT..=MAX_SHIFT) as f64,
                )
            } else {
                (0.0, 0.0)
            };
            let image = Tensor::from_fn([h, w, 3], |i| {
                let (row, col, ch) = (i / (3 * w), (i / 3) % w, i % 3);
                let (u, v) = ((col as f64 + 0.5) / sx - du, (row as f64 + 0.5) / sy - dv);
                template_colour(&palette, pose, u, v)[ch] * light * tint[ch]
            });
            let data = image
                .into_data()
                .into_iter()
                .map(|v| {
                    let n = if cfg.noise > 0.0 { pixel_noise.sample(&mut rng) } else { 0.0 };
                    // stored as f32 on disk; keep memory and disk identical
                    (v + n) as f32 as f64
                })
                .collect();
            images.push(Tensor::new([h, w, 3], data)?);

            let sample_id = format!("{id:04}_{j:03}");
            let mut kp = KeypointRecord::new(sample_id.clone());
            for (name, x, y) in template_keypoints(pose) {
                let jx = rng.random_range(-1.0..=1.0) * cfg.noise;
                let jy = rng.random_range(-1.0..=1.0) * cfg.noise;
                kp = kp.with(name, (x + du) * sx + jx, (y + dv) * sy + jy, 1.0);
            }
            keypoints.push(Some(kp));
            poses.push(pose);

            let split = if id < train_ids {
                Split::Train
            } else if j < cfg.modes.min(cfg.per_id - 1) {
                Split::Query
            } else {
                Split::Gallery
            };
            records.push(Record {
                path: format!("payloads/{sample_id}.vbr"),
                sample_id,
                identity: id as i64,
                camera: camera as i64,
                split,
            });
        }
    }
    let manifest = Manifest::new(records, "")?;
    Ok(SynthOutput {
        dataset: Dataset {
            manifest,
            images,
            keypoints,
        },
        poses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::orientation::{assign_subset, orientation_angle};

    fn cfg(ids: usize, per_id: usize, modes: usize, noise: f64) -> SynthConfig {
        SynthConfig {
            ids,
            per_id,
            modes,
            noise,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_single_mode_samples_are_identical() {
        let out = generate_synthetic(&cfg(4, 2, 1, 0.0)).unwrap();
        assert_eq!(out.dataset.images[0], out.dataset.images[1]);
        assert_ne!(out.dataset.images[0], out.dataset.images[2]);
    }

    #[test]
    fn orientation_round_trip() {
        for noise in [0.0, 0.2, ROUND_TRIP_NOISE] {
            let out = generate_synthetic(&cfg(10, 9, 3, noise)).unwrap();
            for (kp, pose) in out.dataset.keypoints.iter().zip(&out.poses) {
                let theta = orientation_angle(kp.as_ref().unwrap(), 0.1).unwrap();
                assert_eq!(assign_subset(theta), *pose);
            }
        }
    }

    #[test]
    fn scaled_images_round_trip() {
        let c = SynthConfig {
            height: 64,
            width: 32,
            noise: 0.5,
            ..cfg(3, 3, 3, 0.5)
        };
        let out = generate_synthetic(&c).unwrap();
        assert_eq!(out.dataset.images[0].shape(), &[64, 32, 3]);
        for (kp, pose) in out.dataset.keypoints.iter().zip(&out.poses) {
            assert_eq!(assign_subset(orientation_angle(kp.as_ref().unwrap(), 0.1).unwrap()), *pose);
        }
    }

    #[test]
    fn splits_and_cameras() {
        let out = generate_synthetic(&cfg(6, 6, 3, 0.1)).unwrap();
        let m = &out.dataset.manifest;
        assert_eq!(m.identity_groups(Split::Train).len(), 3);
        assert_eq!(m.split(Split::Query).count(), 9);
        assert_eq!(m.split(Split::Gallery).count(), 9);
        assert!(m.records.iter().all(|r| r.camera == (r.sample_id.ends_with(['1', '3', '5']) as i64)));
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let a = generate_synthetic(&cfg(3, 3, 3, 0.1)).unwrap();
        let b = generate_synthetic(&cfg(3, 3, 3, 0.1)).unwrap();
        assert_eq!(a.dataset.images, b.dataset.images);
        let c = generate_synthetic(&SynthConfig { seed: 1, ..cfg(3, 3, 3, 0.1) }).unwrap();
        assert_ne!(a.dataset.images, c.dataset.images);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate_synthetic(&cfg(3, 3, 0, 0.1)).is_err());
        assert!(generate_synthetic(&SynthConfig { height: 20, ..cfg(3, 3, 1, 0.1) }).is_err());
    }
}
