//! Dataset manifests, keypoints, orientation subsets, P×K sampling and the
//! synthetic data generator.

mod keypoints;
mod manifest;
mod orientation;
mod payload;
mod sampler;
mod synth;

pub use keypoints::{
    load_keypoints, parse_keypoints, save_keypoints, Keypoint, KeypointName, KeypointRecord, DEFAULT_MIN_CONFIDENCE,
};
pub use manifest::{Manifest, Record, Split};
pub use orientation::{assign_subset, orientation_angle, partition_by_orientation, OrientationReport, Subset};
pub use payload::{decode_payload, encode_payload, mirror_width, read_payload, write_payload};
pub use sampler::{PkBatch, PkSampler};
pub use synth::{generate_synthetic, pose_of_mode, SynthConfig, SynthOutput, ROUND_TRIP_NOISE};

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const KEYPOINTS_FILE: &str = "keypoints.jsonl";

/// A manifest with its payloads loaded and keypoints aligned by row.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub images: Vec<Tensor>,
    pub keypoints: Vec<Option<KeypointRecord>>,
}

impl Dataset {
    /// Load a manifest and its payloads. Keypoints come from `keypoints` when
    /// given, else from `keypoints.jsonl` next to the manifest if present.
    pub fn load(manifest_path: &Path, keypoints: Option<&Path>) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let images = manifest
            .records
            .iter()
            .map(|r| read_payload(&manifest.payload_path(r)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = images.first() {
            if let Some((r, img)) = manifest.records.iter().zip(&images).find(|(_, i)| i.shape() != first.shape()) {
                return Err(Error::Data(format!(
                    "sample {} has dims {:?}, expected {:?}",
                    r.sample_id,
                    img.shape(),
                    first.shape()
                )));
            }
        }
        let sibling = manifest.root.join(KEYPOINTS_FILE);
        let kp_path = keypoints.map(Path::to_path_buf).or(sibling.exists().then_some(sibling));
        let mut by_id: HashMap<String, KeypointRecord> = match kp_path {
            Some(p) => load_keypoints(&p)?.into_iter().map(|k| (k.sample_id.clone(), k)).collect(),
            None => HashMap::new(),
        };
        let keypoints = manifest.records.iter().map(|r| by_id.remove(&r.sample_id)).collect();
        Ok(Dataset {
            manifest,
            images,
            keypoints,
        })
    }

    /// Write `manifest.csv`, payloads and (if any) `keypoints.jsonl` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (r, img) in self.manifest.records.iter().zip(&self.images) {
            let path = dir.join(&r.path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_payload(&path, img)?;
        }
        self.manifest.save(&dir.join(MANIFEST_FILE))?;
        let kps: Vec<KeypointRecord> = self.keypoints.iter().flatten().cloned().collect();
        if !kps.is_empty() {
            save_keypoints(&dir.join(KEYPOINTS_FILE), &kps)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(Tensor::shape)
    }

    pub fn has_keypoints(&self) -> bool {
        self.keypoints.iter().any(Option::is_some)
    }

    /// Stack the images of `rows` into an `[N, h, w, c]` batch.
    pub fn batch(&self, rows: &[usize]) -> Result<Tensor> {
        let items: Vec<Tensor> = rows.iter().map(|&r| self.images[r].clone()).collect();
        Tensor::stack(&items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let out = generate_synthetic(&SynthConfig {
            ids: 4,
            per_id: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.dataset.save(dir.path()).unwrap();
        let back = Dataset::load(&dir.path().join(MANIFEST_FILE), None).unwrap();
        assert_eq!(back.images, out.dataset.images);
        assert_eq!(back.manifest.records, out.dataset.manifest.records);
        // keypoints go through JSON text; f64 formatting round-trips exactly
        assert_eq!(back.keypoints, out.dataset.keypoints);
        assert_eq!(back.batch(&[0, 2]).unwrap().shape(), &[2, 32, 16, 3]);
    }
}
