//! Body keypoints, one JSON object per line:
//! `{"sample_id":"s0001","neck":[x,y,conf],"right_shoulder":[x,y,conf],...}`.
//! Coordinates are image pixels with the origin at the top-left corner.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Default confidence a keypoint needs to count as present.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeypointName {
    Neck,
    RightShoulder,
    LeftShoulder,
    RightHip,
    LeftHip,
    RightAnkle,
    LeftAnkle,
}

impl KeypointName {
    pub const ALL: [KeypointName; 7] = [
        KeypointName::Neck,
        KeypointName::RightShoulder,
        KeypointName::LeftShoulder,
        KeypointName::RightHip,
        KeypointName::LeftHip,
        KeypointName::RightAnkle,
        KeypointName::LeftAnkle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KeypointName::Neck => "neck",
            KeypointName::RightShoulder => "right_shoulder",
            KeypointName::LeftShoulder => "left_shoulder",
            KeypointName::RightHip => "right_hip",
            KeypointName::LeftHip => "left_hip",
            KeypointName::RightAnkle => "right_ankle",
            KeypointName::LeftAnkle => "left_ankle",
        }
    }

    pub fn parse(s: &str) -> Option<KeypointName> {
        KeypointName::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeypointRecord {
    pub sample_id: String,
    pub points: BTreeMap<KeypointName, Keypoint>,
}

impl KeypointRecord {
    pub fn new(sample_id: impl Into<String>) -> Self {
        KeypointRecord {
            sample_id: sample_id.into(),
            points: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: KeypointName, x: f64, y: f64, confidence: f64) -> Self {
        self.points.insert(name, Keypoint { x, y, confidence });
        self
    }

    pub fn get(&self, name: KeypointName) -> Option<Keypoint> {
        self.points.get(&name).copied()
    }

    /// The keypoint if present with confidence at least `min_confidence`.
    pub fn confident(&self, name: KeypointName, min_confidence: f64) -> Option<Keypoint> {
        self.get(name).filter(|k| k.confidence >= min_confidence)
    }

    pub fn to_json_line(&self) -> String {
        let mut obj = Map::new();
        obj.insert("sample_id".into(), Value::from(self.sample_id.clone()));
        for (name, k) in &self.points {
            obj.insert(name.as_str().into(), Value::from(vec![k.x, k.y, k.confidence]));
        }
        Value::Object(obj).to_string()
    }

    pub fn from_json_line(line: &str) -> std::result::Result<Self, String> {
        let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let Value::Object(obj) = value else {
            return Err("expected a JSON object".into());
        };
        let sample_id = match obj.get("sample_id") {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err("missing sample_id".into()),
        };
        let mut rec = KeypointRecord::new(sample_id);
        for (key, v) in &obj {
            if key == "sample_id" {
                continue;
            }
            // unknown keys (extra joints from a pose estimator) are ignored
            let Some(name) = KeypointName::parse(key) else { continue };
            if v.is_null() {
                continue;
            }
            let triple: Vec<f64> = v
                .as_array()
                .filter(|a| a.len() == 3)
                .and_then(|a| a.iter().map(Value::as_f64).collect())
                .ok_or_else(|| format!("{key}: expected [x, y, confidence]"))?;
            let [x, y, c] = [triple[0], triple[1], triple[2]];
            if !x.is_finite() || !y.is_finite() {
                return Err(format!("{key}: coordinates must be finite"));
            }
            if !(0.0..=1.0).contains(&c) {
                return Err(format!("{key}: confidence {c} outside [0, 1]"));
            }
            rec = rec.with(name, x, y, c);
        }
        Ok(rec)
    }
}

/// Parse a keypoint file. Blank lines are skipped; sample ids must be unique.
pub fn parse_keypoints(text: &str, path: &Path) -> Result<Vec<KeypointRecord>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = KeypointRecord::from_json_line(line)
            .map_err(|m| Error::format(path, format!("line {}: {m}", i + 1)))?;
        if !seen.insert(rec.sample_id.clone()) {
            return Err(Error::format(path, format!("line {}: duplicate sample_id {}", i + 1, rec.sample_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_keypoints(path: &Path) -> Result<Vec<KeypointRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keypoints(&text, path)
}

pub fn save_keypoints(path: &Path, records: &[KeypointRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_json_line());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let rec = KeypointRecord::new("a7")
            .with(KeypointName::Neck, 8.0, 6.25, 0.9)
            .with(KeypointName::LeftAnkle, 3.5, 30.0, 0.05);
        let back = KeypointRecord::from_json_line(&rec.to_json_line()).unwrap();
        assert_eq!(back, rec);
        assert!(back.confident(KeypointName::LeftAnkle, 0.1).is_none());
        assert!(back.confident(KeypointName::Neck, 0.1).is_some());
    }

    #[test]
    fn rejects_bad_lines() {
        let p = Path::new("kp.jsonl");
        assert!(parse_keypoints(r#"{"neck":[1,2,0.5]}"#, p).is_err());
        assert!(parse_keypoints(r#"{"sample_id":"x","neck":[1,2]}"#, p).is_err());
        assert!(parse_keypoints(r#"{"sample_id":"x","neck":[1,2,1.5]}"#, p).is_err());
        let dup = "{\"sample_id\":\"x\"}\n{\"sample_id\":\"x\"}\n";
        let err = parse_keypoints(dup, p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn ignores_unknown_joints() {
        let recs = parse_keypoints(r#"{"sample_id":"x","nose":[1,2,0.9],"neck":null}"#, Path::new("k")).unwrap();
        assert!(recs[0].points.is_empty());
    }
}
