//! Binary checkpoints.
//!
//! ```text
//! "VBCK"  version:u32
//! config: u32 byte length, UTF-8 canonical config text
//! epoch:u32  adam_step:u64
//! params:  u32 count, then per entry {name, rank:u32, dims:u32×rank, f32×numel}
//! moments: same layout; names are "m/<param>" and "v/<param>"
//! ```
//! Names are a u32 byte length followed by UTF-8. All integers and floats are
//! little-endian. Values are stored as f32.

use std::fs;
use std::path::Path;

use crate::branching::BranchedModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::adam::Adam;
use super::config::TrainConfig;

const MAGIC: &[u8; 4] = b"VBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config_text: String,
    pub epoch: u32,
    pub adam_step: u64,
    pub params: Vec<(String, Tensor)>,
    pub moments: Vec<(String, Tensor)>,
}

/// Round every value to the nearest f32, as a checkpoint stores it.
pub fn quantize_f32(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v as f32 as f64).collect()).unwrap()
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensors(out: &mut Vec<u8>, entries: &[(String, Tensor)]) {
    put_u32(out, entries.len() as u32);
    for (name, t) in entries {
        put_str(out, name);
        put_u32(out, t.rank() as u32);
        for &d in t.shape() {
            put_u32(out, d as u32);
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }

    fn tensors(&mut self) -> std::result::Result<Vec<(String, Tensor)>, String> {
        let count = self.u32()?;
        (0..count)
            .map(|_| {
                let name = self.string()?;
                let rank = self.u32()? as usize;
                let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
                let n: usize = shape.iter().product();
                let raw = self.take(4 * n)?;
                let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
                let t = Tensor::new(shape, data).map_err(|e| format!("{name}: {e}"))?;
                Ok((name, t))
            })
            .collect()
    }
}

impl Checkpoint {
    pub fn capture(model: &BranchedModel, cfg: &TrainConfig, adam: &Adam, epoch: u32) -> Self {
        let params = model.params().iter().map(|p| (p.name.clone(), quantize_f32(&p.value))).collect();
        let mut moments = Vec::new();
        for (prefix, store) in [("m", &adam.m), ("v", &adam.v)] {
            for (p, t) in model.params().iter().zip(store) {
                if let Some(t) = t {
                    moments.push((format!("{prefix}/{}", p.name), quantize_f32(t)));
                }
            }
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_text: cfg.to_text(),
            epoch,
            adam_step: adam.step,
            params,
            moments,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.version);
        put_str(&mut out, &self.config_text);
        put_u32(&mut out, self.epoch);
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        put_tensors(&mut out, &self.params);
        put_tensors(&mut out, &self.moments);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::format(path, "not a VBCK checkpoint"));
        }
        let mut r = Reader { bytes, pos: 4 };
        let parsed = (|| {
            let version = r.u32()?;
            if version != CHECKPOINT_VERSION {
                return Err(format!("unsupported version {version}"));
            }
            let ck = Checkpoint {
                version,
                config_text: r.string()?,
                epoch: r.u32()?,
                adam_step: r.u64()?,
                params: r.tensors()?,
                moments: r.tensors()?,
            };
            if r.pos != bytes.len() {
                return Err(format!("{} trailing bytes", bytes.len() - r.pos));
            }
            Ok(ck)
        })();
        parsed.map_err(|m| Error::format(path, m))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn config(&self) -> Result<TrainConfig> {
        TrainConfig::from_text(&self.config_text)
    }

    /// Rebuild the model the checkpoint was taken from.
    pub fn model(&self) -> Result<BranchedModel> {
        let cfg = self.config()?;
        let (b, delta) = cfg.effective_branches();
        let plan = crate::branching::BranchPlan::new(&cfg.model, b, delta)?;
        let mut model = BranchedModel::new(cfg.model.clone(), plan, cfg.seed)?;
        model.load_values(&self.params)?;
        Ok(model)
    }

    /// Rebuild the optimizer state.
    pub fn adam(&self, model: &BranchedModel) -> Result<Adam> {
        let cfg = self.config()?;
        let mut adam = Adam::new(model.params(), cfg.beta1, cfg.beta2, cfg.eps_adam);
        adam.step = self.adam_step;
        for (name, t) in &self.moments {
            let (store, pname) = match name.split_once('/') {
                Some(("m", p)) => (&mut adam.m, p),
                Some(("v", p)) => (&mut adam.v, p),
                _ => return Err(Error::Model(format!("unexpected moment entry {name}"))),
            };
            let i = model
                .param_index(pname)
                .ok_or_else(|| Error::Model(format!("moment for unknown parameter {pname}")))?;
            match &mut store[i] {
                Some(slot) if slot.shape() == t.shape() => *slot = t.clone(),
                _ => return Err(Error::Model(format!("moment {name} does not fit its parameter"))),
            }
        }
        Ok(adam)
    }
}
