use std::fmt;
use std::str::FromStr;

use crate::branching::ModelConfig;
use crate::config::FlatConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Baseline,
    Landmark,
    Orientation,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Scheme::Baseline),
            "landmark" => Ok(Scheme::Landmark),
            "orientation" => Ok(Scheme::Orientation),
            _ => Err(Error::Param(format!("unknown scheme '{s}' (baseline|landmark|orientation)"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Baseline => "baseline",
            Scheme::Landmark => "landmark",
            Scheme::Orientation => "orientation",
        })
    }
}

/// Everything that determines a training run besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub b: usize,
    pub delta: f64,
    pub p: usize,
    pub k: usize,
    pub margin: f64,
    pub lambda: f64,
    pub sigma_h: f64,
    pub lr0: f64,
    pub t0: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
    /// Keypoints below this confidence count as missing.
    pub min_confidence: f64,
    /// Swap the front and back orientation labels.
    pub orient_reverse: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scheme: Scheme::Baseline,
            b: 1,
            delta: 0.5,
            p: 6,
            k: 3,
            margin: 0.2,
            lambda: 0.2,
            sigma_h: 1.5,
            lr0: 3e-4,
            t0: 50,
            epochs: 150,
            steps_per_epoch: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 0,
            min_confidence: 0.1,
            orient_reverse: false,
            model: ModelConfig::default(),
        }
    }
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(cfg: &FlatConfig, key: &str) -> Result<Option<Vec<usize>>> {
    let Some(e) = cfg.get(key) else { return Ok(None) };
    e.value
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(Some)
        .map_err(|_| Error::config(e.line, format!("{key} must be a comma-separated list of integers")))
}

impl TrainConfig {
    /// Keys understood by [`from_flat`](Self::from_flat).
    pub const KEYS: &'static [&'static str] = &[
        "b",
        "beta1",
        "beta2",
        "block_channels",
        "bn_epsilon",
        "bn_momentum",
        "delta",
        "embed_dim",
        "epochs",
        "eps_adam",
        "head_hidden",
        "input",
        "k",
        "lambda",
        "lr0",
        "margin",
        "min_confidence",
        "orient_reverse",
        "p",
        "scheme",
        "seed",
        "sigma_h",
        "stem_channels",
        "stem_strides",
        "steps_per_epoch",
        "t0",
    ];

    /// Defaults overridden by whichever known keys `cfg` sets. Unknown keys
    /// are left for the caller to judge.
    pub fn from_flat(cfg: &FlatConfig) -> Result<Self> {
        let mut c = TrainConfig::default();
        macro_rules! take {
            ($field:expr, $key:literal) => {
                if let Some(v) = cfg.parse_value($key)? {
                    $field = v;
                }
            };
        }
        if let Some(e) = cfg.get("scheme") {
            c.scheme = e.value.parse().map_err(|err: Error| Error::config(e.line, err.to_string()))?;
        }
        take!(c.b, "b");
        take!(c.delta, "delta");
        take!(c.p, "p");
        take!(c.k, "k");
        take!(c.margin, "margin");
        take!(c.lambda, "lambda");
        take!(c.sigma_h, "sigma_h");
        take!(c.lr0, "lr0");
        take!(c.t0, "t0");
        take!(c.epochs, "epochs");
        take!(c.steps_per_epoch, "steps_per_epoch");
        take!(c.beta1, "beta1");
        take!(c.beta2, "beta2");
        take!(c.eps_adam, "eps_adam");
        take!(c.seed, "seed");
        take!(c.min_confidence, "min_confidence");
        take!(c.orient_reverse, "orient_reverse");
        take!(c.model.head_hidden, "head_hidden");
        take!(c.model.embed_dim, "embed_dim");
        take!(c.model.bn.epsilon, "bn_epsilon");
        take!(c.model.bn.momentum, "bn_momentum");
        if let Some(v) = parse_list(cfg, "stem_channels")? {
            c.model.stem_channels = v;
        }
        if let Some(v) = parse_list(cfg, "stem_strides")? {
            c.model.stem_strides = v;
        }
        if let Some(v) = parse_list(cfg, "block_channels")? {
            c.model.block_channels = v;
        }
        if let Some(e) = cfg.get("input") {
            let dims: Vec<usize> = e.value.split('x').filter_map(|s| s.trim().parse().ok()).collect();
            if dims.len() != 3 {
                return Err(Error::config(e.line, "input must look like HxWxC"));
            }
            (c.model.in_height, c.model.in_width, c.model.in_channels) = (dims[0], dims[1], dims[2]);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_flat(&self) -> FlatConfig {
        let m = &self.model;
        let mut f = FlatConfig::default();
        f.set("scheme", self.scheme);
        f.set("b", self.b);
        f.set("delta", self.delta);
        f.set("p", self.p);
        f.set("k", self.k);
        f.set("margin", self.margin);
        f.set("lambda", self.lambda);
        f.set("sigma_h", self.sigma_h);
        f.set("lr0", self.lr0);
        f.set("t0", self.t0);
        f.set("epochs", self.epochs);
        f.set("steps_per_epoch", self.steps_per_epoch);
        f.set("beta1", self.beta1);
        f.set("beta2", self.beta2);
        f.set("eps_adam", self.eps_adam);
        f.set("seed", self.seed);
        f.set("min_confidence", self.min_confidence);
        f.set("orient_reverse", self.orient_reverse);
        f.set("input", format!("{}x{}x{}", m.in_height, m.in_width, m.in_channels));
        f.set("stem_channels", list(&m.stem_channels));
        f.set("stem_strides", list(&m.stem_strides));
        f.set("block_channels", list(&m.block_channels));
        f.set("head_hidden", m.head_hidden);
        f.set("embed_dim", m.embed_dim);
        f.set("bn_epsilon", m.bn.epsilon);
        f.set("bn_momentum", m.bn.momentum);
        f
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.to_flat().to_text()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_flat(&FlatConfig::parse(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(None, m));
        if self.b == 0 {
            return fail("b must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return fail("delta must lie in [0, 1]");
        }
        if self.p < 2 || self.k < 2 {
            return fail("batch-hard mining needs p >= 2 and k >= 2");
        }
        if !(self.margin >= 0.0 && self.lambda >= 0.0 && self.lr0 >= 0.0) {
            return fail("margin, lambda and lr0 must be >= 0");
        }
        if !(self.sigma_h > 0.0 && self.eps_adam > 0.0) {
            return fail("sigma_h and eps_adam must be > 0");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if self.t0 == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return fail("t0, epochs and steps_per_epoch must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return fail("min_confidence must lie in [0, 1]");
        }
        if self.scheme == Scheme::Orientation && self.b < 3 {
            return fail("the orientation scheme needs b >= 3 (one branch per subset)");
        }
        self.model.validate().map_err(|e| Error::config(None, e.to_string()))?;
        for (id, d) in self.model.branched_layers() {
            if d < self.b {
                return Err(Error::config(None, format!("layer {id} has {d} neurons, fewer than b = {}", self.b)));
            }
        }
        Ok(())
    }

    /// Branch count actually built: the baseline scheme always uses one.
    pub fn effective_branches(&self) -> (usize, f64) {
        match self.scheme {
            Scheme::Baseline => (1, 1.0),
            _ => (self.b, self.delta),
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.scheme = Scheme::Landmark;
        c.b = 3;
        c.delta = 0.25;
        c.lr0 = 1e-3;
        c.model.block_channels = vec![8, 12];
        let text = c.to_text();
        assert_eq!(TrainConfig::from_text(&text).unwrap(), c);
        assert_eq!(TrainConfig::from_text(&text).unwrap().to_text(), text);
        assert!(text.lines().collect::<Vec<_>>().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bad_values_report_lines() {
        let e = TrainConfig::from_text("b = 2\nscheme = fancy\n").unwrap_err();
        assert!(e.to_string().starts_with("config error at line 2"), "{e}");
        let e = TrainConfig::from_text("input = 32x16\n").unwrap_err();
        assert!(e.to_string().starts_with("config error at line 1"), "{e}");
        assert!(TrainConfig::from_text("scheme = orientation\nb = 2\n").is_err());
        assert!(TrainConfig::from_text("k = 1\n").is_err());
    }

    #[test]
    fn keys_cover_flat_form() {
        let f = TrainConfig::default().to_flat();
        let keys: Vec<&str> = f.keys().collect();
        assert_eq!(keys, TrainConfig::KEYS);
    }
}
