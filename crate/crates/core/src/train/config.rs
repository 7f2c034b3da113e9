use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::EvalConfig;
use crate::unet::{parse, UNetConfig};

use super::adam::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    L1,
    /// L1 plus half the L1 of the forward-difference gradients.
    L1Grad,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "l1" => Ok(LossKind::L1),
            "l1_grad" => Ok(LossKind::L1Grad),
            other => Err(Error::Configuration(format!("unknown loss `{other}` (expected l1 or l1_grad)"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L1 => "l1",
            LossKind::L1Grad => "l1_grad",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 4,
            epochs: 30,
            seed: 0,
            loss: LossKind::L1Grad,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(Error::Configuration(format!("train.lr must be positive, got {}", a.lr)));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Configuration("train.beta1 and train.beta2 must lie in [0, 1)".into()));
        }
        if !(a.eps > 0.0) {
            return Err(Error::Configuration("train.adam_eps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Configuration("train.batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Everything except `epochs`, which may grow when resuming.
    pub fn same_trajectory(&self, other: &TrainConfig) -> bool {
        self.adam == other.adam && self.batch_size == other.batch_size && self.seed == other.seed && self.loss == other.loss
    }

    fn entries(&self) -> Vec<(String, String)> {
        [
            ("lr", self.adam.lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("loss", self.loss.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("train.{k}"), v))
        .collect()
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train.lr" => self.adam.lr = parse(key, value)?,
            "train.beta1" => self.adam.beta1 = parse(key, value)?,
            "train.beta2" => self.adam.beta2 = parse(key, value)?,
            "train.adam_eps" => self.adam.eps = parse(key, value)?,
            "train.batch_size" => self.batch_size = parse(key, value)?,
            "train.epochs" => self.epochs = parse(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            "train.loss" => self.loss = value.parse()?,
            _ => return Err(Error::Configuration(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in parse_entries(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A full run description: `model.*`, `train.*`, `data.*` and `eval.*` keys.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: UNetConfig,
    pub train: TrainConfig,
    /// Dataset root holding `train/` and `test/`.
    pub data_root: Option<PathBuf>,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: UNetConfig::default(),
            train: TrainConfig::default(),
            data_root: None,
            eval: EvalConfig::default(),
        }
    }
}

/// `key = value` pairs from config text. `#` starts a comment line.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Configuration(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

/// Replaces or appends each override, keeping first-seen key order.
pub fn apply_overrides(entries: &mut Vec<(String, String)>, overrides: &[(String, String)]) {
    for (k, v) in overrides {
        match entries.iter_mut().find(|(e, _)| e == k) {
            Some(slot) => slot.1 = v.clone(),
            None => entries.push((k.clone(), v.clone())),
        }
    }
}

impl RunConfig {
    pub fn from_entries(entries: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut model = Vec::new();
        for (i, (k, v)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(e, _)| e == k) {
                return Err(Error::Configuration(format!("duplicate key `{k}`")));
            }
            match k.split_once('.').map(|s| s.0) {
                Some("model") => model.push((k.as_str(), v.as_str())),
                Some("train") => cfg.train.set(k, v)?,
                Some("data") if k == "data.root" => cfg.data_root = Some(PathBuf::from(v)),
                Some("eval") => match k.as_str() {
                    "eval.max_depth" => cfg.eval.max_depth = parse(k, v)?,
                    "eval.dbe_threshold" => cfg.eval.boundary.dbe_threshold = parse(k, v)?,
                    "eval.dbe_cap" => cfg.eval.boundary.dbe_cap = parse(k, v)?,
                    "eval.f1_tolerance" => cfg.eval.boundary.f1_tolerance = parse(k, v)?,
                    _ => return Err(Error::Configuration(format!("unknown key `{k}`"))),
                },
                _ => return Err(Error::Configuration(format!("unknown key `{k}`"))),
            }
        }
        cfg.model = UNetConfig::from_entries(model)?;
        cfg.train.validate()?;
        if !(cfg.eval.max_depth > 0.0) {
            return Err(Error::Configuration("eval.max_depth must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_entries(&parse_entries(text)?)
    }

    /// Reads a config file and applies `overrides` on top.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = parse_entries(&text).map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))?;
        apply_overrides(&mut entries, overrides);
        Self::from_entries(&entries)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.model.to_text();
        s.push_str(&self.train.to_text());
        if let Some(root) = &self.data_root {
            s.push_str(&format!("data.root = {}\n", root.display()));
        }
        let b = &self.eval.boundary;
        s.push_str(&format!(
            "eval.max_depth = {}\neval.dbe_threshold = {}\neval.dbe_cap = {}\neval.f1_tolerance = {}\n",
            self.eval.max_depth, b.dbe_threshold, b.dbe_cap, b.f1_tolerance
        ));
        s
    }
}
