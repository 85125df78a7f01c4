//! Training configuration and the config-file loader.
//!
//! Config files are either a JSON object or flat `key = value` lines with `#`
//! comments. Dotted keys reach nested fields (`loss.alpha3 = 0.1`). Values are
//! read as JSON when they parse as JSON and as bare strings otherwise.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::loss::LossWeights;

/// Settings shared by embedder and restorer training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_interval_epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub seed: u64,
    pub loss: LossWeights,
    /// `"desk"` or `"paper"`.
    pub preset: String,
    /// Stop after this many optimizer steps (0: no limit).
    pub max_steps: usize,
    /// Train on only the first this-many pairs of the patch index (0: all).
    pub max_pairs: usize,
    /// Random quarter-turn rotations of each sample.
    pub augment: bool,
    /// Checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Embedder training also sees clear images under the `clear` label.
    pub include_clear: bool,
    /// Checkpoint-format file with feature-extractor weights (empty: seeded surrogate).
    pub feature_weights: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::restorer()
    }
}

impl TrainConfig {
    pub fn restorer() -> Self {
        Self {
            epochs: 120,
            initial_lr: 2e-4,
            lr_decay_factor: 0.5,
            lr_decay_interval_epochs: 20,
            batch_size: 4,
            patch_size: 256,
            patch_stride: 200,
            seed: 0,
            loss: LossWeights::default(),
            preset: "desk".into(),
            max_steps: 0,
            max_pairs: 0,
            augment: true,
            checkpoint_every: 0,
            include_clear: true,
            feature_weights: String::new(),
        }
    }

    pub fn embedder() -> Self {
        Self {
            epochs: 200,
            initial_lr: 1e-4,
            lr_decay_interval_epochs: 50,
            batch_size: 256,
            ..Self::restorer()
        }
    }

    /// Short embedder schedule for small synthetic sets.
    pub fn embedder_desk() -> Self {
        Self {
            epochs: 30,
            initial_lr: 1e-3,
            lr_decay_interval_epochs: 10,
            batch_size: 32,
            ..Self::embedder()
        }
    }

    /// Embedder schedule matching a model preset.
    pub fn embedder_for(preset: &str) -> Self {
        match preset {
            "paper" => Self {
                preset: "paper".into(),
                ..Self::embedder()
            },
            _ => Self::embedder_desk(),
        }
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = epoch / self.lr_decay_interval_epochs.max(1);
        self.initial_lr * self.lr_decay_factor.powi(k as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.patch_size == 0 || self.patch_stride == 0 {
            return bad("patch_size and patch_stride must be positive");
        }
        if !(self.initial_lr > 0.0) {
            return bad("initial_lr must be positive");
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Parses config text into a JSON object.
pub fn parse_config_text(text: &str) -> Result<Map<String, Value>> {
    if text.trim_start().starts_with('{') {
        return match serde_json::from_str(text)? {
            Value::Object(m) => Ok(m),
            _ => Err(Error::Config("config JSON must be an object".into())),
        };
    }
    let mut root = Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        let mut node = &mut root;
        for part in &path[..path.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("line {}: '{part}' is not a section", i + 1)))?;
        }
        node.insert(path[path.len() - 1].to_string(), parse_value(value.trim()));
    }
    Ok(root)
}

fn merge(base: &mut Value, over: Map<String, Value>, prefix: &str) -> Result<()> {
    let Value::Object(obj) = base else {
        return Err(Error::Config(format!("'{prefix}' is not a section")));
    };
    for (k, v) in over {
        let full = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (obj.get_mut(&k), v) {
            (None, _) => return Err(Error::Config(format!("unknown key '{full}'"))),
            (Some(slot @ Value::Object(_)), Value::Object(m)) => merge(slot, m, &full)?,
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

/// Applies the keys in `over` on top of `base`; unknown keys are errors.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, over: Map<String, Value>) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    merge(&mut v, over, "")?;
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}

/// Reads a config file and overlays it on `base`.
pub fn load_config<T: Serialize + DeserializeOwned>(path: impl AsRef<Path>, base: &T) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map = parse_config_text(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    overlay(base, map)
}
