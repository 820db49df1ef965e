//! Run configuration: a TOML file with `[model]` and `[train]` sections.
//!
//! Each section may name a `preset`; its remaining keys override the
//! preset's values.  Unknown keys anywhere are errors.
//!
//! ```toml
//! [model]
//! preset = "toy"
//! synthesis = "weighted"
//!
//! [model.attention]
//! swap_patch = 3
//!
//! [train]
//! steps = 500
//! families = ["stripes", "checker"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::TextureFamily;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr_g: f32,
    pub lr_d: f32,
    pub beta1: f32,
    pub beta2: f32,
    /// Checkpoint and sample interval in steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Seed of the batch stream.
    pub seed: u64,
    /// Image manifest; procedural textures from `families` when absent.
    pub manifest: Option<PathBuf>,
    pub families: Vec<TextureFamily>,
    pub mask_min_ratio: f32,
    pub mask_max_ratio: f32,
    /// Held-out images scored after training.
    pub eval_images: usize,
    /// Perceptual extractor seed; derived from the model seed when absent.
    pub extractor_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr_g: 1e-4,
            lr_d: 4e-4,
            beta1: 0.5,
            beta2: 0.9,
            checkpoint_every: 500,
            seed: 0,
            manifest: None,
            families: vec![TextureFamily::Stripes, TextureFamily::Checker],
            mask_min_ratio: 0.10,
            mask_max_ratio: 0.40,
            eval_images: 16,
            extractor_seed: None,
        }
    }
}

impl TrainConfig {
    /// Batch size 16.
    pub fn full() -> Self {
        Self {
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "toy" | "default" => Some(Self::default()),
            "full" | "full-256" => Some(Self::full()),
            _ => None,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.steps == 0 {
            v.push("train.steps must be >= 1".into());
        }
        if self.batch_size == 0 {
            v.push("train.batch_size must be >= 1".into());
        }
        for (name, lr) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            // zero rates are allowed so a run can be frozen deliberately
            if !(lr.is_finite() && lr >= 0.0) {
                v.push(format!("train.{name} must be finite and >= 0, got {lr}"));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                v.push(format!("train.{name} must be in [0, 1), got {b}"));
            }
        }
        if self.manifest.is_none() && self.families.is_empty() {
            v.push("train.families must not be empty without a manifest".into());
        }
        if !(0.0 < self.mask_min_ratio && self.mask_min_ratio < self.mask_max_ratio && self.mask_max_ratio < 1.0) {
            v.push(format!(
                "mask ratios must satisfy 0 < min < max < 1, got {} and {}",
                self.mask_min_ratio, self.mask_max_ratio
            ));
        }
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(vec![msg.into()])
}

/// Overlays `over` onto `base`, descending into tables.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn section<T>(table: &mut toml::Table, name: &str, preset: impl Fn(&str) -> Option<T>, fallback: T) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let Some(raw) = table.remove(name) else {
        return Ok(fallback);
    };
    let toml::Value::Table(mut over) = raw else {
        return Err(cfg_err(format!("[{name}] must be a table")));
    };
    let base = match over.remove("preset") {
        Some(toml::Value::String(p)) => preset(&p).ok_or_else(|| cfg_err(format!("unknown {name} preset {p:?}")))?,
        Some(_) => return Err(cfg_err(format!("{name}.preset must be a string"))),
        None => fallback,
    };
    let mut value = toml::Value::try_from(&base).map_err(|e| cfg_err(format!("{name}: {e}")))?;
    merge(&mut value, toml::Value::Table(over));
    value.try_into().map_err(|e: toml::de::Error| cfg_err(format!("[{name}] {}", e.message())))
}

impl RunConfig {
    pub fn toy() -> Self {
        Self {
            model: ModelConfig::toy(),
            train: TrainConfig::default(),
        }
    }

    /// Parses TOML text; relative `train.manifest` paths resolve against
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| cfg_err(e.message().to_string()))?;
        let model = section(&mut table, "model", ModelConfig::preset, ModelConfig::toy())?;
        let mut train = section(&mut table, "train", TrainConfig::preset, TrainConfig::default())?;
        if let Some(key) = table.keys().next() {
            return Err(cfg_err(format!("unknown top-level key {key:?} (expected [model] or [train])")));
        }
        if let Some(m) = &train.manifest {
            if m.is_relative() {
                train.manifest = Some(base_dir.join(m));
            }
        }
        let cfg = Self { model, train };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = self.model.violations();
        v.extend(self.train.violations());
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}
