//! Flat `key = value` configuration with documented defaults.
//!
//! Resolution order is defaults, then the file, then command-line overrides.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::HeadKind;

#[derive(Clone, Debug, PartialEq)]
pub struct RpeConfig {
    pub enabled: bool,
    pub eps: f64,
    pub max_value: f64,
    /// Multiplier applied to the similarity matrix before it enters attention.
    pub scale: f64,
    /// Min-max rescale of the matrix to `[0, 1]`.
    pub normalize: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub optimizer_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub rpe: RpeConfig,
    pub softmax_axis: usize,
    pub head: HeadKind,
    pub augment: bool,
    pub rotation_degrees: f64,
    pub drop_last: bool,
    pub norm_mean: [f64; 3],
    pub norm_std: [f64; 3],
    // synthetic data
    pub classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub image_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            optimizer_eps: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 32,
            epochs: 50,
            embed_dim: 64,
            seed: 0,
            rpe: RpeConfig {
                enabled: true,
                eps: 1e-8,
                max_value: 1.0,
                scale: 1.0,
                normalize: false,
            },
            softmax_axis: 0,
            head: HeadKind::Rbi,
            augment: true,
            rotation_degrees: 15.0,
            drop_last: false,
            norm_mean: [0.485, 0.456, 0.406],
            norm_std: [0.229, 0.224, 0.225],
            classes: 8,
            per_class_train: 100,
            per_class_test: 50,
            image_size: 32,
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "lr",
    "optimizer_eps",
    "beta1",
    "beta2",
    "batch_size",
    "epochs",
    "embed_dim",
    "seed",
    "rpe_enabled",
    "rpe_eps",
    "rpe_max_value",
    "rpe_scale",
    "rpe_normalize",
    "softmax_axis",
    "head",
    "augment",
    "rotation_degrees",
    "drop_last",
    "norm_mean",
    "norm_std",
    "classes",
    "per_class_train",
    "per_class_test",
    "image_size",
];

fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<V, String> {
    value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("invalid boolean {value:?} for {key}")),
    }
}

fn parse_triple(key: &str, value: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("{key} needs three comma-separated values"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse_num(key, p)?;
    }
    Ok(out)
}

impl TrainConfig {
    /// Sets one key from its text form. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key {
            "lr" => self.lr = parse_num(key, value)?,
            "optimizer_eps" => self.optimizer_eps = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "embed_dim" => self.embed_dim = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "rpe_enabled" => self.rpe.enabled = parse_bool(key, value)?,
            "rpe_eps" => self.rpe.eps = parse_num(key, value)?,
            "rpe_max_value" => self.rpe.max_value = parse_num(key, value)?,
            "rpe_scale" => self.rpe.scale = parse_num(key, value)?,
            "rpe_normalize" => self.rpe.normalize = parse_bool(key, value)?,
            "softmax_axis" => self.softmax_axis = parse_num(key, value)?,
            "head" => {
                self.head = HeadKind::parse(value).ok_or_else(|| format!("head must be rbi or baseline, got {value:?}"))?
            }
            "augment" => self.augment = parse_bool(key, value)?,
            "rotation_degrees" => self.rotation_degrees = parse_num(key, value)?,
            "drop_last" => self.drop_last = parse_bool(key, value)?,
            "norm_mean" => self.norm_mean = parse_triple(key, value)?,
            "norm_std" => self.norm_std = parse_triple(key, value)?,
            "classes" => self.classes = parse_num(key, value)?,
            "per_class_train" => self.per_class_train = parse_num(key, value)?,
            "per_class_test" => self.per_class_test = parse_num(key, value)?,
            "image_size" => self.image_size = parse_num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let triple = |t: [f64; 3]| format!("{},{},{}", t[0], t[1], t[2]);
        Some(match key {
            "lr" => self.lr.to_string(),
            "optimizer_eps" => self.optimizer_eps.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "seed" => self.seed.to_string(),
            "rpe_enabled" => self.rpe.enabled.to_string(),
            "rpe_eps" => self.rpe.eps.to_string(),
            "rpe_max_value" => self.rpe.max_value.to_string(),
            "rpe_scale" => self.rpe.scale.to_string(),
            "rpe_normalize" => self.rpe.normalize.to_string(),
            "softmax_axis" => self.softmax_axis.to_string(),
            "head" => self.head.name().to_string(),
            "augment" => self.augment.to_string(),
            "rotation_degrees" => self.rotation_degrees.to_string(),
            "drop_last" => self.drop_last.to_string(),
            "norm_mean" => triple(self.norm_mean),
            "norm_std" => triple(self.norm_std),
            "classes" => self.classes.to_string(),
            "per_class_train" => self.per_class_train.to_string(),
            "per_class_test" => self.per_class_test.to_string(),
            "image_size" => self.image_size.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err("beta1 and beta2 must lie in (0, 1)".into());
        }
        if !(self.optimizer_eps > 0.0) || !(self.rpe.eps > 0.0) || !(self.rpe.max_value > 0.0) {
            return Err("optimizer_eps, rpe_eps and rpe_max_value must be positive".into());
        }
        if self.batch_size == 0 || self.embed_dim == 0 {
            return Err("batch_size and embed_dim must be positive".into());
        }
        if self.softmax_axis > 1 {
            return Err("softmax_axis must be 0 or 1".into());
        }
        if self.norm_std.iter().any(|&s| !(s > 0.0)) {
            return Err("norm_std entries must be positive".into());
        }
        Ok(())
    }

    /// Parses flat config text on top of the defaults.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            cfg.set(key.trim(), value).map_err(|msg| Error::Config { line: i + 1, msg })?;
        }
        Ok(cfg)
    }
}

impl fmt::Display for TrainConfig {
    /// The fully resolved configuration in file syntax.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for key in KEYS {
            writeln!(f, "{key} = {}", self.get(key).expect("listed key"))?;
        }
        Ok(())
    }
}

/// Defaults, then `path` (if any), then `overrides` in order.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::parse(&std::fs::read_to_string(p).map_err(Error::io(p))?)?,
        None => TrainConfig::default(),
    };
    for (key, value) in overrides {
        cfg.set(key, value).map_err(|msg| Error::Config { line: 0, msg })?;
    }
    cfg.validate().map_err(|msg| Error::Config { line: 0, msg })?;
    Ok(cfg)
}
