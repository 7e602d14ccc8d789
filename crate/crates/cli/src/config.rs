//! Run configuration: `key = value` files with `#` comments, plus
//! `--key value` command-line overrides.
//!
//! Every key has a documented default; unknown keys are rejected so typos
//! fail loudly. `parse` then `serialize` round-trips the full documented key
//! set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mfn_core::models::{Architecture, BlockOrder};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub architecture: Architecture,
    pub k: usize,
    pub width_scale: usize,
    pub block_order: BlockOrder,
    pub modality: String,
    pub branches: usize,
    pub patch_size: usize,
    pub train_stride: usize,
    pub test_stride: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_milestones: Vec<usize>,
    pub encoder_lr_multiplier: f64,
    pub class_balance: bool,
    pub clutter_index: Option<usize>,
    pub seed: u64,
    pub size: usize,
    pub n_tiles: usize,
    pub fold: Option<usize>,
    pub erosion_radius: usize,
    pub tiles: PathBuf,
    pub checkpoint: PathBuf,
    pub base_checkpoints: Vec<PathBuf>,
    pub log: PathBuf,
    pub output: PathBuf,
    pub report: Option<PathBuf>,
    pub tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::SegNet,
            k: 6,
            width_scale: 1,
            block_order: BlockOrder::ConvBnRelu,
            modality: "optical".into(),
            branches: 3,
            patch_size: 128,
            train_stride: 64,
            test_stride: 32,
            epochs: 20,
            batch_size: 10,
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_milestones: vec![5, 10, 15],
            encoder_lr_multiplier: 1.0,
            class_balance: true,
            clutter_index: Some(5),
            seed: 0,
            size: 256,
            n_tiles: 8,
            fold: None,
            erosion_radius: 3,
            tiles: PathBuf::from("tiles"),
            checkpoint: PathBuf::from("model.mfn"),
            base_checkpoints: Vec::new(),
            log: PathBuf::from("train.log"),
            output: PathBuf::from("predictions"),
            report: None,
            tolerance: 1e-3,
        }
    }
}

/// The documented key set, in canonical serialization order.
pub const KEYS: &[&str] = &[
    "architecture",
    "k",
    "width_scale",
    "block_order",
    "modality",
    "branches",
    "patch_size",
    "train_stride",
    "test_stride",
    "epochs",
    "batch_size",
    "base_lr",
    "momentum",
    "weight_decay",
    "lr_milestones",
    "encoder_lr_multiplier",
    "class_balance",
    "clutter_index",
    "seed",
    "size",
    "n_tiles",
    "fold",
    "erosion_radius",
    "tiles",
    "checkpoint",
    "base_checkpoints",
    "log",
    "output",
    "report",
    "tolerance",
];

fn bad(key: &str, value: &str, want: &str) -> CliError {
    CliError::Config(format!("key '{key}': cannot parse '{value}' as {want}"))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("config line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "architecture" => {
                self.architecture = Architecture::parse(value).ok_or_else(|| {
                    bad(key, value, "one of segnet|segnet_ms|fusenet_sum|fusenet_virtual|residual_correction")
                })?;
            }
            "k" => self.k = parse_usize(key, value)?,
            "width_scale" => {
                self.width_scale = parse_usize(key, value)?;
                if self.width_scale == 0 {
                    return Err(CliError::Config("width_scale must be >= 1".into()));
                }
            }
            "block_order" => {
                self.block_order = BlockOrder::parse(value)
                    .ok_or_else(|| bad(key, value, "conv_bn_relu|conv_relu_bn"))?;
            }
            "modality" => {
                if value != "optical" && value != "composite" {
                    return Err(bad(key, value, "optical|composite"));
                }
                self.modality = value.to_string();
            }
            "branches" => {
                self.branches = parse_usize(key, value)?;
                if self.branches > 3 {
                    return Err(CliError::Config("branches must be 0..=3".into()));
                }
            }
            "patch_size" => self.patch_size = parse_usize(key, value)?,
            "train_stride" => self.train_stride = parse_usize(key, value)?,
            "test_stride" => self.test_stride = parse_usize(key, value)?,
            "epochs" => self.epochs = parse_usize(key, value)?,
            "batch_size" => self.batch_size = parse_usize(key, value)?,
            "base_lr" => self.base_lr = parse_f64(key, value)?,
            "momentum" => self.momentum = parse_f64(key, value)?,
            "weight_decay" => self.weight_decay = parse_f64(key, value)?,
            "lr_milestones" => {
                self.lr_milestones = if value.is_empty() || value == "none" {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|p| p.trim().parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad(key, value, "comma-separated epoch list"))?
                };
            }
            "encoder_lr_multiplier" => {
                self.encoder_lr_multiplier = parse_f64(key, value)?;
                if self.encoder_lr_multiplier <= 0.0 {
                    return Err(CliError::Config("encoder_lr_multiplier must be > 0".into()));
                }
            }
            "class_balance" => self.class_balance = parse_bool(key, value)?,
            "clutter_index" => {
                self.clutter_index = if value == "none" {
                    None
                } else {
                    Some(parse_usize(key, value)?)
                };
            }
            "seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| bad(key, value, "unsigned integer"))?;
            }
            "size" => self.size = parse_usize(key, value)?,
            "n_tiles" => self.n_tiles = parse_usize(key, value)?,
            "fold" => {
                self.fold = if value == "none" {
                    None
                } else {
                    let f = parse_usize(key, value)?;
                    if f > 2 {
                        return Err(CliError::Config("fold must be 0, 1, 2, or none".into()));
                    }
                    Some(f)
                };
            }
            "erosion_radius" => self.erosion_radius = parse_usize(key, value)?,
            "tiles" => self.tiles = PathBuf::from(value),
            "checkpoint" => self.checkpoint = PathBuf::from(value),
            "base_checkpoints" => {
                self.base_checkpoints = if value.is_empty() || value == "none" {
                    Vec::new()
                } else {
                    value.split(',').map(|p| PathBuf::from(p.trim())).collect()
                };
            }
            "log" => self.log = PathBuf::from(value),
            "output" => self.output = PathBuf::from(value),
            "report" => {
                self.report = if value == "none" {
                    None
                } else {
                    Some(PathBuf::from(value))
                };
            }
            "tolerance" => self.tolerance = parse_f64(key, value)?,
            other => {
                return Err(CliError::Config(format!(
                    "unknown config key '{other}' (documented keys: {})",
                    KEYS.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` rendering of the full documented key set.
    pub fn serialize(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("architecture", self.architecture.as_str().into());
        map.insert("k", self.k.to_string());
        map.insert("width_scale", self.width_scale.to_string());
        map.insert("block_order", self.block_order.as_str().into());
        map.insert("modality", self.modality.clone());
        map.insert("branches", self.branches.to_string());
        map.insert("patch_size", self.patch_size.to_string());
        map.insert("train_stride", self.train_stride.to_string());
        map.insert("test_stride", self.test_stride.to_string());
        map.insert("epochs", self.epochs.to_string());
        map.insert("batch_size", self.batch_size.to_string());
        map.insert("base_lr", self.base_lr.to_string());
        map.insert("momentum", self.momentum.to_string());
        map.insert("weight_decay", self.weight_decay.to_string());
        map.insert(
            "lr_milestones",
            if self.lr_milestones.is_empty() {
                "none".into()
            } else {
                self.lr_milestones
                    .iter()
                    .map(|m| m.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            },
        );
        map.insert(
            "encoder_lr_multiplier",
            self.encoder_lr_multiplier.to_string(),
        );
        map.insert("class_balance", self.class_balance.to_string());
        map.insert(
            "clutter_index",
            self.clutter_index
                .map(|c| c.to_string())
                .unwrap_or_else(|| "none".into()),
        );
        map.insert("seed", self.seed.to_string());
        map.insert("size", self.size.to_string());
        map.insert("n_tiles", self.n_tiles.to_string());
        map.insert(
            "fold",
            self.fold.map(|f| f.to_string()).unwrap_or_else(|| "none".into()),
        );
        map.insert("erosion_radius", self.erosion_radius.to_string());
        map.insert("tiles", self.tiles.display().to_string());
        map.insert("checkpoint", self.checkpoint.display().to_string());
        map.insert(
            "base_checkpoints",
            if self.base_checkpoints.is_empty() {
                "none".into()
            } else {
                self.base_checkpoints
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            },
        );
        map.insert("log", self.log.display().to_string());
        map.insert("output", self.output.display().to_string());
        map.insert(
            "report",
            self.report
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "none".into()),
        );
        map.insert("tolerance", self.tolerance.to_string());

        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", map[key]).expect("string write");
        }
        out
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize, CliError> {
    value
        .parse::<usize>()
        .map_err(|_| bad(key, value, "unsigned integer"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64, CliError> {
    let v = value
        .parse::<f64>()
        .map_err(|_| bad(key, value, "number"))?;
    if !v.is_finite() {
        return Err(bad(key, value, "finite number"));
    }
    Ok(v)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(bad(key, value, "true|false")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_training_protocol() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.base_lr, 0.01);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 0.0005);
        assert_eq!(cfg.batch_size, 10);
        assert_eq!(cfg.lr_milestones, vec![5, 10, 15]);
        assert_eq!(cfg.patch_size, 128);
    }

    #[test]
    fn parse_serialize_round_trip_is_identity() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "architecture = fusenet_virtual\nseed = 99\nbase_lr = 0.02\nfold = 1\n# comment\nclutter_index = none\n",
        )
        .unwrap();
        let text = cfg.serialize();
        let mut reparsed = RunConfig::default();
        reparsed.apply_text(&text).unwrap();
        assert_eq!(cfg, reparsed);
        assert_eq!(text, reparsed.serialize());
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("not_a_key = 3\n").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn serialization_covers_every_documented_key() {
        let text = RunConfig::default().serialize();
        for key in KEYS {
            assert!(
                text.lines().any(|l| l.starts_with(&format!("{key} = "))),
                "{key} missing"
            );
        }
        assert_eq!(text.lines().count(), KEYS.len());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("\n# full line comment\nseed = 4 # trailing comment\n\n").unwrap();
        assert_eq!(cfg.seed, 4);
    }
}
