//! `mfn train`: build the configured architecture, train it on the tile
//! pack, write the per-epoch log and the final checkpoint.

use std::io::Write as _;

use mfn_core::data::TileTensors;
use mfn_core::init::rng_from_seed;
use mfn_core::models::{
    load_checkpoint, save_checkpoint, Architecture, BaseModel, FuseNet, FuseNetConfig,
    FusionMode, Modality, Network, ResidualCorrection, SegNet, SegNetConfig,
};
use mfn_core::train::{class_weights, train_epoch, LossConfig, SgdConfig, TrainSettings};
use mfn_core::IGNORE_LABEL;

use crate::commands::evaluate::evaluate_tiles;
use crate::config::RunConfig;
use crate::dataset::{fold_split, load_pack};
use crate::CliError;

fn modality(cfg: &RunConfig) -> Modality {
    Modality::parse(&cfg.modality).expect("validated by config")
}

/// Builds an untrained network for the configured architecture.
pub fn build_network(cfg: &RunConfig) -> Result<Network, CliError> {
    let mut rng = rng_from_seed(cfg.seed);
    let net = match cfg.architecture {
        Architecture::SegNet | Architecture::SegNetMs => {
            let branches = if cfg.architecture == Architecture::SegNetMs {
                cfg.branches.max(1)
            } else {
                0
            };
            let seg_cfg = SegNetConfig::new(3, cfg.k)
                .with_width_scale(cfg.width_scale)
                .with_branches(branches)
                .with_block_order(cfg.block_order);
            Network::SegNet {
                net: SegNet::new(seg_cfg, &mut rng),
                modality: modality(cfg),
            }
        }
        Architecture::FuseNetSum | Architecture::FuseNetVirtual => {
            let mode = if cfg.architecture == Architecture::FuseNetSum {
                FusionMode::Sum
            } else {
                FusionMode::Virtual
            };
            let fuse_cfg = FuseNetConfig::new(3, 3, cfg.k, mode)
                .with_width_scale(cfg.width_scale)
                .with_block_order(cfg.block_order);
            Network::FuseNet(FuseNet::new(fuse_cfg, &mut rng))
        }
        Architecture::ResidualCorrection => {
            if cfg.base_checkpoints.is_empty() {
                return Err(CliError::Config(
                    "residual_correction training needs base_checkpoints = <ckpt>,<ckpt>".into(),
                ));
            }
            let mut bases = Vec::with_capacity(cfg.base_checkpoints.len());
            for path in &cfg.base_checkpoints {
                if !path.exists() {
                    return Err(CliError::Config(format!(
                        "base checkpoint {} does not exist",
                        path.display()
                    )));
                }
                let (net, _) = load_checkpoint(path)?;
                match net {
                    Network::SegNet { net, modality } => bases.push(BaseModel { net, modality }),
                    _ => {
                        return Err(CliError::Config(format!(
                            "base checkpoint {} is not a segnet",
                            path.display()
                        )))
                    }
                }
            }
            Network::Correction(ResidualCorrection::new(bases, &mut rng)?)
        }
    };
    Ok(net)
}

fn label_histogram(tiles: &[TileTensors], k: usize) -> Result<Vec<u64>, CliError> {
    let mut hist = vec![0u64; k];
    for tile in tiles {
        for &l in tile.labels.data() {
            if l == IGNORE_LABEL {
                continue;
            }
            if (l as usize) >= k {
                return Err(CliError::Run(mfn_core::Error::Data(format!(
                    "tile {}: label {l} out of range for k={k}",
                    tile.name
                ))));
            }
            hist[l as usize] += 1;
        }
    }
    Ok(hist)
}

pub struct TrainOutcome {
    pub validation_accuracy: Option<f64>,
}

pub fn run(cfg: &RunConfig) -> Result<TrainOutcome, CliError> {
    let tiles = load_pack(&cfg.tiles)?;
    let (train_tiles, valid_tiles) = fold_split(tiles, cfg.fold);
    if train_tiles.is_empty() {
        return Err(CliError::Config("no training tiles after the fold split".into()));
    }

    let weights = if cfg.class_balance {
        let hist = label_histogram(&train_tiles, cfg.k)?;
        class_weights(&hist, cfg.clutter_index)?
    } else {
        vec![1.0; cfg.k]
    };

    let mut net = build_network(cfg)?;
    net.set_encoder_lr_multiplier(cfg.encoder_lr_multiplier as f32);

    let settings = TrainSettings {
        sgd: SgdConfig {
            base_lr: cfg.base_lr,
            momentum: cfg.momentum as f32,
            weight_decay: cfg.weight_decay as f32,
            batch_size: cfg.batch_size,
            milestones: cfg.lr_milestones.clone(),
        },
        loss: LossConfig {
            class_weights: weights,
            ignore_index: Some(IGNORE_LABEL),
        },
        patch_size: cfg.patch_size,
        stride: cfg.train_stride,
        seed: cfg.seed,
    };

    if let Some(parent) = cfg.log.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Run(mfn_core::Error::Io(e)))?;
        }
    }
    let mut log = std::fs::File::create(&cfg.log)
        .map_err(|e| CliError::Run(mfn_core::Error::Io(e)))?;
    for epoch in 0..cfg.epochs {
        let stats = train_epoch(&mut net, &train_tiles, epoch, &settings)?;
        let line = stats.log_line();
        writeln!(log, "{line}").map_err(|e| CliError::Run(mfn_core::Error::Io(e)))?;
        println!("{line}");
    }
    log.flush().map_err(|e| CliError::Run(mfn_core::Error::Io(e)))?;

    if let Some(parent) = cfg.checkpoint.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Run(mfn_core::Error::Io(e)))?;
        }
    }
    save_checkpoint(&mut net, cfg.width_scale, &cfg.checkpoint)?;

    let validation_accuracy = if valid_tiles.is_empty() {
        None
    } else {
        let report = evaluate_tiles(&mut net, &valid_tiles, cfg)?;
        println!(
            "validation: overall_accuracy={:.4} average_f1={:.4} ({} tiles)",
            report.overall_accuracy,
            report.average_f1,
            valid_tiles.len()
        );
        Some(report.overall_accuracy)
    };
    Ok(TrainOutcome {
        validation_accuracy,
    })
}
