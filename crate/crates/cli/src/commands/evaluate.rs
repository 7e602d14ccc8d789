//! `mfn evaluate`: border-eroded confusion over a tile pack.

use mfn_core::data::{ChannelRole, RasterTile, TileTensors};
use mfn_core::infer::{predict_tile, PredictTarget};
use mfn_core::metrics::{erode_borders, f1_scores, ConfusionMatrix, MetricsReport};
use mfn_core::models::Network;

use crate::config::RunConfig;
use crate::dataset::load_pack;
use crate::CliError;

pub const CLASS_NAMES: [&str; 6] = [
    "impervious",
    "building",
    "low_veg",
    "tree",
    "car",
    "clutter",
];

fn class_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| {
            CLASS_NAMES
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("class{i}"))
        })
        .collect()
}

/// Accumulates eroded confusion for ground truth vs predicted label planes.
pub fn accumulate_tile(
    cm: &mut ConfusionMatrix,
    truth: &[u8],
    pred: &[u8],
    height: usize,
    width: usize,
    radius: usize,
) -> Result<(), CliError> {
    if truth.len() != pred.len() {
        return Err(CliError::Run(mfn_core::Error::Data(format!(
            "evaluate: ground truth has {} pixels, prediction {}",
            truth.len(),
            pred.len()
        ))));
    }
    let valid = erode_borders(truth, height, width, radius);
    cm.accumulate(truth, pred, &valid)?;
    Ok(())
}

/// Runs inference on tiles and scores it in one pass (used by `train` for
/// fold validation and by the acceptance experiments).
pub fn evaluate_tiles(
    net: &mut Network,
    tiles: &[TileTensors],
    cfg: &RunConfig,
) -> Result<MetricsReport, CliError> {
    let mut cm = ConfusionMatrix::new(cfg.k);
    for tile in tiles {
        let probs = predict_tile(
            net,
            tile,
            cfg.patch_size,
            cfg.test_stride,
            cfg.batch_size,
            PredictTarget::Full,
        )?;
        let pred = probs.argmax_channel()?;
        accumulate_tile(
            &mut cm,
            tile.labels.data(),
            pred.data(),
            tile.height(),
            tile.width(),
            cfg.erosion_radius,
        )?;
    }
    Ok(f1_scores(&cm)?)
}

pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    let tiles = load_pack(&cfg.tiles)?;
    let mut cm = ConfusionMatrix::new(cfg.k);
    for tile in &tiles {
        let pred_path = cfg.output.join(format!("{}_pred.mrt", tile.name));
        if !pred_path.exists() {
            return Err(CliError::Config(format!(
                "prediction {} does not exist (run `mfn predict` first)",
                pred_path.display()
            )));
        }
        let pred_tile = RasterTile::read(&pred_path)?;
        if (pred_tile.width, pred_tile.height) != (tile.width(), tile.height()) {
            return Err(CliError::Run(mfn_core::Error::Data(format!(
                "evaluate {}: prediction is {}x{}, ground truth {}x{}",
                tile.name,
                pred_tile.width,
                pred_tile.height,
                tile.width(),
                tile.height()
            ))));
        }
        let pred = pred_tile
            .required(ChannelRole::Label)?
            .as_u8()
            .ok_or_else(|| {
                CliError::Run(mfn_core::Error::Data(format!(
                    "prediction {} label plane must be u8",
                    tile.name
                )))
            })?
            .to_vec();
        accumulate_tile(
            &mut cm,
            tile.labels.data(),
            &pred,
            tile.height(),
            tile.width(),
            cfg.erosion_radius,
        )?;
    }

    let report = f1_scores(&cm)?;
    let names = class_names(cfg.k);
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let text = report.render(&name_refs);
    if let Some(path) = &cfg.report {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| CliError::Run(mfn_core::Error::Io(e)))?;
            }
        }
        std::fs::write(path, &text).map_err(|e| CliError::Run(mfn_core::Error::Io(e)))?;
    }
    Ok(text)
}
