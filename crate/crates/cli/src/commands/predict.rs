//! `mfn predict`: stitched sliding-window inference over a tile pack.
//!
//! Per tile: a LABEL-role MRT with the argmax map, a CLASS_PROB MRT with the
//! stitched per-class probabilities, and a color-mapped PNG preview
//! (white roads, blue buildings, cyan low vegetation, green trees, yellow
//! cars, red clutter).

use std::path::Path;

use mfn_core::data::{ChannelRole, Plane, RasterTile, TileTensors};
use mfn_core::infer::{predict_tile, PredictTarget};
use mfn_core::models::{load_checkpoint, Network};
use mfn_core::tensor::LabelMap;

use crate::config::RunConfig;
use crate::dataset::load_pack;
use crate::CliError;

/// Paper-legend palette indexed by class.
pub const PALETTE: [[u8; 3]; 6] = [
    [255, 255, 255], // impervious / roads
    [0, 0, 255],     // buildings
    [0, 255, 255],   // low vegetation
    [0, 255, 0],     // trees
    [255, 255, 0],   // cars
    [255, 0, 0],     // clutter
];

pub fn load_network_for(cfg: &RunConfig) -> Result<Network, CliError> {
    if !cfg.checkpoint.exists() {
        return Err(CliError::Config(format!(
            "checkpoint {} does not exist",
            cfg.checkpoint.display()
        )));
    }
    let (net, _) = load_checkpoint(&cfg.checkpoint)?;
    if net.architecture() != cfg.architecture {
        return Err(CliError::Run(mfn_core::Error::Checkpoint(format!(
            "checkpoint holds a {} model but the config asks for {}",
            net.architecture().as_str(),
            cfg.architecture.as_str()
        ))));
    }
    Ok(net)
}

pub fn write_preview(labels: &LabelMap, path: &Path) -> Result<(), CliError> {
    let (h, w) = (labels.height(), labels.width());
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let class = labels.at(0, y, x) as usize;
            let rgb = PALETTE.get(class).copied().unwrap_or([128, 128, 128]);
            img.put_pixel(x as u32, y as u32, image::Rgb(rgb));
        }
    }
    img.save(path)
        .map_err(|e| CliError::Run(mfn_core::Error::Data(format!("cannot write preview: {e}"))))?;
    Ok(())
}

/// Predicts one tile and writes its three outputs into `out_dir`.
pub fn predict_and_write(
    net: &mut Network,
    tile: &TileTensors,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<LabelMap, CliError> {
    let probs = predict_tile(
        net,
        tile,
        cfg.patch_size,
        cfg.test_stride,
        cfg.batch_size,
        PredictTarget::Full,
    )?;
    let labels = probs.argmax_channel()?;
    let (h, w) = (tile.height(), tile.width());

    let mut prob_tile = RasterTile::new(w, h);
    for ch in 0..probs.channels() {
        prob_tile.push_channel(ChannelRole::ClassProb, Plane::F32(probs.plane(0, ch).to_vec()))?;
    }
    prob_tile.write(&out_dir.join(format!("{}_prob.mrt", tile.name)))?;

    let mut label_tile = RasterTile::new(w, h);
    label_tile.push_channel(ChannelRole::Label, Plane::U8(labels.data().to_vec()))?;
    label_tile.write(&out_dir.join(format!("{}_pred.mrt", tile.name)))?;

    write_preview(&labels, &out_dir.join(format!("{}_pred.png", tile.name)))?;
    Ok(labels)
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let mut net = load_network_for(cfg)?;
    let tiles = load_pack(&cfg.tiles)?;
    std::fs::create_dir_all(&cfg.output).map_err(|e| CliError::Run(mfn_core::Error::Io(e)))?;
    for tile in &tiles {
        predict_and_write(&mut net, tile, cfg, &cfg.output)?;
        println!("predicted {}", tile.name);
    }
    Ok(())
}
