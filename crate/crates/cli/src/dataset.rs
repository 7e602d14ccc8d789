//! Tile-pack loading: a directory of MRT triples plus a `manifest.txt`.
//!
//! The manifest starts with `key = value` lines (seed, size, tiles) followed
//! by one line per tile: `<name> <optical> <composite> <label>` with paths
//! relative to the pack directory.

use std::path::{Path, PathBuf};

use mfn_core::data::{RasterTile, TileTensors};

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub struct TileEntry {
    pub name: String,
    pub optical: PathBuf,
    pub composite: PathBuf,
    pub label: PathBuf,
}

pub fn read_manifest(dir: &Path) -> Result<Vec<TileEntry>, CliError> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::Config(format!(
            "cannot read tile manifest {}: {e}",
            path.display()
        ))
    })?;
    let mut entries = Vec::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.contains('=') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(CliError::Config(format!(
                "manifest line '{raw}': expected '<name> <optical> <composite> <label>'"
            )));
        }
        entries.push(TileEntry {
            name: parts[0].to_string(),
            optical: dir.join(parts[1]),
            composite: dir.join(parts[2]),
            label: dir.join(parts[3]),
        });
    }
    if entries.is_empty() {
        return Err(CliError::Config(format!(
            "manifest {} lists no tiles",
            path.display()
        )));
    }
    Ok(entries)
}

pub fn load_pack(dir: &Path) -> Result<Vec<TileTensors>, CliError> {
    let entries = read_manifest(dir)?;
    let mut tiles = Vec::with_capacity(entries.len());
    for entry in &entries {
        let optical = RasterTile::read(&entry.optical)?;
        let composite = RasterTile::read(&entry.composite)?;
        let label = RasterTile::read(&entry.label)?;
        tiles.push(TileTensors::from_tiles(
            &entry.name,
            &optical,
            &composite,
            &label,
        )?);
    }
    Ok(tiles)
}

/// 3-fold split: fold `f` validates tiles whose index is congruent to `f`
/// modulo 3 and trains on the rest.
pub fn fold_split<T>(items: Vec<T>, fold: Option<usize>) -> (Vec<T>, Vec<T>) {
    match fold {
        None => (items, Vec::new()),
        Some(f) => {
            let mut train = Vec::new();
            let mut valid = Vec::new();
            for (i, item) in items.into_iter().enumerate() {
                if i % 3 == f {
                    valid.push(item);
                } else {
                    train.push(item);
                }
            }
            (train, valid)
        }
    }
}
