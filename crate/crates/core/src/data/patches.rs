//! Co-located patch extraction across modalities and batch assembly.

use rand::seq::SliceRandom;

use crate::data::grid::PatchGrid;
use crate::data::raster::{ChannelRole, RasterTile};
use crate::error::{Error, Result};
use crate::init::rng_from_seed;
use crate::tensor::{LabelMap, Tensor4};

/// A tile triple converted to network inputs: optical `(1, 3, H, W)` in
/// IR/R/G order, composite `(1, 3, H, W)` in DSM/nDSM/NDVI order, labels
/// `(1, H, W)`.
#[derive(Clone, Debug)]
pub struct TileTensors {
    pub name: String,
    pub optical: Tensor4,
    pub composite: Tensor4,
    pub labels: LabelMap,
}

fn roles_to_tensor(tile: &RasterTile, roles: &[ChannelRole]) -> Result<Tensor4> {
    let (w, h) = (tile.width, tile.height);
    let mut out = Tensor4::zeros((1, roles.len(), h, w))?;
    for (ci, role) in roles.iter().enumerate() {
        let plane = tile.required(*role)?;
        out.plane_mut(0, ci).copy_from_slice(&plane.to_scaled_f32());
    }
    Ok(out)
}

impl TileTensors {
    pub fn from_tiles(
        name: &str,
        optical: &RasterTile,
        composite: &RasterTile,
        label: &RasterTile,
    ) -> Result<Self> {
        let dims = (optical.width, optical.height);
        for (what, tile) in [("composite", composite), ("label", label)] {
            if (tile.width, tile.height) != dims {
                return Err(Error::Data(format!(
                    "tile {name}: {what} is {}x{}, optical is {}x{}",
                    tile.width, tile.height, dims.0, dims.1
                )));
            }
        }
        let labels = label
            .required(ChannelRole::Label)?
            .as_u8()
            .ok_or_else(|| Error::Data(format!("tile {name}: label plane must be u8")))?;
        Ok(Self {
            name: name.to_string(),
            optical: roles_to_tensor(
                optical,
                &[ChannelRole::Ir, ChannelRole::Red, ChannelRole::Green],
            )?,
            composite: roles_to_tensor(
                composite,
                &[ChannelRole::Dsm, ChannelRole::Ndsm, ChannelRole::Ndvi],
            )?,
            labels: LabelMap::from_vec(1, optical.height, optical.width, labels.to_vec())?,
        })
    }

    pub fn height(&self) -> usize {
        self.optical.height()
    }

    pub fn width(&self) -> usize {
        self.optical.width()
    }
}

/// One window into one tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRef {
    pub tile: usize,
    pub row: usize,
    pub col: usize,
}

/// Builds the shuffled patch sequence for an epoch; the same seed always
/// produces the same order.
pub fn extract_patches(
    tiles: &[TileTensors],
    patch_size: usize,
    stride: usize,
    seed: u64,
) -> Result<Vec<PatchRef>> {
    if tiles.is_empty() {
        return Err(Error::Arg("extract_patches: no tiles".into()));
    }
    let mut refs = Vec::new();
    for (ti, tile) in tiles.iter().enumerate() {
        let grid = PatchGrid::new(tile.height(), tile.width(), patch_size, stride)?;
        for (row, col) in grid.origins() {
            refs.push(PatchRef {
                tile: ti,
                row,
                col,
            });
        }
    }
    let mut rng = rng_from_seed(seed);
    refs.shuffle(&mut rng);
    Ok(refs)
}

/// Copies a spatial window out of a `(1, c, H, W)` tensor.
pub fn crop_tensor(src: &Tensor4, row: usize, col: usize, size: usize) -> Result<Tensor4> {
    let (_, c, h, w) = src.dims();
    if row + size > h || col + size > w {
        return Err(Error::Arg(format!(
            "crop: window {size} at ({row}, {col}) escapes {h}x{w}"
        )));
    }
    let mut out = Tensor4::zeros((1, c, size, size))?;
    for ch in 0..c {
        let plane = src.plane(0, ch);
        let dst = out.plane_mut(0, ch);
        for y in 0..size {
            let s = (row + y) * w + col;
            dst[y * size..(y + 1) * size].copy_from_slice(&plane[s..s + size]);
        }
    }
    Ok(out)
}

pub fn crop_labels(src: &LabelMap, row: usize, col: usize, size: usize) -> Result<LabelMap> {
    let (h, w) = (src.height(), src.width());
    if row + size > h || col + size > w {
        return Err(Error::Arg(format!(
            "crop: window {size} at ({row}, {col}) escapes {h}x{w}"
        )));
    }
    let mut out = LabelMap::new(1, size, size, 0)?;
    let plane = src.item(0);
    for y in 0..size {
        let s = (row + y) * w + col;
        let d = y * size;
        out.data_mut()[d..d + size].copy_from_slice(&plane[s..s + size]);
    }
    Ok(out)
}

/// Assembles co-located optical/composite/label batches for a patch run.
pub fn assemble_batch(
    tiles: &[TileTensors],
    refs: &[PatchRef],
    patch_size: usize,
) -> Result<(Tensor4, Tensor4, LabelMap)> {
    if refs.is_empty() {
        return Err(Error::Arg("assemble_batch: empty batch".into()));
    }
    let n = refs.len();
    let mut optical = Tensor4::zeros((n, 3, patch_size, patch_size))?;
    let mut composite = Tensor4::zeros((n, 3, patch_size, patch_size))?;
    let mut labels = LabelMap::new(n, patch_size, patch_size, 0)?;
    for (bi, pr) in refs.iter().enumerate() {
        let tile = tiles
            .get(pr.tile)
            .ok_or_else(|| Error::Arg(format!("assemble_batch: tile index {} out of range", pr.tile)))?;
        let opt = crop_tensor(&tile.optical, pr.row, pr.col, patch_size)?;
        let comp = crop_tensor(&tile.composite, pr.row, pr.col, patch_size)?;
        let lbl = crop_labels(&tile.labels, pr.row, pr.col, patch_size)?;
        optical.item_mut(bi).copy_from_slice(opt.item(0));
        composite.item_mut(bi).copy_from_slice(comp.item(0));
        let hw = patch_size * patch_size;
        labels.data_mut()[bi * hw..(bi + 1) * hw].copy_from_slice(lbl.item(0));
    }
    Ok((optical, composite, labels))
}
