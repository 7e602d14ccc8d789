//! Sliding-window patch grids and overlap-averaged stitching.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Window origins covering a tile.
///
/// Origins advance by `stride`; if the last regular window stops short of
/// the tile edge, one clamped window per axis is appended at
/// `dim - patch_size`, so the union of windows covers every pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub tile_height: usize,
    pub tile_width: usize,
    pub patch_size: usize,
    pub stride: usize,
    row_origins: Vec<usize>,
    col_origins: Vec<usize>,
}

fn axis_origins(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut origins = Vec::new();
    let mut pos = 0usize;
    while pos + patch <= dim {
        origins.push(pos);
        pos += stride;
    }
    let last = *origins.last().expect("at least origin 0 fits");
    if last + patch < dim {
        origins.push(dim - patch);
    }
    origins
}

impl PatchGrid {
    pub fn new(
        tile_height: usize,
        tile_width: usize,
        patch_size: usize,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Arg("patch_grid: stride must be >= 1".into()));
        }
        if patch_size == 0 || patch_size > tile_height || patch_size > tile_width {
            return Err(Error::Arg(format!(
                "patch_grid: patch {patch_size} does not fit a {tile_height}x{tile_width} tile"
            )));
        }
        Ok(Self {
            tile_height,
            tile_width,
            patch_size,
            stride,
            row_origins: axis_origins(tile_height, patch_size, stride),
            col_origins: axis_origins(tile_width, patch_size, stride),
        })
    }

    pub fn row_origins(&self) -> &[usize] {
        &self.row_origins
    }

    pub fn col_origins(&self) -> &[usize] {
        &self.col_origins
    }

    /// Window origins in row-major order.
    pub fn origins(&self) -> Vec<(usize, usize)> {
        let mut all = Vec::with_capacity(self.len());
        for &r in &self.row_origins {
            for &c in &self.col_origins {
                all.push((r, c));
            }
        }
        all
    }

    pub fn len(&self) -> usize {
        self.row_origins.len() * self.col_origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-pixel mean of all windows covering each pixel.
///
/// `windows` holds one `(k, patch, patch)` map per grid window, batched as
/// `(num_windows, k, patch, patch)` in grid (row-major origin) order.
pub fn stitch_predictions(windows: &Tensor4, grid: &PatchGrid) -> Result<Tensor4> {
    let (m, k, ph, pw) = windows.dims();
    if m != grid.len() {
        return Err(Error::Arg(format!(
            "stitch: got {m} window maps for a grid of {} windows",
            grid.len()
        )));
    }
    if ph != grid.patch_size || pw != grid.patch_size {
        return Err(Error::Arg(format!(
            "stitch: window maps are {ph}x{pw}, grid patch size is {}",
            grid.patch_size
        )));
    }
    let (height, width) = (grid.tile_height, grid.tile_width);
    let mut sums = vec![0.0f64; k * height * width];
    let mut counts = vec![0u32; height * width];
    let patch = grid.patch_size;
    for (wi, (orow, ocol)) in grid.origins().into_iter().enumerate() {
        for ch in 0..k {
            let plane = windows.plane(wi, ch);
            let sum_plane = &mut sums[ch * height * width..(ch + 1) * height * width];
            for py in 0..patch {
                let dst_row = (orow + py) * width + ocol;
                let src_row = py * patch;
                for px in 0..patch {
                    sum_plane[dst_row + px] += plane[src_row + px] as f64;
                }
            }
        }
        for py in 0..patch {
            let dst_row = (orow + py) * width + ocol;
            for px in 0..patch {
                counts[dst_row + px] += 1;
            }
        }
    }
    if let Some(p) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Arg(format!(
            "stitch: pixel {p} not covered by any window"
        )));
    }
    let mut out = Tensor4::zeros((1, k, height, width))?;
    for ch in 0..k {
        let sum_plane = &sums[ch * height * width..(ch + 1) * height * width];
        let dst = out.plane_mut(0, ch);
        for (i, (&s, &c)) in sum_plane.iter().zip(&counts).enumerate() {
            dst[i] = (s / c as f64) as f32;
        }
    }
    Ok(out)
}
