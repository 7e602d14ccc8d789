//! Vegetation index and the stacked DSM/nDSM/NDVI composite image.

use crate::data::raster::{ChannelRole, Plane, RasterTile};
use crate::error::{Error, Result};

/// `(IR - R) / (IR + R)` per pixel; a zero denominator yields 0.
///
/// Reflectance must be non-negative, which also bounds the result to
/// `[-1, 1]`.
pub fn compute_ndvi(ir: &[f32], red: &[f32]) -> Result<Vec<f32>> {
    if ir.len() != red.len() {
        return Err(Error::Shape(format!(
            "ndvi: IR plane has {} values, R plane {}",
            ir.len(),
            red.len()
        )));
    }
    let mut out = vec![0.0f32; ir.len()];
    for (i, (&a, &b)) in ir.iter().zip(red).enumerate() {
        if a < 0.0 || b < 0.0 {
            return Err(Error::Data(format!(
                "ndvi: negative reflectance at pixel {i} (IR={a}, R={b})"
            )));
        }
        let denom = a + b;
        out[i] = if denom == 0.0 { 0.0 } else { (a - b) / denom };
    }
    Ok(out)
}

/// Min-max scales a plane to `[0, 1]`; a constant plane maps to all zeros.
pub fn min_max_scale(plane: &[f32]) -> Vec<f32> {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in plane {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= lo {
        return vec![0.0; plane.len()];
    }
    let inv = 1.0 / (hi - lo);
    plane.iter().map(|&v| (v - lo) * inv).collect()
}

/// Stacks `(DSM, nDSM, NDVI)` in exactly that order. The elevation planes
/// are min-max scaled per tile so all composite channels share a
/// commensurate range; NDVI is already in `[-1, 1]` and passes through.
pub fn build_composite(
    dsm: &[f32],
    ndsm: &[f32],
    ndvi: &[f32],
    width: usize,
    height: usize,
) -> Result<RasterTile> {
    let expected = width * height;
    for (name, plane) in [("DSM", dsm), ("nDSM", ndsm), ("NDVI", ndvi)] {
        if plane.len() != expected {
            return Err(Error::Shape(format!(
                "composite: {name} plane has {} values, tile is {width}x{height}",
                plane.len()
            )));
        }
    }
    let mut tile = RasterTile::new(width, height);
    tile.push_channel(ChannelRole::Dsm, Plane::F32(min_max_scale(dsm)))?;
    tile.push_channel(ChannelRole::Ndsm, Plane::F32(min_max_scale(ndsm)))?;
    tile.push_channel(ChannelRole::Ndvi, Plane::F32(ndvi.to_vec()))?;
    Ok(tile)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_bands_give_zero() {
        let ndvi = compute_ndvi(&[0.4, 0.7], &[0.4, 0.7]).unwrap();
        assert_eq!(ndvi, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_case() {
        let ndvi = compute_ndvi(&[0.8], &[0.2]).unwrap();
        assert!((ndvi[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn zero_denominator_yields_zero() {
        let ndvi = compute_ndvi(&[0.0], &[0.0]).unwrap();
        assert_eq!(ndvi[0], 0.0);
    }

    #[test]
    fn negative_reflectance_rejected() {
        assert!(matches!(
            compute_ndvi(&[-0.1], &[0.2]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn constant_plane_scales_to_zero() {
        let tile = build_composite(&[5.0; 4], &[0.0; 4], &[0.0; 4], 2, 2).unwrap();
        let dsm = tile.channel(ChannelRole::Dsm).unwrap().as_f32().unwrap();
        assert!(dsm.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn min_max_midpoint() {
        let scaled = min_max_scale(&[10.0, 20.0, 30.0]);
        assert_eq!(scaled, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn channel_order_is_dsm_ndsm_ndvi() {
        let tile = build_composite(&[1.0, 2.0], &[0.0, 1.0], &[0.3, -0.3], 2, 1).unwrap();
        let roles: Vec<_> = tile.channels.iter().map(|(r, _)| *r).collect();
        assert_eq!(
            roles,
            vec![ChannelRole::Dsm, ChannelRole::Ndsm, ChannelRole::Ndvi]
        );
    }

    #[test]
    fn dim_mismatch_rejected() {
        assert!(matches!(
            build_composite(&[1.0; 4], &[0.0; 3], &[0.0; 4], 2, 2),
            Err(Error::Shape(_))
        ));
    }
}
