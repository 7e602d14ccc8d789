//! 2x2 max-pooling with recorded argmax coordinates, and the unpooling that
//! relocates values back to those coordinates.
//!
//! Pooling windows are disjoint, so each stored coordinate is unique and the
//! two operations are exact adjoints of one another: pool's backward is
//! `max_unpool2` applied to the pooled gradient, unpool's backward gathers
//! from the recorded coordinates.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Argmax coordinates captured by `max_pool2`.
///
/// `dims` are the pooled map's dims; each entry holds the flat `h*W + w`
/// coordinate of the window maximum inside its pre-pooled `(h, w)` plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    dims: (usize, usize, usize, usize),
    idx: Vec<u32>,
}

impl PoolIndices {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.dims
    }

    pub fn coords(&self) -> &[u32] {
        &self.idx
    }

    pub fn coords_mut(&mut self) -> &mut [u32] {
        &mut self.idx
    }
}

/// Max over disjoint 2x2 windows. Ties resolve to the first occurrence in
/// row-major scan order, so indices are deterministic.
pub fn max_pool2(x: &Tensor4) -> Result<(Tensor4, PoolIndices)> {
    let (n, c, h, w) = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "max_pool2: spatial dims must be even, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros((n, c, oh, ow))?;
    let mut idx = vec![0u32; n * c * oh * ow];
    let mut cursor = 0usize;
    for item in 0..n {
        for ch in 0..c {
            let plane = x.plane(item, ch);
            let out_plane = out.plane_mut(item, ch);
            for py in 0..oh {
                for px in 0..ow {
                    let y0 = py * 2;
                    let x0 = px * 2;
                    let mut best = plane[y0 * w + x0];
                    let mut best_at = (y0 * w + x0) as u32;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let flat = (y0 + dy) * w + x0 + dx;
                        if plane[flat] > best {
                            best = plane[flat];
                            best_at = flat as u32;
                        }
                    }
                    out_plane[py * ow + px] = best;
                    idx[cursor] = best_at;
                    cursor += 1;
                }
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            dims: (n, c, oh, ow),
            idx,
        },
    ))
}

/// Relocates `y` into a zero map of doubled spatial dims at the recorded
/// coordinates.
pub fn max_unpool2(y: &Tensor4, idx: &PoolIndices) -> Result<Tensor4> {
    if y.dims() != idx.dims {
        return Err(Error::Shape(format!(
            "max_unpool2: value dims {:?} do not match index dims {:?}",
            y.dims(),
            idx.dims
        )));
    }
    let (n, c, oh, ow) = y.dims();
    let (h, w) = (oh * 2, ow * 2);
    let mut out = Tensor4::zeros((n, c, h, w))?;
    let plane_len = h * w;
    let mut cursor = 0usize;
    for item in 0..n {
        for ch in 0..c {
            let src = y.plane(item, ch);
            let dst = out.plane_mut(item, ch);
            for &v in src {
                let flat = idx.idx[cursor] as usize;
                if flat >= plane_len {
                    return Err(Error::Shape(format!(
                        "max_unpool2: stored coordinate {flat} outside {h}x{w} plane"
                    )));
                }
                dst[flat] = v;
                cursor += 1;
            }
        }
    }
    Ok(out)
}

/// Backward of `max_unpool2`: gathers the upstream gradient from the
/// recorded coordinates. This is also the value-gradient of `max_pool2`'s
/// adjoint pairing.
pub fn max_unpool2_backward(grad_out: &Tensor4, idx: &PoolIndices) -> Result<Tensor4> {
    let (n, c, oh, ow) = idx.dims;
    if grad_out.dims() != (n, c, oh * 2, ow * 2) {
        return Err(Error::Shape(format!(
            "max_unpool2 backward: grad dims {:?}, expected {:?}",
            grad_out.dims(),
            (n, c, oh * 2, ow * 2)
        )));
    }
    let mut grad_in = Tensor4::zeros((n, c, oh, ow))?;
    let mut cursor = 0usize;
    for item in 0..n {
        for ch in 0..c {
            let src = grad_out.plane(item, ch);
            let dst = grad_in.plane_mut(item, ch);
            for v in dst.iter_mut() {
                *v = src[idx.idx[cursor] as usize];
                cursor += 1;
            }
        }
    }
    Ok(grad_in)
}
