//! Bilinear upsampling by fixed power-of-two factors.
//!
//! Sampling is corner-aligned: input pixel `i` maps to output coordinate
//! `i * (out - 1) / (in - 1)` when `in > 1`, and a single input pixel extends
//! as a constant. The backward pass scatters each output gradient onto the
//! two (per axis) source pixels with the same interpolation weights, making
//! the pair an exact adjoint.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

const SUPPORTED: [usize; 3] = [2, 4, 8];

fn check_factor(factor: usize) -> Result<()> {
    if !SUPPORTED.contains(&factor) {
        return Err(Error::Arg(format!(
            "bilinear_upsample: factor {factor} unsupported (expected one of {SUPPORTED:?})"
        )));
    }
    Ok(())
}

/// Per output index: left source index and the weight of the *right* source.
pub(crate) fn axis_taps_f64(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|j| {
            if in_len == 1 {
                return (0, 0, 0.0);
            }
            let pos = j as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    axis_taps_f64(in_len, out_len)
        .into_iter()
        .map(|(i0, i1, f)| (i0, i1, f as f32))
        .collect()
}

pub fn bilinear_upsample(x: &Tensor4, factor: usize) -> Result<Tensor4> {
    check_factor(factor)?;
    let (n, c, h, w) = x.dims();
    let (oh, ow) = (h * factor, w * factor);
    let rows = axis_taps(h, oh);
    let cols = axis_taps(w, ow);
    let mut out = Tensor4::zeros((n, c, oh, ow))?;
    for item in 0..n {
        for ch in 0..c {
            let src = x.plane(item, ch);
            let dst = out.plane_mut(item, ch);
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                let top = &src[y0 * w..y0 * w + w];
                let bot = &src[y1 * w..y1 * w + w];
                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let a = top[x0] * (1.0 - fx) + top[x1] * fx;
                    let b = bot[x0] * (1.0 - fx) + bot[x1] * fx;
                    drow[ox] = a * (1.0 - fy) + b * fy;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of `bilinear_upsample`: accumulates output gradients back onto
/// their source pixels.
pub fn bilinear_upsample_backward(
    grad_out: &Tensor4,
    factor: usize,
    input_dims: (usize, usize, usize, usize),
) -> Result<Tensor4> {
    check_factor(factor)?;
    let (n, c, h, w) = input_dims;
    if grad_out.dims() != (n, c, h * factor, w * factor) {
        return Err(Error::Shape(format!(
            "bilinear backward: grad dims {:?}, expected {:?}",
            grad_out.dims(),
            (n, c, h * factor, w * factor)
        )));
    }
    let (oh, ow) = (h * factor, w * factor);
    let rows = axis_taps(h, oh);
    let cols = axis_taps(w, ow);
    let mut grad_in = Tensor4::zeros(input_dims)?;
    for item in 0..n {
        for ch in 0..c {
            let src = grad_out.plane(item, ch);
            let dst = grad_in.plane_mut(item, ch);
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                let srow = &src[oy * ow..(oy + 1) * ow];
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let g = srow[ox];
                    dst[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                    dst[y0 * w + x1] += g * (1.0 - fy) * fx;
                    dst[y1 * w + x0] += g * fy * (1.0 - fx);
                    dst[y1 * w + x1] += g * fy * fx;
                }
            }
        }
    }
    Ok(grad_in)
}
