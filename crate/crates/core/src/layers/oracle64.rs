//! f64-accumulation forward evaluation for the finite-difference oracle.
//!
//! Central differences divide tiny objective changes by `2h`; with f32
//! forward arithmetic the rounding noise of a multi-layer evaluation
//! (~1e-5 on the objective) swamps gradients below ~1e-3. The oracle
//! therefore re-evaluates the network with f64 accumulation throughout:
//! parameters and perturbed inputs stay f32 (the step is applied on f32
//! values), every intermediate stays f64, and the convolutions run as
//! direct nested loops, independent of the GEMM-backed production path.
//!
//! Evaluation is side-effect free and uses pinned routing: ReLU masks and
//! pooling argmax coordinates recorded by the last production forward.

use crate::error::{Error, Result};
use crate::layers::pool::PoolIndices;
use crate::layers::upsample;
use crate::tensor::Tensor4;

/// Dense f64 activation map mirroring `Tensor4`.
#[derive(Clone, Debug)]
pub struct Map64 {
    pub dims: (usize, usize, usize, usize),
    pub data: Vec<f64>,
}

impl Map64 {
    pub fn zeros(dims: (usize, usize, usize, usize)) -> Self {
        let (n, c, h, w) = dims;
        Self {
            dims,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_tensor(t: &Tensor4) -> Self {
        Self {
            dims: t.dims(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let (_, cc, h, w) = self.dims;
        let hw = h * w;
        let start = (n * cc + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let (_, cc, h, w) = self.dims;
        let hw = h * w;
        let start = (n * cc + c) * hw;
        &mut self.data[start..start + hw]
    }
}

/// Direct cross-correlation with f64 accumulation.
pub fn conv2d_f64(
    x: &Map64,
    weight: &Tensor4,
    bias: Option<&Tensor4>,
    padding: usize,
    stride: usize,
) -> Result<Map64> {
    let (n, ic, h, w) = x.dims;
    let (oc, wic, k, _) = weight.dims();
    if wic != ic {
        return Err(Error::Shape(format!(
            "oracle conv: input has {ic} channels, weight expects {wic}"
        )));
    }
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut out = Map64::zeros((n, oc, oh, ow));
    for item in 0..n {
        for o in 0..oc {
            let b = bias.map(|t| t.data()[o] as f64).unwrap_or(0.0);
            out.plane_mut(item, o).fill(b);
            for c in 0..ic {
                let src = x.plane(item, c);
                for ki in 0..k {
                    for kj in 0..k {
                        let wv = weight.at(o, c, ki, kj) as f64;
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * stride + ki) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let dst_row = &mut out.plane_mut(item, o)[oy * ow..(oy + 1) * ow];
                            let off = kj as isize - padding as isize;
                            for (ox, d) in dst_row.iter_mut().enumerate() {
                                let ix = (ox * stride) as isize + off;
                                if ix >= 0 && ix < w as isize {
                                    *d += wv * src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Batch normalization with f64 statistics. Train mode recomputes batch
/// statistics from the (perturbed) activations, exactly like the production
/// forward; eval mode uses the stored running statistics. No state updates.
pub fn batchnorm_f64(
    x: &Map64,
    gamma: &Tensor4,
    beta: &Tensor4,
    running_mean: &[f32],
    running_var: &[f32],
    epsilon: f32,
    train: bool,
) -> Map64 {
    let (n, c, h, w) = x.dims;
    let count = (n * h * w) as f64;
    let mut out = Map64::zeros(x.dims);
    for ch in 0..c {
        let (mean, var) = if train {
            let mut sum = 0.0f64;
            for item in 0..n {
                for &v in x.plane(item, ch) {
                    sum += v;
                }
            }
            let mean = sum / count;
            let mut sq = 0.0f64;
            for item in 0..n {
                for &v in x.plane(item, ch) {
                    let d = v - mean;
                    sq += d * d;
                }
            }
            (mean, sq / count)
        } else {
            (running_mean[ch] as f64, running_var[ch] as f64)
        };
        let inv_std = 1.0 / (var + epsilon as f64).sqrt();
        let g = gamma.data()[ch] as f64;
        let b = beta.data()[ch] as f64;
        for item in 0..n {
            let src = x.plane(item, ch);
            let dst = out.plane_mut(item, ch);
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - mean) * inv_std * g + b;
            }
        }
    }
    out
}

/// ReLU with a pinned mask (true keeps the value).
pub fn relu_masked_f64(x: &Map64, mask: &[bool]) -> Result<Map64> {
    if mask.len() != x.data.len() {
        return Err(Error::Shape(format!(
            "oracle relu: mask has {} entries, map {}",
            mask.len(),
            x.data.len()
        )));
    }
    let mut out = x.clone();
    for (v, &m) in out.data.iter_mut().zip(mask) {
        if !m {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Pooling with pinned argmax coordinates.
pub fn pool_frozen_f64(x: &Map64, idx: &PoolIndices) -> Result<Map64> {
    let (n, c, oh, ow) = idx.dims();
    if x.dims != (n, c, oh * 2, ow * 2) {
        return Err(Error::Shape(format!(
            "oracle pool: input dims {:?}, indices expect {:?}",
            x.dims,
            (n, c, oh * 2, ow * 2)
        )));
    }
    let mut out = Map64::zeros((n, c, oh, ow));
    let mut cursor = 0usize;
    for item in 0..n {
        for ch in 0..c {
            let src = x.plane(item, ch);
            let dst = out.plane_mut(item, ch);
            for v in dst.iter_mut() {
                *v = src[idx.coords()[cursor] as usize];
                cursor += 1;
            }
        }
    }
    Ok(out)
}

/// Unpooling: relocate into a zero map at the recorded coordinates.
pub fn unpool_f64(y: &Map64, idx: &PoolIndices) -> Result<Map64> {
    let (n, c, oh, ow) = idx.dims();
    if y.dims != (n, c, oh, ow) {
        return Err(Error::Shape(format!(
            "oracle unpool: value dims {:?} do not match index dims {:?}",
            y.dims,
            (n, c, oh, ow)
        )));
    }
    let mut out = Map64::zeros((n, c, oh * 2, ow * 2));
    let mut cursor = 0usize;
    for item in 0..n {
        for ch in 0..c {
            let src = y.plane(item, ch);
            let dst = out.plane_mut(item, ch);
            for &v in src {
                dst[idx.coords()[cursor] as usize] = v;
                cursor += 1;
            }
        }
    }
    Ok(out)
}

/// Corner-aligned bilinear upsampling.
pub fn bilinear_f64(x: &Map64, factor: usize) -> Result<Map64> {
    let (n, c, h, w) = x.dims;
    let (oh, ow) = (h * factor, w * factor);
    let rows = upsample::axis_taps_f64(h, oh);
    let cols = upsample::axis_taps_f64(w, ow);
    let mut out = Map64::zeros((n, c, oh, ow));
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

pub fn concat_f64(xs: &[&Map64]) -> Result<Map64> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Arg("oracle concat: empty input".into()))?;
    let (n, _, h, w) = first.dims;
    let total_c: usize = xs.iter().map(|x| x.dims.1).sum();
    let mut out = Map64::zeros((n, total_c, h, w));
    for item in 0..n {
        let mut offset = 0usize;
        for x in xs {
            for ch in 0..x.dims.1 {
                out.plane_mut(item, offset + ch)
                    .copy_from_slice(x.plane(item, ch));
            }
            offset += x.dims.1;
        }
    }
    Ok(out)
}

pub fn add_f64(a: &Map64, b: &Map64) -> Result<Map64> {
    if a.dims != b.dims {
        return Err(Error::Shape("oracle add: dims differ".into()));
    }
    let mut out = a.clone();
    for (v, &bv) in out.data.iter_mut().zip(&b.data) {
        *v += bv;
    }
    Ok(out)
}

pub fn average_f64(a: &Map64, b: &Map64) -> Result<Map64> {
    if a.dims != b.dims {
        return Err(Error::Shape("oracle average: dims differ".into()));
    }
    let mut out = a.clone();
    for (v, &bv) in out.data.iter_mut().zip(&b.data) {
        *v = (*v + bv) * 0.5;
    }
    Ok(out)
}

/// Splits channels at the given sizes (mirror of `channel_split`).
pub fn split_f64(x: &Map64, sizes: &[usize]) -> Result<Vec<Map64>> {
    let (n, c, h, w) = x.dims;
    let total: usize = sizes.iter().sum();
    if total != c {
        return Err(Error::Shape(format!(
            "oracle split: sizes sum to {total}, map has {c} channels"
        )));
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut offset = 0usize;
    for &size in sizes {
        let mut part = Map64::zeros((n, size, h, w));
        for item in 0..n {
            for ch in 0..size {
                part.plane_mut(item, ch)
                    .copy_from_slice(x.plane(item, offset + ch));
            }
        }
        out.push(part);
        offset += size;
    }
    Ok(out)
}

/// Side-effect-free f64 re-evaluation of a module at its current parameters,
/// with discrete routing (ReLU masks, pooling argmaxes) pinned to the last
/// production forward. This is the function the finite-difference oracle
/// probes: evaluating the true f32 forward would bury small gradients under
/// ~1e-5 of accumulated rounding noise, and re-deciding the routing would
/// make the function discontinuous under perturbation.
pub trait Forward64 {
    fn forward_f64(&self, x: &Map64) -> Result<Map64>;
}
