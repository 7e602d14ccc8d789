//! 2-D convolution (cross-correlation) with exact input/weight/bias
//! gradients.
//!
//! The forward pass lowers each batch item to a column matrix (im2col) and
//! multiplies it with the `(out_c, in_c*kh*kw)` weight matrix. The backward
//! pass reuses the same lowering: `dW = dY * cols^T`, `dX = col2im(W^T * dY)`.

use crate::error::{Error, Result};
use crate::gemm::{sgemm, sgemm_a_transposed, sgemm_b_transposed};
use crate::init::{he_normal, SeededRng};
use crate::layers::oracle64::{conv2d_f64, Forward64, Map64};
use crate::tensor::{Parameter, Tensor4};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Parameter,
    /// Convs feeding a batch norm run without bias: the normalization
    /// subtracts any constant channel shift, which makes the parameter
    /// structurally inert (its true gradient is identically zero).
    pub bias: Option<Parameter>,
    pub padding: usize,
    pub stride: usize,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    cache: Option<Tensor4>,
}

impl Conv2d {
    /// Fan-in scaled Gaussian weights, zero bias.
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = he_normal((out_channels, in_channels, kernel, kernel), fan_in, rng);
        Self::with_weights(name, weight, padding, true)
    }

    /// Bias-free variant for convs that feed a batch norm.
    pub fn new_without_bias(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = he_normal((out_channels, in_channels, kernel, kernel), fan_in, rng);
        Self::with_weights(name, weight, padding, false)
    }

    /// All-zero weights and bias; the residual-correction head starts here so
    /// its first forward is the exact base average.
    pub fn new_zeroed(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    ) -> Self {
        let weight = Tensor4::zeros((out_channels, in_channels, kernel, kernel))
            .expect("conv dims are non-zero");
        Self::with_weights(name, weight, padding, true)
    }

    fn with_weights(name: &str, weight: Tensor4, padding: usize, with_bias: bool) -> Self {
        let (out_channels, in_channels, kernel, _) = weight.dims();
        let bias = with_bias.then(|| {
            let zeros = Tensor4::zeros((out_channels, 1, 1, 1)).expect("bias dims are non-zero");
            Parameter::new(format!("{name}.bias"), zeros).without_weight_decay()
        });
        Self {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias,
            padding,
            stride: 1,
            in_channels,
            out_channels,
            kernel,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    /// Zeroes weights and bias in place (test and head-reset helper).
    pub fn zero_weights(&mut self) {
        self.weight.value.fill(0.0);
        if let Some(bias) = &mut self.bias {
            bias.value.fill(0.0);
        }
    }

    /// Output spatial dims; the division by stride must be exact.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span = |d: usize| -> Result<usize> {
            let padded = d + 2 * self.padding;
            if padded < self.kernel {
                return Err(Error::Shape(format!(
                    "input extent {d} with padding {} is smaller than kernel {}",
                    self.padding, self.kernel
                )));
            }
            let num = padded - self.kernel;
            if num % self.stride != 0 {
                return Err(Error::Shape(format!(
                    "extent {d}: ({d} + 2*{} - {}) is not divisible by stride {}",
                    self.padding, self.kernel, self.stride
                )));
            }
            Ok(num / self.stride + 1)
        };
        Ok((span(h)?, span(w)?))
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let (n, c, h, w) = x.dims();
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv {}: input has {c} channels, layer expects {}",
                self.weight.name, self.in_channels
            )));
        }
        let (oh, ow) = self.output_dims(h, w)?;
        let span = oh * ow;
        let k_size = self.in_channels * self.kernel * self.kernel;

        let mut out = Tensor4::zeros((n, self.out_channels, oh, ow))?;
        let mut cols = vec![0.0f32; k_size * span];
        for item in 0..n {
            self.im2col(x, item, oh, ow, &mut cols);
            let y = &mut out.item_mut(item)[..self.out_channels * span];
            sgemm(
                self.out_channels,
                k_size,
                span,
                1.0,
                self.weight.value.data(),
                &cols,
                0.0,
                y,
            );
            if let Some(bias) = &self.bias {
                for oc in 0..self.out_channels {
                    let b = bias.value.data()[oc];
                    if b != 0.0 {
                        for v in &mut y[oc * span..(oc + 1) * span] {
                            *v += b;
                        }
                    }
                }
            }
        }
        self.cache = Some(x.clone());
        Ok(out)
    }

    /// Returns dL/dx and accumulates dL/dW, dL/db into the parameter grads.
    pub fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State(format!("conv {}: backward before forward", self.weight.name)))?
            .clone();
        let (n, _, h, w) = x.dims();
        let (oh, ow) = self.output_dims(h, w)?;
        if grad_out.dims() != (n, self.out_channels, oh, ow) {
            return Err(Error::Shape(format!(
                "conv {}: upstream grad dims {:?}, expected {:?}",
                self.weight.name,
                grad_out.dims(),
                (n, self.out_channels, oh, ow)
            )));
        }
        let span = oh * ow;
        let k_size = self.in_channels * self.kernel * self.kernel;

        let mut grad_in = Tensor4::zeros(x.dims())?;
        let mut cols = vec![0.0f32; k_size * span];
        let mut dcols = vec![0.0f32; k_size * span];
        for item in 0..n {
            let dy = &grad_out.item(item)[..self.out_channels * span];

            // dW += dY (oc x span) * cols^T (span x K)
            self.im2col(&x, item, oh, ow, &mut cols);
            sgemm_b_transposed(
                self.out_channels,
                span,
                k_size,
                1.0,
                dy,
                &cols,
                1.0,
                self.weight.grad.data_mut(),
            );

            // db += row sums of dY
            if let Some(bias) = &mut self.bias {
                for oc in 0..self.out_channels {
                    let s: f32 = dy[oc * span..(oc + 1) * span].iter().sum();
                    bias.grad.data_mut()[oc] += s;
                }
            }

            // dX = col2im(W^T (K x oc) * dY (oc x span))
            sgemm_a_transposed(
                k_size,
                self.out_channels,
                span,
                1.0,
                self.weight.value.data(),
                dy,
                0.0,
                &mut dcols,
            );
            self.col2im_add(&mut grad_in, item, oh, ow, &dcols);
        }
        Ok(grad_in)
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = vec![&mut self.weight];
        ps.extend(self.bias.as_mut());
        ps
    }

    /// Lowers one batch item into `cols` with layout
    /// `cols[(ic*k + ki)*k + kj][oy*ow + ox]`; out-of-bounds taps are zero.
    fn im2col(&self, x: &Tensor4, item: usize, oh: usize, ow: usize, cols: &mut [f32]) {
        let (_, _, h, w) = x.dims();
        let k = self.kernel;
        let pad = self.padding as isize;
        let stride = self.stride;
        let span = oh * ow;
        for ic in 0..self.in_channels {
            let plane = x.plane(item, ic);
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((ic * k + ki) * k + kj) * span;
                    let off = kj as isize - pad;
                    for oy in 0..oh {
                        let iy = (oy * stride) as isize + ki as isize - pad;
                        let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        if stride == 1 {
                            // bulk-copy the in-bounds middle, zero the edges
                            let lo = (-off).clamp(0, ow as isize) as usize;
                            let hi = (w as isize - off).clamp(0, ow as isize) as usize;
                            dst[..lo].fill(0.0);
                            dst[hi..].fill(0.0);
                            if lo < hi {
                                let s = (lo as isize + off) as usize;
                                dst[lo..hi].copy_from_slice(&src_row[s..s + (hi - lo)]);
                            }
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * stride) as isize + off;
                                *d = if ix < 0 || ix >= w as isize {
                                    0.0
                                } else {
                                    src_row[ix as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a column matrix back into the spatial gradient.
    fn col2im_add(&self, grad: &mut Tensor4, item: usize, oh: usize, ow: usize, dcols: &[f32]) {
        let (_, _, h, w) = grad.dims();
        let k = self.kernel;
        let pad = self.padding as isize;
        let stride = self.stride;
        let span = oh * ow;
        for ic in 0..self.in_channels {
            let plane = grad.plane_mut(item, ic);
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((ic * k + ki) * k + kj) * span;
                    let off = kj as isize - pad;
                    for oy in 0..oh {
                        let iy = (oy * stride) as isize + ki as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &dcols[row + oy * ow..row + (oy + 1) * ow];
                        let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        if stride == 1 {
                            let lo = (-off).clamp(0, ow as isize) as usize;
                            let hi = (w as isize - off).clamp(0, ow as isize) as usize;
                            if lo < hi {
                                let s = (lo as isize + off) as usize;
                                for (d, &v) in dst_row[s..s + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                                    *d += v;
                                }
                            }
                        } else {
                            for (ox, &v) in src.iter().enumerate() {
                                let ix = (ox * stride) as isize + off;
                                if ix >= 0 && ix < w as isize {
                                    dst_row[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Forward64 for Conv2d {
    fn forward_f64(&self, x: &Map64) -> Result<Map64> {
        conv2d_f64(
            x,
            &self.weight.value,
            self.bias.as_ref().map(|b| &b.value),
            self.padding,
            self.stride,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::rng_from_seed;

    fn conv_with_kernel(weight: Tensor4, bias: Vec<f32>, padding: usize) -> Conv2d {
        let mut conv = Conv2d::with_weights("t", weight, padding, true);
        conv.bias
            .as_mut()
            .unwrap()
            .value
            .data_mut()
            .copy_from_slice(&bias);
        conv
    }

    /// Direct nested-loop cross-correlation used as the oracle.
    fn conv_oracle(x: &Tensor4, weight: &Tensor4, bias: &[f32], pad: usize) -> Tensor4 {
        let (n, ic, h, w) = x.dims();
        let (oc, _, k, _) = weight.dims();
        let oh = h + 2 * pad - k + 1;
        let ow = w + 2 * pad - k + 1;
        let mut out = Tensor4::zeros((n, oc, oh, ow)).unwrap();
        for b in 0..n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[o] as f64;
                        for c in 0..ic {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = oy as isize + ki as isize - pad as isize;
                                    let ix = ox as isize + kj as isize - pad as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                        acc += (x.at(b, c, iy as usize, ix as usize)
                                            * weight.at(o, c, ki, kj))
                                            as f64;
                                    }
                                }
                            }
                        }
                        out.set(b, o, oy, ox, acc as f32);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_1x1_kernel() {
        let w = Tensor4::from_vec((1, 1, 1, 1), vec![1.0]).unwrap();
        let mut conv = conv_with_kernel(w, vec![0.0], 0);
        let x = Tensor4::from_vec((1, 1, 2, 3), vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_3x3_on_constant_input() {
        let w = Tensor4::new((1, 1, 3, 3), 1.0).unwrap();
        let mut conv = conv_with_kernel(w, vec![0.0], 1);
        let x = Tensor4::new((1, 1, 4, 4), 1.0).unwrap();
        let y = conv.forward(&x).unwrap();
        // corner taps see a 2x2 window, edges 2x3, interior 3x3
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 3, 3), 4.0);
        assert_eq!(y.at(0, 0, 3, 1), 6.0);
    }

    #[test]
    fn matches_nested_loop_oracle_on_random_input() {
        let mut rng = rng_from_seed(11);
        let x = crate::init::uniform_pm1((2, 3, 6, 5), &mut rng);
        let mut conv = Conv2d::new("t", 3, 4, 3, 1, &mut rng);
        conv.bias
            .as_mut()
            .unwrap()
            .value
            .data_mut()
            .copy_from_slice(&[0.1, -0.2, 0.3, 0.0]);
        let y = conv.forward(&x).unwrap();
        let want = conv_oracle(
            &x,
            &conv.weight.value,
            conv.bias.as_ref().unwrap().value.data(),
            1,
        );
        assert_eq!(y.dims(), want.dims());
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let mut rng = rng_from_seed(1);
        let mut conv = Conv2d::new("t", 3, 4, 3, 1, &mut rng);
        let x = Tensor4::zeros((1, 2, 4, 4)).unwrap();
        assert!(matches!(conv.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut rng = rng_from_seed(1);
        let mut conv = Conv2d::new("t", 1, 1, 3, 1, &mut rng);
        let g = Tensor4::zeros((1, 1, 4, 4)).unwrap();
        assert!(matches!(conv.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn output_dims_must_divide_exactly() {
        let mut rng = rng_from_seed(1);
        let mut conv = Conv2d::new("t", 1, 1, 3, 0, &mut rng);
        conv.stride = 2;
        // (6 + 0 - 3) = 3 is not divisible by 2
        assert!(matches!(conv.output_dims(6, 6), Err(Error::Shape(_))));
        assert_eq!(conv.output_dims(7, 7).unwrap(), (3, 3));
    }
}
