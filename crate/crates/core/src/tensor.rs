//! Dense 4-D tensor storage and elementwise arithmetic.
//!
//! `Tensor4` is the universal carrier for activations, gradients, and
//! parameter values: dimensions are `(n, c, h, w)` and the backing buffer is
//! row-major within a channel plane (`w` fastest), channel-major within a
//! batch item. Tensors returned from operations are plain values; once built
//! they are only mutated through explicit `*_mut` accessors.

use crate::error::{Error, Result};

/// 4-D `f32` tensor with `(batch, channel, height, width)` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor4 {
    /// Builds a tensor of the given dims with every element set to `fill`.
    ///
    /// All dims must be at least 1 and their product must not overflow.
    pub fn new(dims: (usize, usize, usize, usize), fill: f32) -> Result<Self> {
        let (n, c, h, w) = dims;
        let len = checked_len(n, c, h, w)?;
        Ok(Self {
            n,
            c,
            h,
            w,
            data: vec![fill; len],
        })
    }

    /// All-zero tensor.
    pub fn zeros(dims: (usize, usize, usize, usize)) -> Result<Self> {
        Self::new(dims, 0.0)
    }

    /// Wraps an existing buffer. `data.len()` must equal `n*c*h*w`.
    pub fn from_vec(dims: (usize, usize, usize, usize), data: Vec<f32>) -> Result<Self> {
        let (n, c, h, w) = dims;
        let len = checked_len(n, c, h, w)?;
        if data.len() != len {
            return Err(Error::Dim(format!(
                "buffer length {} does not match dims {:?} (expected {})",
                data.len(),
                dims,
                len
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Flat offset of `(n, c, h, w)`.
    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f32) {
        let i = self.offset(n, c, h, w);
        self.data[i] = v;
    }

    /// One `(c, h, w)` slab of the buffer.
    pub fn item(&self, n: usize) -> &[f32] {
        let stride = self.c * self.h * self.w;
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f32] {
        let stride = self.c * self.h * self.w;
        &mut self.data[n * stride..(n + 1) * stride]
    }

    /// One `(h, w)` channel plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.h * self.w;
        let start = (n * self.c + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let hw = self.h * self.w;
        let start = (n * self.c + c) * hw;
        &mut self.data[start..start + hw]
    }

    fn same_dims(&self, other: &Self, op: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{op}: operand dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_dims(other, "add")?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_dims(other, "sub")?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_dims(other, "mul")?;
        Ok(self.zip_with(other, |a, b| a * b))
    }

    /// Elementwise mean of two tensors.
    pub fn average(&self, other: &Self) -> Result<Self> {
        self.same_dims(other, "average")?;
        Ok(self.zip_with(other, |a, b| (a + b) * 0.5))
    }

    /// Multiplies every element by a scalar.
    pub fn scale(&self, factor: f32) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= factor;
        }
        out
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_dims(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Self {
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        }
    }

    pub fn fill(&mut self, v: f32) {
        self.data.fill(v);
    }

    /// Errs if any element is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            )));
        }
        Ok(())
    }

    /// Per-pixel index of the maximal channel; ties break to the lowest index.
    ///
    /// Channel count must fit a `u8` label (at most 256 classes).
    pub fn argmax_channel(&self) -> Result<LabelMap> {
        if self.c > 256 {
            return Err(Error::Arg(format!(
                "argmax_channel: {} channels exceed the 256-label range",
                self.c
            )));
        }
        let hw = self.h * self.w;
        let mut labels = vec![0u8; self.n * hw];
        for n in 0..self.n {
            let item = self.item(n);
            let out = &mut labels[n * hw..(n + 1) * hw];
            for (p, lbl) in out.iter_mut().enumerate() {
                let mut best = item[p];
                let mut best_c = 0usize;
                for c in 1..self.c {
                    let v = item[c * hw + p];
                    if v > best {
                        best = v;
                        best_c = c;
                    }
                }
                *lbl = best_c as u8;
            }
        }
        LabelMap::from_vec(self.n, self.h, self.w, labels)
    }
}

fn checked_len(n: usize, c: usize, h: usize, w: usize) -> Result<usize> {
    if n == 0 || c == 0 || h == 0 || w == 0 {
        return Err(Error::Dim(format!(
            "all dims must be >= 1, got ({n}, {c}, {h}, {w})"
        )));
    }
    n.checked_mul(c)
        .and_then(|x| x.checked_mul(h))
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| Error::Dim(format!("element count overflows for ({n}, {c}, {h}, {w})")))
}

/// Integer per-pixel label plane of shape `(n, 1, h, w)`.
///
/// Labels are `u8`; 255 is reserved as the ignore value throughout the
/// pipeline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<u8>,
}

/// Label value excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 255;

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, fill: u8) -> Result<Self> {
        let len = checked_len(n, 1, h, w)?;
        Ok(Self {
            n,
            h,
            w,
            data: vec![fill; len],
        })
    }

    pub fn from_vec(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        let len = checked_len(n, 1, h, w)?;
        if data.len() != len {
            return Err(Error::Dim(format!(
                "label buffer length {} does not match (n={n}, h={h}, w={w})",
                data.len()
            )));
        }
        Ok(Self { n, h, w, data })
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, n: usize, h: usize, w: usize) -> u8 {
        self.data[(n * self.h + h) * self.w + w]
    }

    #[inline]
    pub fn set(&mut self, n: usize, h: usize, w: usize, v: u8) {
        self.data[(n * self.h + h) * self.w + w] = v;
    }

    pub fn item(&self, n: usize) -> &[u8] {
        let hw = self.h * self.w;
        &self.data[n * hw..(n + 1) * hw]
    }
}

/// Per-pixel softmax over channels, with max subtraction for stability.
pub fn softmax_channels(scores: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = scores.dims();
    let hw = h * w;
    let mut out = scores.clone();
    for i in 0..n {
        let item = out.item_mut(i);
        for p in 0..hw {
            let mut m = f32::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(item[ch * hw + p]);
            }
            let mut sum = 0.0f32;
            for ch in 0..c {
                let e = (item[ch * hw + p] - m).exp();
                item[ch * hw + p] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for ch in 0..c {
                item[ch * hw + p] *= inv;
            }
        }
    }
    out
}

/// Learnable tensor with its gradient and momentum buffers.
///
/// `lr_multiplier` scales the learning rate applied to this parameter only,
/// which is how pre-initialized weights can learn at half the rate of fresh
/// ones. `apply_weight_decay` is false for biases and normalization
/// scale/shift parameters.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor4,
    pub grad: Tensor4,
    pub velocity: Tensor4,
    pub lr_multiplier: f32,
    pub apply_weight_decay: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor4) -> Self {
        let grad = Tensor4::zeros(value.dims()).expect("value dims already validated");
        let velocity = grad.clone();
        Self {
            name: name.into(),
            value,
            grad,
            velocity,
            lr_multiplier: 1.0,
            apply_weight_decay: true,
        }
    }

    pub fn without_weight_decay(mut self) -> Self {
        self.apply_weight_decay = false;
        self
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_fills_with_zero() {
        let t = Tensor4::new((1, 1, 2, 2), 0.0).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn new_fills_constant_across_channels() {
        let t = Tensor4::new((1, 2, 1, 1), 3.5).unwrap();
        assert_eq!(t.at(0, 0, 0, 0), 3.5);
        assert_eq!(t.at(0, 1, 0, 0), 3.5);
    }

    #[test]
    fn zero_dim_rejected() {
        let err = Tensor4::new((1, 1, 0, 1), 0.0).unwrap_err();
        assert!(matches!(err, Error::Dim(_)));
    }

    #[test]
    fn overflowing_dims_rejected() {
        let err = Tensor4::new((usize::MAX, 2, 2, 2), 0.0).unwrap_err();
        assert!(matches!(err, Error::Dim(_)));
    }

    #[test]
    fn fill_reads_back_bit_exact() {
        let fill = 0.1f32; // not exactly representable; must round-trip bit-identically
        let t = Tensor4::new((2, 3, 4, 5), fill).unwrap();
        assert!(t.data().iter().all(|v| v.to_bits() == fill.to_bits()));
    }

    #[test]
    fn add_matches_scalar_arithmetic() {
        let a = Tensor4::from_vec((1, 1, 1, 2), vec![1.0, 2.0]).unwrap();
        let b = Tensor4::from_vec((1, 1, 1, 2), vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn average_is_idempotent_on_equal_operands() {
        let a = Tensor4::from_vec((1, 2, 1, 2), vec![1.0, -2.5, 3.25, 0.0]).unwrap();
        assert_eq!(a.average(&a).unwrap(), a);
    }

    #[test]
    fn scale_matches_scalar_arithmetic() {
        let a = Tensor4::from_vec((1, 1, 1, 2), vec![2.0, 4.0]).unwrap();
        assert_eq!(a.scale(0.5).data(), &[1.0, 2.0]);
    }

    #[test]
    fn mismatched_dims_error() {
        let a = Tensor4::zeros((1, 1, 2, 2)).unwrap();
        let b = Tensor4::zeros((1, 2, 2, 2)).unwrap();
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_picks_max_channel() {
        let t = Tensor4::from_vec((1, 2, 1, 1), vec![0.1, 0.9]).unwrap();
        assert_eq!(t.argmax_channel().unwrap().data(), &[1]);
    }

    #[test]
    fn argmax_tie_breaks_to_lowest_index() {
        let t = Tensor4::from_vec((1, 2, 1, 1), vec![0.5, 0.5]).unwrap();
        assert_eq!(t.argmax_channel().unwrap().data(), &[0]);
    }

    #[test]
    fn argmax_single_channel_is_zero() {
        let t = Tensor4::new((1, 1, 2, 2), 7.0).unwrap();
        assert!(t.argmax_channel().unwrap().data().iter().all(|&l| l == 0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor4::from_vec((1, 3, 1, 2), vec![1.0, -2.0, 0.5, 3.0, 0.0, 100.0]).unwrap();
        let p = softmax_channels(&t);
        for pix in 0..2 {
            let s: f32 = (0..3).map(|c| p.at(0, c, 0, pix)).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        p.ensure_finite("softmax").unwrap();
    }

    #[test]
    fn ensure_finite_reports_nan() {
        let t = Tensor4::from_vec((1, 1, 1, 2), vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(t.ensure_finite("x"), Err(Error::Numeric(_))));
    }
}
