//! Class-balanced multinomial logistic loss.
//!
//! The loss is the negative log-likelihood of the true class under the
//! per-pixel softmax, weighted per class and averaged over non-ignored
//! pixels:
//!
//! `loss = -(1/N_valid) * sum_i w_{y_i} * log softmax(z_i)_{y_i}`
//!
//! Its gradient w.r.t. the scores is `w_{y} * (softmax - onehot) / N_valid`.

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor4};

#[derive(Clone, Debug)]
pub struct LossConfig {
    /// One positive finite weight per class.
    pub class_weights: Vec<f32>,
    /// Label value excluded from the loss (eroded/void pixels).
    pub ignore_index: Option<u8>,
}

impl LossConfig {
    pub fn uniform(num_classes: usize) -> Self {
        Self {
            class_weights: vec![1.0; num_classes],
            ignore_index: Some(crate::tensor::IGNORE_LABEL),
        }
    }

    pub fn with_weights(mut self, weights: Vec<f32>) -> Self {
        self.class_weights = weights;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.class_weights.is_empty() {
            return Err(Error::Arg("loss: empty class weight vector".into()));
        }
        for (i, &w) in self.class_weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::Arg(format!(
                    "loss: class weight {i} must be finite and positive, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Inverse-frequency class weights.
///
/// Non-clutter weights are proportional to `1 / freq_i` and normalized so
/// their mean is 1; classes absent from the histogram get the largest
/// computed weight. The clutter class, being an ill-posed reject class, gets
/// the minimum non-clutter weight instead of its (huge) inverse frequency.
pub fn class_weights(histogram: &[u64], clutter_index: Option<usize>) -> Result<Vec<f32>> {
    if histogram.is_empty() {
        return Err(Error::Arg("class_weights: empty histogram".into()));
    }
    if let Some(ci) = clutter_index {
        if ci >= histogram.len() {
            return Err(Error::Arg(format!(
                "class_weights: clutter index {ci} out of range for {} classes",
                histogram.len()
            )));
        }
    }
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return Err(Error::Arg("class_weights: all-zero histogram".into()));
    }

    let is_clutter = |i: usize| clutter_index == Some(i);
    let mut raw = vec![0.0f64; histogram.len()];
    let mut max_raw = 0.0f64;
    for (i, &count) in histogram.iter().enumerate() {
        if is_clutter(i) {
            continue;
        }
        if count > 0 {
            raw[i] = total as f64 / count as f64;
            max_raw = max_raw.max(raw[i]);
        }
    }
    // absent classes take the largest weight so they are not drowned out
    // the moment they appear
    if max_raw == 0.0 {
        max_raw = 1.0;
    }
    let mut non_clutter = 0usize;
    let mut sum = 0.0f64;
    for (i, r) in raw.iter_mut().enumerate() {
        if is_clutter(i) {
            continue;
        }
        if *r == 0.0 {
            *r = max_raw;
        }
        non_clutter += 1;
        sum += *r;
    }
    let mut weights: Vec<f32> = if non_clutter == 0 {
        vec![1.0; histogram.len()]
    } else {
        let mean = sum / non_clutter as f64;
        raw.iter().map(|&r| (r / mean) as f32).collect()
    };
    if let Some(ci) = clutter_index {
        let min_w = weights
            .iter()
            .enumerate()
            .filter(|(i, _)| !is_clutter(*i))
            .map(|(_, &w)| w)
            .fold(f32::INFINITY, f32::min);
        weights[ci] = if min_w.is_finite() { min_w } else { 1.0 };
    }
    Ok(weights)
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f32,
    /// dL/dscores, zero at ignored pixels.
    pub grad: Tensor4,
    /// Set when every pixel carried the ignore label.
    pub all_ignored: bool,
}

pub fn cross_entropy_loss(
    scores: &Tensor4,
    target: &LabelMap,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let (n, k, h, w) = scores.dims();
    if cfg.class_weights.len() != k {
        return Err(Error::Arg(format!(
            "loss: {} class weights for {k} score channels",
            cfg.class_weights.len()
        )));
    }
    if (target.batch(), target.height(), target.width()) != (n, h, w) {
        return Err(Error::Shape(format!(
            "loss: target dims ({}, {}, {}) do not match scores {:?}",
            target.batch(),
            target.height(),
            target.width(),
            scores.dims()
        )));
    }

    let hw = h * w;
    // first pass: count valid pixels and validate labels
    let mut n_valid = 0u64;
    for &label in target.data() {
        if Some(label) == cfg.ignore_index {
            continue;
        }
        if (label as usize) >= k {
            return Err(Error::Data(format!(
                "loss: label {label} out of range for {k} classes"
            )));
        }
        n_valid += 1;
    }
    let mut grad = Tensor4::zeros(scores.dims())?;
    if n_valid == 0 {
        return Ok(LossOutput {
            loss: 0.0,
            grad,
            all_ignored: true,
        });
    }

    let inv_n = 1.0f64 / n_valid as f64;
    let mut total = 0.0f64;
    let mut probs = vec![0.0f32; k];
    for item in 0..n {
        let labels = target.item(item);
        for p in 0..hw {
            let label = labels[p];
            if Some(label) == cfg.ignore_index {
                continue;
            }
            let y = label as usize;
            let base = item * k * hw + p;
            let mut max = f32::NEG_INFINITY;
            for c in 0..k {
                max = max.max(scores.data()[base + c * hw]);
            }
            let mut denom = 0.0f32;
            for c in 0..k {
                let e = (scores.data()[base + c * hw] - max).exp();
                probs[c] = e;
                denom += e;
            }
            let inv_denom = 1.0 / denom;
            let wgt = cfg.class_weights[y];
            let p_true = probs[y] * inv_denom;
            total -= wgt as f64 * (p_true.max(f32::MIN_POSITIVE) as f64).ln();
            let scale = wgt * inv_n as f32;
            for c in 0..k {
                let soft = probs[c] * inv_denom;
                let delta = if c == y { 1.0 } else { 0.0 };
                grad.data_mut()[base + c * hw] = scale * (soft - delta);
            }
        }
    }

    let loss = (total * inv_n) as f32;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss: non-finite value {loss}")));
    }
    Ok(LossOutput {
        loss,
        grad,
        all_ignored: false,
    })
}

/// Majority label per `d x d` block; ignored pixels do not vote and blocks
/// with no votes stay ignored. Ties break to the smallest label.
pub fn downsample_labels(target: &LabelMap, factor: usize, ignore: Option<u8>) -> Result<LabelMap> {
    if factor == 0 {
        return Err(Error::Arg("downsample_labels: zero factor".into()));
    }
    let (n, h, w) = (target.batch(), target.height(), target.width());
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "downsample_labels: {h}x{w} not divisible by {factor}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = LabelMap::new(n, oh, ow, ignore.unwrap_or(0))?;
    let mut votes = [0u32; 256];
    for item in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                votes.fill(0);
                for dy in 0..factor {
                    for dx in 0..factor {
                        let label = target.at(item, oy * factor + dy, ox * factor + dx);
                        if Some(label) != ignore {
                            votes[label as usize] += 1;
                        }
                    }
                }
                let mut best = ignore.unwrap_or(0);
                let mut best_votes = 0u32;
                for (label, &v) in votes.iter().enumerate() {
                    if v > best_votes {
                        best_votes = v;
                        best = label as u8;
                    }
                }
                if best_votes > 0 {
                    out.set(item, oy, ox, best);
                }
            }
        }
    }
    Ok(out)
}
