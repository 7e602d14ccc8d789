//! Per-channel batch normalization with train/eval modes.

use crate::error::{Error, Result};
use crate::layers::oracle64::{batchnorm_f64, Forward64, Map64};
use crate::tensor::{Parameter, Tensor4};

/// Whether layers use batch statistics (train) or running statistics (eval).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    /// Running-stat update factor: `new = (1 - m) * old + m * batch`.
    pub momentum: f32,
    pub epsilon: f32,
    mode: Mode,
    channels: usize,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    normalized: Tensor4,
    inv_std: Vec<f32>,
    mode: Mode,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        let gamma = Tensor4::new((1, channels, 1, 1), 1.0).expect("channels >= 1");
        let beta = Tensor4::zeros((1, channels, 1, 1)).expect("channels >= 1");
        Self {
            gamma: Parameter::new(format!("{name}.gamma"), gamma).without_weight_decay(),
            beta: Parameter::new(format!("{name}.beta"), beta).without_weight_decay(),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            epsilon: 1e-5,
            mode: Mode::Train,
            channels,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let (n, c, h, w) = x.dims();
        if c != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm {}: input has {c} channels, layer expects {}",
                self.gamma.name, self.channels
            )));
        }
        let count = n * h * w;
        if self.mode == Mode::Train && count < 2 {
            return Err(Error::Stats(format!(
                "batchnorm {}: train mode needs n*h*w >= 2, got {count}",
                self.gamma.name
            )));
        }

        let hw = h * w;
        let mut out = Tensor4::zeros(x.dims())?;
        let mut normalized = Tensor4::zeros(x.dims())?;
        let mut inv_stds = vec![0.0f32; c];
        for ch in 0..c {
            let (mean, var) = match self.mode {
                Mode::Train => {
                    let mut sum = 0.0f64;
                    for item in 0..n {
                        for &v in x.plane(item, ch) {
                            sum += v as f64;
                        }
                    }
                    let mean = (sum / count as f64) as f32;
                    let mut sq = 0.0f64;
                    for item in 0..n {
                        for &v in x.plane(item, ch) {
                            let d = (v - mean) as f64;
                            sq += d * d;
                        }
                    }
                    let var = (sq / count as f64) as f32;
                    self.running_mean[ch] =
                        (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean;
                    self.running_var[ch] =
                        (1.0 - self.momentum) * self.running_var[ch] + self.momentum * var;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean[ch], self.running_var[ch]),
            };
            let inv_std = 1.0 / (var + self.epsilon).sqrt();
            inv_stds[ch] = inv_std;
            let g = self.gamma.value.data()[ch];
            let b = self.beta.value.data()[ch];
            for item in 0..n {
                let src = x.plane(item, ch);
                let start = (item * c + ch) * hw;
                let norm = &mut normalized.data_mut()[start..start + hw];
                for (d, &v) in norm.iter_mut().zip(src) {
                    *d = (v - mean) * inv_std;
                }
                let dst = &mut out.data_mut()[start..start + hw];
                for (d, &v) in dst.iter_mut().zip(norm.iter()) {
                    *d = v * g + b;
                }
            }
        }
        self.cache = Some(BnCache {
            normalized,
            inv_std: inv_stds,
            mode: self.mode,
        });
        Ok(out)
    }

    /// Full chain rule through the batch mean and variance in train mode;
    /// running statistics are constants in eval mode.
    pub fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State(format!("batchnorm {}: backward before forward", self.gamma.name)))?;
        let (n, c, h, w) = cache.normalized.dims();
        if grad_out.dims() != (n, c, h, w) {
            return Err(Error::Shape(format!(
                "batchnorm {}: upstream grad dims {:?}, expected {:?}",
                self.gamma.name,
                grad_out.dims(),
                (n, c, h, w)
            )));
        }
        let count = (n * h * w) as f64;
        let hw = h * w;
        let mut grad_in = Tensor4::zeros((n, c, h, w))?;
        for ch in 0..c {
            let g = self.gamma.value.data()[ch];
            let inv_std = cache.inv_std[ch];
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for item in 0..n {
                let start = (item * c + ch) * hw;
                let dy = &grad_out.data()[start..start + hw];
                let xh = &cache.normalized.data()[start..start + hw];
                for (&d, &x) in dy.iter().zip(xh) {
                    sum_dy += d as f64;
                    sum_dy_xhat += (d as f64) * (x as f64);
                }
            }
            self.beta.grad.data_mut()[ch] += sum_dy as f32;
            self.gamma.grad.data_mut()[ch] += sum_dy_xhat as f32;

            match cache.mode {
                Mode::Train => {
                    let mean_dy = (sum_dy / count) as f32;
                    let mean_dy_xhat = (sum_dy_xhat / count) as f32;
                    let scale = g * inv_std;
                    for item in 0..n {
                        let start = (item * c + ch) * hw;
                        let dy = &grad_out.data()[start..start + hw];
                        let xh = &cache.normalized.data()[start..start + hw];
                        let gi = &mut grad_in.data_mut()[start..start + hw];
                        for ((out, &d), &x) in gi.iter_mut().zip(dy).zip(xh) {
                            *out = scale * (d - mean_dy - x * mean_dy_xhat);
                        }
                    }
                }
                Mode::Eval => {
                    let scale = g * inv_std;
                    for item in 0..n {
                        let start = (item * c + ch) * hw;
                        let dy = &grad_out.data()[start..start + hw];
                        let gi = &mut grad_in.data_mut()[start..start + hw];
                        for (out, &d) in gi.iter_mut().zip(dy) {
                            *out = d * scale;
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

impl Forward64 for BatchNorm2d {
    fn forward_f64(&self, x: &Map64) -> Result<Map64> {
        if x.dims.1 != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm {}: oracle input has {} channels, layer expects {}",
                self.gamma.name, x.dims.1, self.channels
            )));
        }
        Ok(batchnorm_f64(
            x,
            &self.gamma.value,
            &self.beta.value,
            &self.running_mean,
            &self.running_var,
            self.epsilon,
            self.mode == Mode::Train,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let mut bn = BatchNorm2d::new("t", 1);
        let x = Tensor4::new((1, 1, 2, 2), 5.0).unwrap();
        let y = bn.forward(&x).unwrap();
        assert!(y.data().iter().all(|v| v.abs() <= 1e-5), "{:?}", y.data());
    }

    #[test]
    fn affine_stage_applies_gamma_beta() {
        let mut bn = BatchNorm2d::new("t", 1);
        bn.gamma.value.data_mut()[0] = 2.0;
        bn.beta.value.data_mut()[0] = 1.0;
        // input already has zero mean and unit variance
        let x = Tensor4::from_vec((1, 1, 1, 2), vec![-1.0, 1.0]).unwrap();
        let y = bn.forward(&x).unwrap();
        for (a, &v) in y.data().iter().zip(x.data()) {
            assert!((a - (2.0 * v + 1.0)).abs() < 1e-4, "{a} vs {v}");
        }
    }

    #[test]
    fn train_mode_needs_two_samples() {
        let mut bn = BatchNorm2d::new("t", 3);
        let x = Tensor4::zeros((1, 3, 1, 1)).unwrap();
        assert!(matches!(bn.forward(&x), Err(Error::Stats(_))));
        bn.set_mode(Mode::Eval);
        bn.forward(&x).unwrap();
    }

    #[test]
    fn running_stats_follow_update_rule() {
        let mut bn = BatchNorm2d::new("t", 1);
        let x = Tensor4::from_vec((1, 1, 1, 4), vec![1.0, 3.0, 1.0, 3.0]).unwrap();
        bn.forward(&x).unwrap();
        // batch mean 2, biased variance 1; new = 0.9*old + 0.1*batch
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-6);
        assert!((bn.running_var[0] - (0.9 + 0.1)).abs() < 1e-6);
    }

    #[test]
    fn eval_uses_running_statistics() {
        let mut bn = BatchNorm2d::new("t", 1);
        bn.running_mean[0] = 1.0;
        bn.running_var[0] = 4.0;
        bn.set_mode(Mode::Eval);
        let x = Tensor4::from_vec((1, 1, 1, 2), vec![1.0, 3.0]).unwrap();
        let y = bn.forward(&x).unwrap();
        assert!((y.data()[0] - 0.0).abs() < 1e-5);
        assert!((y.data()[1] - 1.0).abs() < 1e-3); // 2 / sqrt(4 + eps)
    }
}
