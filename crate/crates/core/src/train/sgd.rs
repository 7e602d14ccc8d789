//! Stochastic gradient descent with momentum, weight decay, and the step
//! learning-rate schedule.

use crate::error::{Error, Result};
use crate::tensor::Parameter;

#[derive(Clone, Debug)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    /// Epochs at whose start the learning rate is divided by 10.
    pub milestones: Vec<usize>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 10,
            milestones: vec![5, 10, 15],
        }
    }
}

/// Piecewise-constant schedule: `base_lr * 10^-(milestones passed)`.
pub fn lr_at_epoch(epoch: usize, cfg: &SgdConfig) -> f64 {
    let passed = cfg.milestones.iter().filter(|&&m| epoch >= m).count();
    cfg.base_lr * 10f64.powi(-(passed as i32))
}

/// One update:
/// `g = grad (+ wd * value); v = momentum * v + g; value -= lr * lr_mult * v`,
/// then grads are zeroed. Weight decay skips parameters flagged as exempt
/// (biases and normalization scale/shift).
pub fn sgd_step(params: &mut [&mut Parameter], lr: f64, cfg: &SgdConfig) -> Result<()> {
    for p in params.iter_mut() {
        if p.grad.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "sgd: non-finite gradient in parameter '{}'",
                p.name
            )));
        }
        let step = (lr * p.lr_multiplier as f64) as f32;
        let wd = if p.apply_weight_decay { cfg.weight_decay } else { 0.0 };
        let momentum = cfg.momentum;
        let value = p.value.data_mut().as_mut_ptr();
        let grad = p.grad.data_mut().as_mut_ptr();
        let velocity = p.velocity.data_mut().as_mut_ptr();
        let len = p.grad.len();
        // fields of one Parameter are disjoint buffers
        unsafe {
            for i in 0..len {
                let g = *grad.add(i) + wd * *value.add(i);
                let v = momentum * *velocity.add(i) + g;
                *velocity.add(i) = v;
                *value.add(i) -= step * v;
                *grad.add(i) = 0.0;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor4;

    fn param(value: f32) -> Parameter {
        Parameter::new("w", Tensor4::new((1, 1, 1, 1), value).unwrap())
    }

    fn cfg(momentum: f32, weight_decay: f32) -> SgdConfig {
        SgdConfig {
            momentum,
            weight_decay,
            ..Default::default()
        }
    }

    #[test]
    fn vanilla_step() {
        let mut p = param(1.0);
        p.grad.data_mut()[0] = 1.0;
        sgd_step(&mut [&mut p], 0.1, &cfg(0.0, 0.0)).unwrap();
        assert!((p.value.data()[0] - 0.9).abs() < 1e-7);
        assert_eq!(p.grad.data()[0], 0.0, "grad zeroed after step");
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut p = param(0.0);
        let c = cfg(0.9, 0.0);
        p.grad.data_mut()[0] = 1.0;
        sgd_step(&mut [&mut p], 0.1, &c).unwrap();
        assert!((p.velocity.data()[0] - 1.0).abs() < 1e-7);
        assert!((p.value.data()[0] + 0.1).abs() < 1e-7);
        p.grad.data_mut()[0] = 1.0;
        sgd_step(&mut [&mut p], 0.1, &c).unwrap();
        assert!((p.velocity.data()[0] - 1.9).abs() < 1e-7);
        assert!((p.value.data()[0] + 0.29).abs() < 1e-7);
    }

    #[test]
    fn lr_multiplier_halves_the_step_exactly() {
        let mut a = param(1.0);
        a.grad.data_mut()[0] = 1.0;
        let mut b = param(1.0);
        b.grad.data_mut()[0] = 1.0;
        b.lr_multiplier = 0.5;
        let c = cfg(0.0, 0.0);
        sgd_step(&mut [&mut a], 0.1, &c).unwrap();
        sgd_step(&mut [&mut b], 0.1, &c).unwrap();
        let step_a = 1.0 - a.value.data()[0];
        let step_b = 1.0 - b.value.data()[0];
        assert_eq!(step_b, step_a * 0.5);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = param(2.0);
        p.grad.data_mut()[0] = 0.0;
        sgd_step(&mut [&mut p], 0.1, &cfg(0.0, 0.5)).unwrap();
        // g = 0 + 0.5*2 = 1, value = 2 - 0.1 = 1.9
        assert!((p.value.data()[0] - 1.9).abs() < 1e-7);
    }

    #[test]
    fn decay_exempt_parameters_skip_weight_decay() {
        let mut p = param(2.0).without_weight_decay();
        p.grad.data_mut()[0] = 0.0;
        sgd_step(&mut [&mut p], 0.1, &cfg(0.0, 0.5)).unwrap();
        assert_eq!(p.value.data()[0], 2.0);
    }

    #[test]
    fn non_finite_grad_names_the_parameter() {
        let mut p = Parameter::new("enc0.conv.weight", Tensor4::zeros((1, 1, 1, 1)).unwrap());
        p.grad.data_mut()[0] = f32::NAN;
        let err = sgd_step(&mut [&mut p], 0.1, &cfg(0.9, 0.0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("enc0.conv.weight"), "{msg}");
    }

    #[test]
    fn schedule_follows_milestones() {
        let c = SgdConfig::default();
        assert_eq!(lr_at_epoch(0, &c), 0.01);
        assert_eq!(lr_at_epoch(4, &c), 0.01);
        assert_eq!(lr_at_epoch(5, &c), 0.001);
        assert_eq!(lr_at_epoch(10, &c), 0.0001);
        assert!((lr_at_epoch(16, &c) - 1e-5).abs() < 1e-12);
    }

    #[test]
    fn schedule_is_non_increasing() {
        let c = SgdConfig::default();
        let mut last = f64::INFINITY;
        for epoch in 0..30 {
            let lr = lr_at_epoch(epoch, &c);
            assert!(lr <= last);
            last = lr;
        }
    }

    #[test]
    fn quadratic_descends_for_lr_below_two() {
        // minimize (1/2)(w - a)^2, gradient w - a
        let a = 3.0f32;
        for lr in [0.1f64, 0.5, 1.0, 1.5, 1.9] {
            let mut p = param(0.0);
            let c = cfg(0.0, 0.0);
            let before = (p.value.data()[0] - a).abs();
            p.grad.data_mut()[0] = p.value.data()[0] - a;
            sgd_step(&mut [&mut p], lr, &c).unwrap();
            let after = (p.value.data()[0] - a).abs();
            assert!(after < before, "lr {lr}: {before} -> {after}");
        }
    }
}
