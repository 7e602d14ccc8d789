//! Central finite-difference verification of analytic gradients.
//!
//! The harness reduces a module's output to a scalar through a fixed random
//! projection `L = sum(G .* y)`, obtains analytic gradients from one backward
//! pass, and compares them element by element against `(L(θ+h) - L(θ-h)) / 2h`
//! on a seeded sample of elements per tensor.
//!
//! Perturbations are applied on the f32 values, but the oracle evaluates the
//! perturbed network through the `Forward64` path: f64 accumulation end to
//! end with discrete routing (ReLU masks, pooling argmaxes) pinned to the
//! production forward. Without this, f32 rounding noise (~1e-5 on a deep
//! objective) and argmax flips under perturbation drown the comparison.
//!
//! The quotient divides by the step actually realized after f32 rounding of
//! `θ ± h`, so the step can be small enough (1e-5) to stay inside the linear
//! regime even for early-layer weights whose downstream amplification
//! through stacked normalizations reaches a few hundred.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::{rng_from_seed, uniform_pm1};
use crate::layers::oracle64::{Forward64, Map64};
use crate::tensor::{Parameter, Tensor4};

/// A module with a deterministic forward, a matching backward, a flat view
/// of its learnable parameters, and an f64 oracle evaluation.
pub trait Differentiable: Forward64 {
    fn forward(&mut self, x: &Tensor4) -> Result<Tensor4>;
    /// Returns dL/dx and accumulates parameter gradients.
    fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step on the f32 values.
    pub step: f32,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Absolute differences at or below this floor always pass.
    pub floor: f64,
    /// Elements sampled per tensor (capped at the tensor length).
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-3,
            floor: 1e-4,
            samples_per_tensor: 8,
            seed: 0x9d5a_b7e1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn push(&mut self, entry: GradCheckEntry) {
        self.max_rel_err = self.max_rel_err.max(entry.max_rel_err);
        self.entries.push(entry);
        self.passed = self.max_rel_err < self.tolerance;
    }
}

fn projected_loss(y: &Map64, projection: &Tensor4) -> Result<f64> {
    if y.data.len() != projection.len() {
        return Err(Error::Shape(format!(
            "gradient_check: oracle output has {} elements, projection {}",
            y.data.len(),
            projection.len()
        )));
    }
    let mut acc = 0.0f64;
    for (&a, &g) in y.data.iter().zip(projection.data()) {
        if !a.is_finite() {
            return Err(Error::Numeric(
                "gradient_check: non-finite oracle output".into(),
            ));
        }
        acc += a * g as f64;
    }
    Ok(acc)
}

fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= floor {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Checks every parameter of `module` plus the input itself.
pub fn gradient_check(
    module: &mut dyn Differentiable,
    input: &Tensor4,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    input.ensure_finite("gradient_check input")?;
    for p in module.parameters_mut() {
        p.zero_grad();
    }

    let mut rng = rng_from_seed(cfg.seed);
    // production forward fixes the routing the oracle reuses
    let y0 = module.forward(input)?;
    // Normalized so the objective gradient sits at the scale of a
    // pixel-averaged loss: the absolute floor is calibrated against that
    // scale, and an un-normalized sum over thousands of outputs would push
    // f32 backward rounding (proportional to the objective magnitude) past
    // the floor on small-gradient elements.
    let projection = uniform_pm1(y0.dims(), &mut rng).scale(1.0 / (y0.len() as f32).sqrt());
    let input_grad = module.backward(&projection)?;
    let analytic: Vec<(String, Tensor4)> = module
        .parameters_mut()
        .iter()
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();

    let mut report = GradCheckReport {
        entries: Vec::new(),
        max_rel_err: 0.0,
        tolerance: cfg.tolerance,
        passed: true,
    };

    let n_params = analytic.len();
    for pi in 0..n_params {
        let (name, grad) = (analytic[pi].0.clone(), analytic[pi].1.clone());
        let samples = sample_indices(grad.len(), cfg.samples_per_tensor, &mut rng);
        let mut max_err = 0.0f64;
        let center_input = Map64::from_tensor(input);
        for &i in &samples {
            let center = module.parameters_mut()[pi].value.data()[i];
            let plus_val = center + cfg.step;
            let minus_val = center - cfg.step;
            let realized = plus_val as f64 - minus_val as f64;
            if realized == 0.0 {
                return Err(Error::Numeric(format!(
                    "gradient_check: step {} vanishes against {name}[{i}] = {center}",
                    cfg.step
                )));
            }
            module.parameters_mut()[pi].value.data_mut()[i] = plus_val;
            let plus = projected_loss(&module.forward_f64(&center_input)?, &projection)?;
            module.parameters_mut()[pi].value.data_mut()[i] = minus_val;
            let minus = projected_loss(&module.forward_f64(&center_input)?, &projection)?;
            module.parameters_mut()[pi].value.data_mut()[i] = center;
            let numeric = (plus - minus) / realized;
            if !numeric.is_finite() {
                return Err(Error::Numeric(format!(
                    "gradient_check: non-finite finite-difference for {name}[{i}]"
                )));
            }
            max_err = max_err.max(relative_error(grad.data()[i] as f64, numeric, cfg.floor));
        }
        report.push(GradCheckEntry {
            name,
            max_rel_err: max_err,
            checked: samples.len(),
        });
    }

    // input gradient: perturb the f32 input, evaluate through the oracle
    let samples = sample_indices(input.len(), cfg.samples_per_tensor, &mut rng);
    let mut max_err = 0.0f64;
    let mut perturbed = input.clone();
    for &i in &samples {
        let center = perturbed.data()[i];
        let plus_val = center + cfg.step;
        let minus_val = center - cfg.step;
        let realized = plus_val as f64 - minus_val as f64;
        if realized == 0.0 {
            return Err(Error::Numeric(format!(
                "gradient_check: step {} vanishes against input[{i}] = {center}",
                cfg.step
            )));
        }
        perturbed.data_mut()[i] = plus_val;
        let plus = projected_loss(&module.forward_f64(&Map64::from_tensor(&perturbed))?, &projection)?;
        perturbed.data_mut()[i] = minus_val;
        let minus = projected_loss(&module.forward_f64(&Map64::from_tensor(&perturbed))?, &projection)?;
        perturbed.data_mut()[i] = center;
        let numeric = (plus - minus) / realized;
        if !numeric.is_finite() {
            return Err(Error::Numeric(format!(
                "gradient_check: non-finite finite-difference for input[{i}]"
            )));
        }
        max_err = max_err.max(relative_error(input_grad.data()[i] as f64, numeric, cfg.floor));
    }
    report.push(GradCheckEntry {
        name: "input".into(),
        max_rel_err: max_err,
        checked: samples.len(),
    });
    Ok(report)
}

fn sample_indices(len: usize, want: usize, rng: &mut crate::init::SeededRng) -> Vec<usize> {
    if len <= want {
        return (0..len).collect();
    }
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < want {
        picked.insert(rng.gen_range(0..len));
    }
    picked.into_iter().collect()
}
