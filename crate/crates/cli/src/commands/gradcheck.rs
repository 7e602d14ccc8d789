//! `mfn gradcheck`: finite-difference verification of every layer primitive,
//! the conv blocks in both orders, both fusion modes, and a width-reduced
//! end-to-end model.

use mfn_core::init::{rng_from_seed, uniform_pm1};
use mfn_core::layers::oracle64::{bilinear_f64, pool_frozen_f64, split_f64, unpool_f64};
use mfn_core::layers::{
    bilinear_upsample, bilinear_upsample_backward, channel_concat, channel_split, gradient_check,
    max_pool2, max_unpool2, max_unpool2_backward, BatchNorm2d, Conv2d, Differentiable, Forward64,
    GradCheckConfig, GradCheckReport, Map64, PoolIndices, Relu,
};
use mfn_core::models::{
    BlockOrder, ConvBlock, FuseNet, FuseNetConfig, FusionMode, SegNet, SegNetConfig,
};
use mfn_core::tensor::{Parameter, Tensor4};
use mfn_core::{Error, Result as CoreResult};

use crate::config::RunConfig;
use crate::CliError;

struct ConvModule(Conv2d);

impl Forward64 for ConvModule {
    fn forward_f64(&self, x: &Map64) -> CoreResult<Map64> {
        self.0.forward_f64(x)
    }
}

impl Differentiable for ConvModule {
    fn forward(&mut self, x: &Tensor4) -> CoreResult<Tensor4> {
        self.0.forward(x)
    }
    fn backward(&mut self, grad: &Tensor4) -> CoreResult<Tensor4> {
        self.0.backward(grad)
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.0.parameters_mut()
    }
}

struct BnModule(BatchNorm2d);

impl Forward64 for BnModule {
    fn forward_f64(&self, x: &Map64) -> CoreResult<Map64> {
        self.0.forward_f64(x)
    }
}

impl Differentiable for BnModule {
    fn forward(&mut self, x: &Tensor4) -> CoreResult<Tensor4> {
        self.0.forward(x)
    }
    fn backward(&mut self, grad: &Tensor4) -> CoreResult<Tensor4> {
        self.0.backward(grad)
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.0.parameters_mut()
    }
}

struct ReluModule(Relu);

impl Forward64 for ReluModule {
    fn forward_f64(&self, x: &Map64) -> CoreResult<Map64> {
        self.0.forward_f64(x)
    }
}

impl Differentiable for ReluModule {
    fn forward(&mut self, x: &Tensor4) -> CoreResult<Tensor4> {
        self.0.forward(x)
    }
    fn backward(&mut self, grad: &Tensor4) -> CoreResult<Tensor4> {
        self.0.backward(grad)
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        Vec::new()
    }
}

struct BlockModule(ConvBlock);

impl Forward64 for BlockModule {
    fn forward_f64(&self, x: &Map64) -> CoreResult<Map64> {
        self.0.forward_f64(x)
    }
}

impl Differentiable for BlockModule {
    fn forward(&mut self, x: &Tensor4) -> CoreResult<Tensor4> {
        self.0.forward(x)
    }
    fn backward(&mut self, grad: &Tensor4) -> CoreResult<Tensor4> {
        self.0.backward(grad)
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.0.parameters_mut()
    }
}

/// Pool followed by its unpool; exercises both backward paths.
struct PoolUnpoolModule {
    idx: Option<PoolIndices>,
}

impl Forward64 for PoolUnpoolModule {
    fn forward_f64(&self, x: &Map64) -> CoreResult<Map64> {
        let idx = self
            .idx
            .as_ref()
            .ok_or_else(|| Error::State("pool module: oracle needs a prior forward".into()))?;
        let pooled = pool_frozen_f64(x, idx)?;
        unpool_f64(&pooled, idx)
    }
}

impl Differentiable for PoolUnpoolModule {
    fn forward(&mut self, x: &Tensor4) -> CoreResult<Tensor4> {
        let (pooled, idx) = max_pool2(x)?;
        let up = max_unpool2(&pooled, &idx)?;
        self.idx = Some(idx);
        Ok(up)
    }
    fn backward(&mut self, grad: &Tensor4) -> CoreResult<Tensor4> {
        let idx = self
            .idx
            .as_ref()
            .ok_or_else(|| Error::State("pool module: backward before forward".into()))?;
        let pooled_grad = max_unpool2_backward(grad, idx)?;
        max_unpool2(&pooled_grad, idx)
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        Vec::new()
    }
}

struct UpsampleModule {
    factor: usize,
    in_dims: Option<(usize, usize, usize, usize)>,
}

impl Forward64 for UpsampleModule {
    fn forward_f64(&self, x: &Map64) -> CoreResult<Map64> {
        bilinear_f64(x, self.factor)
    }
}

impl Differentiable for UpsampleModule {
    fn forward(&mut self, x: &Tensor4) -> CoreResult<Tensor4> {
        self.in_dims = Some(x.dims());
        bilinear_upsample(x, self.factor)
    }
    fn backward(&mut self, grad: &Tensor4) -> CoreResult<Tensor4> {
        let dims = self
            .in_dims
            .ok_or_else(|| Error::State("upsample module: backward before forward".into()))?;
        bilinear_upsample_backward(grad, self.factor, dims)
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        Vec::new()
    }
}

/// Adapts the two-input fusion network to the single-input harness by
/// splitting the input channels into optical and composite halves.
struct FuseSplitModule(FuseNet);

impl Forward64 for FuseSplitModule {
    fn forward_f64(&self, x: &Map64) -> CoreResult<Map64> {
        let _ = split_f64(x, &[3, 3])?; // validate the channel layout
        self.0.forward_f64(x)
    }
}

impl Differentiable for FuseSplitModule {
    fn forward(&mut self, x: &Tensor4) -> CoreResult<Tensor4> {
        let parts = channel_split(x, &[3, 3])?;
        self.0.forward(&parts[0], &parts[1])
    }
    fn backward(&mut self, grad: &Tensor4) -> CoreResult<Tensor4> {
        let (g_opt, g_comp) = self.0.backward(grad)?;
        channel_concat(&[&g_opt, &g_comp])
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.0.parameters_mut()
    }
}

struct SegNetModule(SegNet);

impl Forward64 for SegNetModule {
    fn forward_f64(&self, x: &Map64) -> CoreResult<Map64> {
        self.0.forward_f64(x)
    }
}

impl Differentiable for SegNetModule {
    fn forward(&mut self, x: &Tensor4) -> CoreResult<Tensor4> {
        Ok(self.0.forward(x)?.full)
    }
    fn backward(&mut self, grad: &Tensor4) -> CoreResult<Tensor4> {
        self.0.backward(grad, &[])
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.0.parameters_mut()
    }
}

/// Runs the whole verification suite; each entry is `(name, report)`.
pub fn run_suite(tolerance: f64, samples: usize) -> CoreResult<Vec<(String, GradCheckReport)>> {
    let cfg = GradCheckConfig {
        tolerance,
        samples_per_tensor: samples,
        ..Default::default()
    };
    let mut rng = rng_from_seed(0x6d66_6e00);
    let mut results: Vec<(String, GradCheckReport)> = Vec::new();

    {
        let conv = Conv2d::new("conv1x1", 3, 2, 1, 0, &mut rng);
        let x = uniform_pm1((1, 3, 5, 5), &mut rng);
        results.push(("conv1x1".into(), gradient_check(&mut ConvModule(conv), &x, &cfg)?));
    }
    {
        let conv = Conv2d::new("conv3x3", 2, 3, 3, 1, &mut rng);
        let x = uniform_pm1((1, 2, 5, 5), &mut rng);
        results.push(("conv3x3".into(), gradient_check(&mut ConvModule(conv), &x, &cfg)?));
    }
    {
        let bn = BatchNorm2d::new("bn", 3);
        let x = uniform_pm1((2, 3, 4, 4), &mut rng);
        results.push(("batchnorm".into(), gradient_check(&mut BnModule(bn), &x, &cfg)?));
    }
    {
        // keep activations away from the kink
        let x = uniform_pm1((1, 2, 6, 6), &mut rng).scale(5.0);
        results.push(("relu".into(), gradient_check(&mut ReluModule(Relu::new()), &x, &cfg)?));
    }
    for (name, order) in [
        ("conv_block_bn_relu", BlockOrder::ConvBnRelu),
        ("conv_block_relu_bn", BlockOrder::ConvReluBn),
    ] {
        let block = ConvBlock::new(name, 2, 3, order, &mut rng);
        let x = uniform_pm1((2, 2, 4, 4), &mut rng);
        results.push((name.into(), gradient_check(&mut BlockModule(block), &x, &cfg)?));
    }
    {
        let x = uniform_pm1((1, 2, 4, 4), &mut rng).scale(8.0);
        let mut module = PoolUnpoolModule { idx: None };
        results.push(("max_pool_unpool".into(), gradient_check(&mut module, &x, &cfg)?));
    }
    for factor in [2usize, 4, 8] {
        let x = uniform_pm1((1, 2, 3, 3), &mut rng);
        let mut module = UpsampleModule {
            factor,
            in_dims: None,
        };
        results.push((
            format!("bilinear_x{factor}"),
            gradient_check(&mut module, &x, &cfg)?,
        ));
    }
    {
        let seg = SegNet::new(
            SegNetConfig::new(3, 6).with_widths([8, 16, 16, 16, 16]),
            &mut rng,
        );
        let x = uniform_pm1((1, 3, 32, 32), &mut rng);
        results.push((
            "segnet_reduced".into(),
            gradient_check(&mut SegNetModule(seg), &x, &cfg)?,
        ));
    }
    {
        let seg = SegNet::new(
            SegNetConfig::new(3, 6)
                .with_widths([8, 16, 16, 16, 16])
                .with_branches(3),
            &mut rng,
        );
        let x = uniform_pm1((1, 3, 32, 32), &mut rng);
        results.push((
            "segnet_multiscale".into(),
            gradient_check(&mut SegNetModule(seg), &x, &cfg)?,
        ));
    }
    for (name, mode) in [
        ("fusenet_sum", FusionMode::Sum),
        ("fusenet_virtual", FusionMode::Virtual),
    ] {
        let fuse = FuseNet::new(
            FuseNetConfig::new(3, 3, 6, mode).with_widths([4, 4, 4, 4, 4]),
            &mut rng,
        );
        let x = uniform_pm1((1, 6, 32, 32), &mut rng);
        results.push((
            name.into(),
            gradient_check(&mut FuseSplitModule(fuse), &x, &cfg)?,
        ));
    }
    Ok(results)
}

pub fn run(cfg: &RunConfig) -> std::result::Result<(), CliError> {
    let results = run_suite(cfg.tolerance, 8)?;
    let mut failures = 0usize;
    for (name, report) in &results {
        println!(
            "{name:<22} max_rel_err {:>12.3e}  {}",
            report.max_rel_err,
            if report.passed { "PASS" } else { "FAIL" }
        );
        if !report.passed {
            failures += 1;
            for entry in &report.entries {
                if entry.max_rel_err >= report.tolerance {
                    println!("    {:<28} {:.3e}", entry.name, entry.max_rel_err);
                }
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Run(Error::Numeric(format!(
            "{failures} of {} gradient checks exceeded tolerance {}",
            results.len(),
            cfg.tolerance
        ))));
    }
    println!("all {} gradient checks passed", results.len());
    Ok(())
}
