//! Convolutional building blocks shared by the architectures.

use crate::error::Result;
use crate::init::SeededRng;
use crate::layers::oracle64::{Forward64, Map64};
use crate::layers::{BatchNorm2d, Conv2d, Mode, Relu};
use crate::tensor::{Parameter, Tensor4};

/// Order of the normalization and activation inside a block.
///
/// `ConvBnRelu` is the conventional arrangement; `ConvReluBn` follows the
/// literal reading of "ReLU and a batch normalization" and is kept selectable
/// so both are testable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockOrder {
    ConvBnRelu,
    ConvReluBn,
}

impl BlockOrder {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conv_bn_relu" => Some(Self::ConvBnRelu),
            "conv_relu_bn" => Some(Self::ConvReluBn),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ConvBnRelu => "conv_bn_relu",
            Self::ConvReluBn => "conv_relu_bn",
        }
    }
}

/// 3x3 convolution (padding 1) + batch norm + ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    relu: Relu,
    order: BlockOrder,
}

impl ConvBlock {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        order: BlockOrder,
        rng: &mut SeededRng,
    ) -> Self {
        Self {
            conv: Conv2d::new_without_bias(
                &format!("{name}.conv"),
                in_channels,
                out_channels,
                3,
                1,
                rng,
            ),
            bn: BatchNorm2d::new(&format!("{name}.bn"), out_channels),
            relu: Relu::new(),
            order,
        }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let z = self.conv.forward(x)?;
        match self.order {
            BlockOrder::ConvBnRelu => self.relu.forward(&self.bn.forward(&z)?),
            BlockOrder::ConvReluBn => self.bn.forward(&self.relu.forward(&z)?),
        }
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4> {
        let g = match self.order {
            BlockOrder::ConvBnRelu => self.bn.backward(&self.relu.backward(grad)?)?,
            BlockOrder::ConvReluBn => self.relu.backward(&self.bn.backward(grad)?)?,
        };
        self.conv.backward(&g)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.bn.set_mode(mode);
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = self.conv.parameters_mut();
        ps.extend(self.bn.parameters_mut());
        ps
    }

    pub fn bn_mut(&mut self) -> &mut BatchNorm2d {
        &mut self.bn
    }

    /// Zeroes the convolution so the whole block outputs exactly zero
    /// (BN maps an all-zero pre-activation to beta = 0 in both orders).
    pub fn zero_conv(&mut self) {
        self.conv.zero_weights();
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }
}

/// A run of `ConvBlock`s applied in sequence (one encoder or decoder stage,
/// or a virtual-branch fusion block).
#[derive(Clone, Debug)]
pub struct Stage {
    pub blocks: Vec<ConvBlock>,
}

impl Stage {
    /// `channels` lists in/out widths as `[in, mid.., out]`, one entry more
    /// than the number of blocks.
    pub fn new(name: &str, channels: &[usize], order: BlockOrder, rng: &mut SeededRng) -> Self {
        let blocks = channels
            .windows(2)
            .enumerate()
            .map(|(i, pair)| ConvBlock::new(&format!("{name}.{i}"), pair[0], pair[1], order, rng))
            .collect();
        Self { blocks }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let mut cur = x.clone();
        for block in &mut self.blocks {
            cur = block.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4> {
        let mut cur = grad.clone();
        for block in self.blocks.iter_mut().rev() {
            cur = block.backward(&cur)?;
        }
        Ok(cur)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for block in &mut self.blocks {
            block.set_mode(mode);
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.parameters_mut())
            .collect()
    }

    pub fn zero_convs(&mut self) {
        for block in &mut self.blocks {
            block.zero_conv();
        }
    }

    pub fn bn_layers_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        self.blocks.iter_mut().map(|b| b.bn_mut()).collect()
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().expect("stage has blocks").out_channels()
    }
}

impl Forward64 for ConvBlock {
    fn forward_f64(&self, x: &Map64) -> Result<Map64> {
        let z = self.conv.forward_f64(x)?;
        match self.order {
            BlockOrder::ConvBnRelu => self.relu.forward_f64(&self.bn.forward_f64(&z)?),
            BlockOrder::ConvReluBn => self.bn.forward_f64(&self.relu.forward_f64(&z)?),
        }
    }
}

impl Forward64 for Stage {
    fn forward_f64(&self, x: &Map64) -> Result<Map64> {
        let mut cur = x.clone();
        for block in &self.blocks {
            cur = block.forward_f64(&cur)?;
        }
        Ok(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{rng_from_seed, uniform_pm1};
    use crate::layers::gradcheck::{gradient_check, Differentiable, GradCheckConfig};

    struct BlockModule(ConvBlock);

    impl Forward64 for BlockModule {
        fn forward_f64(&self, x: &Map64) -> Result<Map64> {
            self.0.forward_f64(x)
        }
    }

    impl Differentiable for BlockModule {
        fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
            self.0.forward(x)
        }
        fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4> {
            self.0.backward(grad)
        }
        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            self.0.parameters_mut()
        }
    }

    #[test]
    fn both_block_orders_pass_gradient_check() {
        for order in [BlockOrder::ConvBnRelu, BlockOrder::ConvReluBn] {
            let mut rng = rng_from_seed(31);
            let block = ConvBlock::new("b", 2, 3, order, &mut rng);
            let x = uniform_pm1((2, 2, 4, 4), &mut rng);
            let report = gradient_check(
                &mut BlockModule(block),
                &x,
                &GradCheckConfig {
                    samples_per_tensor: 12,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(
                report.passed,
                "{:?}: max err {}",
                order, report.max_rel_err
            );
        }
    }

    #[test]
    fn block_orders_differ_numerically() {
        let mut rng = rng_from_seed(32);
        let mut a = ConvBlock::new("b", 2, 3, BlockOrder::ConvBnRelu, &mut rng);
        let mut rng2 = rng_from_seed(32);
        let mut b = ConvBlock::new("b", 2, 3, BlockOrder::ConvReluBn, &mut rng2);
        let x = uniform_pm1((2, 2, 4, 4), &mut rng);
        let ya = a.forward(&x).unwrap();
        let yb = b.forward(&x).unwrap();
        assert_ne!(ya.data(), yb.data());
    }

    #[test]
    fn zeroed_block_outputs_zero_in_both_orders() {
        for order in [BlockOrder::ConvBnRelu, BlockOrder::ConvReluBn] {
            let mut rng = rng_from_seed(33);
            let mut block = ConvBlock::new("b", 2, 2, order, &mut rng);
            block.zero_conv();
            let x = uniform_pm1((2, 2, 4, 4), &mut rng);
            let y = block.forward(&x).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.0), "{order:?}");
        }
    }
}
