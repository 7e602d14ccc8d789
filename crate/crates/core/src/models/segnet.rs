//! Encoder-decoder segmentation network with pooling-index unpooling and
//! optional multi-resolution branch heads.
//!
//! The encoder has five stages of 2, 2, 3, 3, 3 conv blocks at widths
//! 64, 128, 256, 512, 512 (scaled by `width_scale`), each followed by a 2x2
//! max-pool whose argmax indices feed the mirrored decoder stage. The bottom
//! feature maps are `(h/32, w/32)`; the decoder restores full resolution and
//! a 1x1 classifier projects into label space, so output dims equal input
//! dims with `k` channels.
//!
//! With `branches > 0`, 1x1 heads after the 4th, 3rd, and 2nd decoder stages
//! produce predictions at downscale factors 2, 4, and 8; the full-resolution
//! map is their upsampled sum plus the classifier output, computed in a fixed
//! order so the aggregation identity is reproducible bit for bit.

use crate::error::{Error, Result};
use crate::init::SeededRng;
use crate::layers::oracle64::{add_f64, bilinear_f64, pool_frozen_f64, unpool_f64, Forward64, Map64};
use crate::layers::{
    bilinear_upsample, bilinear_upsample_backward, max_pool2, max_unpool2, max_unpool2_backward,
    Conv2d, Mode, PoolIndices,
};
use crate::models::blocks::{BlockOrder, Stage};
use crate::tensor::{Parameter, Tensor4};

/// Paper/VGG encoder widths before scaling.
pub const BASE_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
/// Conv blocks per encoder stage (decoder mirrors this in reverse).
pub const STAGE_BLOCKS: [usize; 5] = [2, 2, 3, 3, 3];

#[derive(Clone, Debug)]
pub struct SegNetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub widths: [usize; 5],
    pub block_order: BlockOrder,
    /// Number of auxiliary heads (0..=3). Head i attaches after decoder
    /// stage 4-i with downscale factor 2^(i+1).
    pub branches: usize,
}

impl SegNetConfig {
    pub fn new(in_channels: usize, num_classes: usize) -> Self {
        Self {
            in_channels,
            num_classes,
            widths: BASE_WIDTHS,
            block_order: BlockOrder::ConvBnRelu,
            branches: 0,
        }
    }

    /// Divides the default widths by `scale` (minimum width 1).
    pub fn with_width_scale(mut self, scale: usize) -> Self {
        let scale = scale.max(1);
        self.widths = BASE_WIDTHS.map(|w| (w / scale).max(1));
        self
    }

    pub fn with_widths(mut self, widths: [usize; 5]) -> Self {
        self.widths = widths;
        self
    }

    pub fn with_branches(mut self, branches: usize) -> Self {
        assert!(branches <= 3, "at most 3 branch heads");
        self.branches = branches;
        self
    }

    pub fn with_block_order(mut self, order: BlockOrder) -> Self {
        self.block_order = order;
        self
    }

    /// Channel plan `[in, .., out]` for one encoder stage.
    fn encoder_channels(&self, stage: usize) -> Vec<usize> {
        let input = if stage == 0 {
            self.in_channels
        } else {
            self.widths[stage - 1]
        };
        let mut plan = vec![input];
        plan.extend(std::iter::repeat(self.widths[stage]).take(STAGE_BLOCKS[stage]));
        plan
    }

    /// Channel plan for decoder stage `j` (j = 0 consumes the bottom maps).
    fn decoder_channels(&self, j: usize) -> Vec<usize> {
        let s = 4 - j; // encoder stage whose resolution this stage restores
        let out = if s == 0 {
            self.widths[0]
        } else {
            self.widths[s - 1]
        };
        let mut plan = vec![self.widths[s]; STAGE_BLOCKS[s]];
        plan.push(out);
        plan
    }

    fn decoder_out_width(&self, j: usize) -> usize {
        *self.decoder_channels(j).last().expect("non-empty plan")
    }
}

#[derive(Clone, Debug)]
struct BranchHead {
    /// Decoder stage index after which this head taps the features.
    attach: usize,
    /// Downscale factor of the produced map (2, 4, or 8).
    factor: usize,
    conv: Conv2d,
}

/// Per-forward state consumed by the backward pass.
#[derive(Clone, Debug)]
struct SegNetState {
    pool_indices: Vec<PoolIndices>,
    last_features: Tensor4,
    head0: Tensor4,
}

#[derive(Clone, Debug)]
pub struct SegNet {
    pub cfg: SegNetConfig,
    enc: Vec<Stage>,
    dec: Vec<Stage>,
    classifier: Conv2d,
    heads: Vec<BranchHead>,
    state: Option<SegNetState>,
}

/// Everything a multi-scale forward produces. With no branches,
/// `full == head0`.
#[derive(Clone, Debug)]
pub struct SegNetOutput {
    pub full: Tensor4,
    /// Full-resolution classifier output before branch aggregation.
    pub head0: Tensor4,
    /// `(downscale factor, prediction map)` pairs in factor order 2, 4, 8.
    pub branches: Vec<(usize, Tensor4)>,
}

impl SegNet {
    pub fn new(cfg: SegNetConfig, rng: &mut SeededRng) -> Self {
        let enc = (0..5)
            .map(|s| Stage::new(&format!("enc{s}"), &cfg.encoder_channels(s), cfg.block_order, rng))
            .collect();
        let dec = (0..5)
            .map(|j| Stage::new(&format!("dec{j}"), &cfg.decoder_channels(j), cfg.block_order, rng))
            .collect();
        let classifier = Conv2d::new(
            "classifier",
            cfg.widths[0],
            cfg.num_classes,
            1,
            0,
            rng,
        );
        let heads = (0..cfg.branches)
            .map(|i| {
                let attach = 3 - i;
                let factor = 1usize << (i + 1);
                BranchHead {
                    attach,
                    factor,
                    conv: Conv2d::new(
                        &format!("head_d{factor}"),
                        cfg.decoder_out_width(attach),
                        cfg.num_classes,
                        1,
                        0,
                        rng,
                    ),
                }
            })
            .collect();
        Self {
            cfg,
            enc,
            dec,
            classifier,
            heads,
            state: None,
        }
    }

    pub fn num_branches(&self) -> usize {
        self.heads.len()
    }

    pub fn branch_factors(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.factor).collect()
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let (_, c, h, w) = x.dims();
        if c != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "segnet: input has {c} channels, expected {}",
                self.cfg.in_channels
            )));
        }
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!(
                "segnet: spatial dims must be divisible by 32, got {h}x{w}"
            )));
        }
        Ok(())
    }

    /// Full forward pass; caches everything the backward pass needs.
    pub fn forward(&mut self, x: &Tensor4) -> Result<SegNetOutput> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut pool_indices = Vec::with_capacity(5);
        for stage in self.enc.iter_mut() {
            let features = stage.forward(&cur)?;
            let (pooled, idx) = max_pool2(&features)?;
            pool_indices.push(idx);
            cur = pooled;
        }

        let mut branch_maps: Vec<(usize, Tensor4)> = Vec::with_capacity(self.heads.len());
        for (j, stage) in self.dec.iter_mut().enumerate() {
            let unpooled = max_unpool2(&cur, &pool_indices[4 - j])?;
            cur = stage.forward(&unpooled)?;
            for head in &mut self.heads {
                if head.attach == j {
                    branch_maps.push((head.factor, head.conv.forward(&cur)?));
                }
            }
        }
        let last_features = cur;
        let head0 = self.classifier.forward(&last_features)?;

        // Aggregation order is fixed: head0, then factors 2, 4, 8.
        branch_maps.sort_by_key(|(factor, _)| *factor);
        let mut full = head0.clone();
        for (factor, map) in &branch_maps {
            full = full.add(&bilinear_upsample(map, *factor)?)?;
        }

        self.state = Some(SegNetState {
            pool_indices,
            last_features: last_features.clone(),
            head0: head0.clone(),
        });
        Ok(SegNetOutput {
            full,
            head0,
            branches: branch_maps,
        })
    }

    /// Scores plus the decoder's final feature maps (the correction
    /// ensemble's input).
    pub fn forward_with_features(&mut self, x: &Tensor4) -> Result<(Tensor4, Tensor4)> {
        let out = self.forward(x)?;
        let feats = self
            .state
            .as_ref()
            .expect("state cached by forward")
            .last_features
            .clone();
        Ok((out.full, feats))
    }

    /// Backpropagates the full-resolution gradient plus per-branch own-loss
    /// gradients (ordered by factor, may be empty to skip branch losses).
    /// Each branch head receives the sum of its own-loss gradient and the
    /// aggregation path `f_d^T(grad_full)`. Returns dL/dx.
    pub fn backward(&mut self, grad_full: &Tensor4, branch_grads: &[Tensor4]) -> Result<Tensor4> {
        let state = self
            .state
            .clone()
            .ok_or_else(|| Error::State("segnet: backward before forward".into()))?;
        if !branch_grads.is_empty() && branch_grads.len() != self.heads.len() {
            return Err(Error::Arg(format!(
                "segnet backward: got {} branch gradients for {} heads",
                branch_grads.len(),
                self.heads.len()
            )));
        }
        if grad_full.dims() != state.head0.dims() {
            return Err(Error::Shape(format!(
                "segnet backward: grad dims {:?}, expected {:?}",
                grad_full.dims(),
                state.head0.dims()
            )));
        }

        // Heads are ordered by increasing factor, matching branch_grads.
        let mut head_grads: Vec<Option<Tensor4>> = vec![None; self.heads.len()];
        for (i, head) in self.heads.iter().enumerate() {
            let (_, _, h, w) = state.head0.dims();
            let dims = (
                grad_full.batch(),
                self.cfg.num_classes,
                h / head.factor,
                w / head.factor,
            );
            let mut g = bilinear_upsample_backward(grad_full, head.factor, dims)?;
            if !branch_grads.is_empty() {
                g.add_assign(&branch_grads[i])?;
            }
            head_grads[i] = Some(g);
        }

        let mut g = self.classifier.backward(grad_full)?;
        for j in (0..5).rev() {
            for (i, head) in self.heads.iter_mut().enumerate() {
                if head.attach == j {
                    let hg = head_grads[i].take().expect("each head visited once");
                    g.add_assign(&head.conv.backward(&hg)?)?;
                }
            }
            let g_unpooled = self.dec[j].backward(&g)?;
            g = max_unpool2_backward(&g_unpooled, &state.pool_indices[4 - j])?;
        }
        for s in (0..5).rev() {
            let g_features = max_unpool2(&g, &state.pool_indices[s])?;
            g = self.enc[s].backward(&g_features)?;
        }
        Ok(g)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for stage in self.enc.iter_mut().chain(self.dec.iter_mut()) {
            stage.set_mode(mode);
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps: Vec<&mut Parameter> = Vec::new();
        for stage in &mut self.enc {
            ps.extend(stage.parameters_mut());
        }
        for stage in &mut self.dec {
            ps.extend(stage.parameters_mut());
        }
        ps.extend(self.classifier.parameters_mut());
        for head in &mut self.heads {
            ps.extend(head.conv.parameters_mut());
        }
        ps
    }

    /// Applies a learning-rate multiplier to all encoder parameters, the
    /// hook used to train pre-initialized encoders at a reduced rate.
    pub fn set_encoder_lr_multiplier(&mut self, m: f32) {
        for stage in &mut self.enc {
            for p in stage.parameters_mut() {
                p.lr_multiplier = m;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// Batch-norm layers in declaration order (checkpoint running stats).
    pub fn bn_layers_mut(&mut self) -> Vec<&mut crate::layers::BatchNorm2d> {
        let mut bns = Vec::new();
        for stage in &mut self.enc {
            bns.extend(stage.bn_layers_mut());
        }
        for stage in &mut self.dec {
            bns.extend(stage.bn_layers_mut());
        }
        bns
    }

    /// Zeroes the classifier projection (test helper).
    pub fn zero_classifier(&mut self) {
        self.classifier.zero_weights();
    }

    /// Zeroes every branch head projection (test helper).
    pub fn zero_branch_heads(&mut self) {
        for head in &mut self.heads {
            head.conv.zero_weights();
        }
    }
}

impl Forward64 for SegNet {
    /// Mirrors `forward` with f64 accumulation; pooling reuses the argmax
    /// coordinates of the last production forward, so the evaluated function
    /// is the smooth branch the backward pass differentiates.
    fn forward_f64(&self, x: &Map64) -> Result<Map64> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::State("segnet: oracle evaluation needs a prior forward".into()))?;
        let mut cur = x.clone();
        for (s, stage) in self.enc.iter().enumerate() {
            let features = stage.forward_f64(&cur)?;
            cur = pool_frozen_f64(&features, &state.pool_indices[s])?;
        }
        let mut branch_maps: Vec<(usize, Map64)> = Vec::with_capacity(self.heads.len());
        for (j, stage) in self.dec.iter().enumerate() {
            let unpooled = unpool_f64(&cur, &state.pool_indices[4 - j])?;
            cur = stage.forward_f64(&unpooled)?;
            for head in &self.heads {
                if head.attach == j {
                    branch_maps.push((head.factor, head.conv.forward_f64(&cur)?));
                }
            }
        }
        let head0 = self.classifier.forward_f64(&cur)?;
        branch_maps.sort_by_key(|(factor, _)| *factor);
        let mut full = head0;
        for (factor, map) in &branch_maps {
            full = add_f64(&full, &bilinear_f64(map, *factor)?)?;
        }
        Ok(full)
    }
}

impl crate::layers::Differentiable for SegNet {
    fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        Ok(SegNet::forward(self, x)?.full)
    }

    fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4> {
        SegNet::backward(self, grad, &[])
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        SegNet::parameters_mut(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{rng_from_seed, uniform_pm1};
    use crate::tensor::softmax_channels;

    fn tiny_cfg(branches: usize) -> SegNetConfig {
        SegNetConfig::new(3, 6)
            .with_widths([4, 4, 4, 4, 4])
            .with_branches(branches)
    }

    #[test]
    fn output_shape_matches_contract() {
        let mut rng = rng_from_seed(41);
        let mut net = SegNet::new(tiny_cfg(0), &mut rng);
        let x = uniform_pm1((1, 3, 64, 64), &mut rng);
        let out = net.forward(&x).unwrap();
        assert_eq!(out.full.dims(), (1, 6, 64, 64));
    }

    #[test]
    fn shape_contract_holds_across_sizes() {
        let mut rng = rng_from_seed(42);
        let mut net = SegNet::new(tiny_cfg(3), &mut rng);
        for hw in [32usize, 64, 96] {
            let x = uniform_pm1((1, 3, hw, hw), &mut rng);
            let out = net.forward(&x).unwrap();
            assert_eq!(out.full.dims(), (1, 6, hw, hw));
        }
    }

    #[test]
    fn indivisible_dims_rejected() {
        let mut rng = rng_from_seed(43);
        let mut net = SegNet::new(tiny_cfg(0), &mut rng);
        let x = uniform_pm1((1, 3, 48, 64), &mut rng);
        assert!(matches!(net.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_classifier_gives_uniform_softmax() {
        let mut rng = rng_from_seed(44);
        let mut net = SegNet::new(tiny_cfg(0), &mut rng);
        net.zero_classifier();
        let x = uniform_pm1((1, 3, 32, 32), &mut rng);
        let out = net.forward(&x).unwrap();
        assert!(out.full.data().iter().all(|&v| v == 0.0));
        let p = softmax_channels(&out.full);
        let want = 1.0 / 6.0;
        assert!(p.data().iter().all(|&v| (v - want).abs() < 1e-6));
    }

    #[test]
    fn zeroed_branch_heads_leave_full_equal_to_head0() {
        let mut rng = rng_from_seed(45);
        let mut net = SegNet::new(tiny_cfg(3), &mut rng);
        net.zero_branch_heads();
        let x = uniform_pm1((1, 3, 32, 32), &mut rng);
        let out = net.forward(&x).unwrap();
        assert_eq!(out.full.data(), out.head0.data());
        for (_, map) in &out.branches {
            assert!(map.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn aggregation_identity_is_bit_exact() {
        let mut rng = rng_from_seed(46);
        let mut net = SegNet::new(tiny_cfg(3), &mut rng);
        let x = uniform_pm1((1, 3, 32, 32), &mut rng);
        let out = net.forward(&x).unwrap();
        assert_eq!(out.branches.len(), 3);
        let mut recomputed = out.head0.clone();
        for (factor, map) in &out.branches {
            recomputed = recomputed
                .add(&bilinear_upsample(map, *factor).unwrap())
                .unwrap();
        }
        assert_eq!(out.full.data(), recomputed.data());
    }

    #[test]
    fn branch_placement_matches_downscale_factors() {
        let mut rng = rng_from_seed(47);
        let mut net = SegNet::new(tiny_cfg(3), &mut rng);
        let x = uniform_pm1((1, 3, 64, 64), &mut rng);
        let out = net.forward(&x).unwrap();
        let dims: Vec<_> = out
            .branches
            .iter()
            .map(|(f, m)| (*f, m.height(), m.width()))
            .collect();
        assert_eq!(dims, vec![(2, 32, 32), (4, 16, 16), (8, 8, 8)]);
    }

    #[test]
    fn single_branch_topology() {
        let mut rng = rng_from_seed(48);
        let net = SegNet::new(tiny_cfg(1), &mut rng);
        assert_eq!(net.num_branches(), 1);
        assert_eq!(net.branch_factors(), vec![2]);
    }

    #[test]
    fn full_loss_reaches_branch_weights() {
        let mut rng = rng_from_seed(49);
        let mut net = SegNet::new(tiny_cfg(3), &mut rng);
        let x = uniform_pm1((1, 3, 32, 32), &mut rng);
        let out = net.forward(&x).unwrap();
        net.zero_grads();
        let g = uniform_pm1(out.full.dims(), &mut rng);
        net.backward(&g, &[]).unwrap();
        for head in &mut net.heads {
            let norm: f32 = head.conv.weight.grad.data().iter().map(|v| v.abs()).sum();
            assert!(norm > 0.0, "branch head got no gradient from the full loss");
        }
    }
}
