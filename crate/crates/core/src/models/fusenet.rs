//! Two-encoder early fusion.
//!
//! Sum mode: the auxiliary encoder's activations are summed into the main
//! branch after each conv block; both branches pool independently and the
//! single decoder unpools with the main branch's indices only.
//!
//! Virtual mode: a third encoder carries a fused representation. At stage n
//! it concatenates its pooled previous activations with both encoders' block
//! outputs, passes them through a conv block, and adds the average of the two
//! encoder outputs: `v_n = block(concat(v_{n-1}, m_n, a_n)) + (m_n + a_n)/2`
//! (stage 1 concatenates the encoder outputs only). The decoder consumes the
//! virtual branch's final encoding, still unpooling with main indices.

use crate::error::{Error, Result};
use crate::init::SeededRng;
use crate::layers::oracle64::{
    add_f64, average_f64, concat_f64, pool_frozen_f64, unpool_f64, Forward64, Map64,
};
use crate::layers::{
    channel_concat, channel_split, max_pool2, max_unpool2, max_unpool2_backward, Conv2d, Mode,
    PoolIndices,
};
use crate::models::blocks::{BlockOrder, Stage};
use crate::models::segnet::{BASE_WIDTHS, STAGE_BLOCKS};
use crate::tensor::{Parameter, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    Sum,
    Virtual,
}

#[derive(Clone, Debug)]
pub struct FuseNetConfig {
    pub main_channels: usize,
    pub aux_channels: usize,
    pub num_classes: usize,
    pub widths: [usize; 5],
    pub block_order: BlockOrder,
    pub mode: FusionMode,
}

impl FuseNetConfig {
    pub fn new(main_channels: usize, aux_channels: usize, num_classes: usize, mode: FusionMode) -> Self {
        Self {
            main_channels,
            aux_channels,
            num_classes,
            widths: BASE_WIDTHS,
            block_order: BlockOrder::ConvBnRelu,
            mode,
        }
    }

    pub fn with_width_scale(mut self, scale: usize) -> Self {
        let scale = scale.max(1);
        self.widths = BASE_WIDTHS.map(|w| (w / scale).max(1));
        self
    }

    pub fn with_widths(mut self, widths: [usize; 5]) -> Self {
        self.widths = widths;
        self
    }

    pub fn with_block_order(mut self, order: BlockOrder) -> Self {
        self.block_order = order;
        self
    }

    fn encoder_channels(&self, stage: usize, input: usize) -> Vec<usize> {
        let first = if stage == 0 { input } else { self.widths[stage - 1] };
        let mut plan = vec![first];
        plan.extend(std::iter::repeat(self.widths[stage]).take(STAGE_BLOCKS[stage]));
        plan
    }

    fn virtual_channels(&self, stage: usize) -> Vec<usize> {
        let cat = if stage == 0 {
            2 * self.widths[0]
        } else {
            self.widths[stage - 1] + 2 * self.widths[stage]
        };
        let mut plan = vec![cat];
        plan.extend(std::iter::repeat(self.widths[stage]).take(STAGE_BLOCKS[stage]));
        plan
    }

    fn decoder_channels(&self, j: usize) -> Vec<usize> {
        let s = 4 - j;
        let out = if s == 0 { self.widths[0] } else { self.widths[s - 1] };
        let mut plan = vec![self.widths[s]; STAGE_BLOCKS[s]];
        plan.push(out);
        plan
    }
}

#[derive(Clone, Debug)]
struct FuseState {
    idx_main: Vec<PoolIndices>,
    idx_aux: Vec<PoolIndices>,
    idx_virtual: Vec<PoolIndices>,
    /// Per-stage virtual activations, captured only when recording.
    virtual_outputs: Vec<Tensor4>,
    bottom: Tensor4,
}

#[derive(Clone, Debug)]
pub struct FuseNet {
    pub cfg: FuseNetConfig,
    main_enc: Vec<Stage>,
    aux_enc: Vec<Stage>,
    virtual_enc: Vec<Stage>,
    dec: Vec<Stage>,
    classifier: Conv2d,
    state: Option<FuseState>,
    record_virtual: bool,
}

impl FuseNet {
    pub fn new(cfg: FuseNetConfig, rng: &mut SeededRng) -> Self {
        let main_enc = (0..5)
            .map(|s| {
                Stage::new(
                    &format!("main_enc{s}"),
                    &cfg.encoder_channels(s, cfg.main_channels),
                    cfg.block_order,
                    rng,
                )
            })
            .collect();
        let aux_enc = (0..5)
            .map(|s| {
                Stage::new(
                    &format!("aux_enc{s}"),
                    &cfg.encoder_channels(s, cfg.aux_channels),
                    cfg.block_order,
                    rng,
                )
            })
            .collect();
        let virtual_enc = match cfg.mode {
            FusionMode::Sum => Vec::new(),
            FusionMode::Virtual => (0..5)
                .map(|s| {
                    Stage::new(
                        &format!("virtual_enc{s}"),
                        &cfg.virtual_channels(s),
                        cfg.block_order,
                        rng,
                    )
                })
                .collect(),
        };
        let dec = (0..5)
            .map(|j| Stage::new(&format!("dec{j}"), &cfg.decoder_channels(j), cfg.block_order, rng))
            .collect();
        let classifier = Conv2d::new("classifier", cfg.widths[0], cfg.num_classes, 1, 0, rng);
        Self {
            cfg,
            main_enc,
            aux_enc,
            virtual_enc,
            dec,
            classifier,
            state: None,
            record_virtual: false,
        }
    }

    fn check_inputs(&self, optical: &Tensor4, composite: &Tensor4) -> Result<()> {
        let (n, c, h, w) = optical.dims();
        let (an, ac, ah, aw) = composite.dims();
        if (n, h, w) != (an, ah, aw) {
            return Err(Error::Shape(format!(
                "fusenet: optical dims {:?} and composite dims {:?} disagree",
                optical.dims(),
                composite.dims()
            )));
        }
        if c != self.cfg.main_channels || ac != self.cfg.aux_channels {
            return Err(Error::Shape(format!(
                "fusenet: got {c}/{ac} channels, expected {}/{}",
                self.cfg.main_channels, self.cfg.aux_channels
            )));
        }
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!(
                "fusenet: spatial dims must be divisible by 32, got {h}x{w}"
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, optical: &Tensor4, composite: &Tensor4) -> Result<Tensor4> {
        self.encode(optical, composite)?;
        self.decode()
    }

    fn encode(&mut self, optical: &Tensor4, composite: &Tensor4) -> Result<()> {
        self.check_inputs(optical, composite)?;
        let mut main = optical.clone();
        let mut aux = composite.clone();
        let mut fused = None; // virtual branch carrier
        let mut idx_main = Vec::with_capacity(5);
        let mut idx_aux = Vec::with_capacity(5);
        let mut idx_virtual = Vec::with_capacity(5);
        let mut virtual_outputs = Vec::new();

        for s in 0..5 {
            let m = self.main_enc[s].forward(&main)?;
            let a = self.aux_enc[s].forward(&aux)?;
            match self.cfg.mode {
                FusionMode::Sum => {
                    let f = m.add(&a)?;
                    let (pooled, idx) = max_pool2(&f)?;
                    idx_main.push(idx);
                    main = pooled;
                    let (a_pooled, aidx) = max_pool2(&a)?;
                    idx_aux.push(aidx);
                    aux = a_pooled;
                }
                FusionMode::Virtual => {
                    let cat = match &fused {
                        None => channel_concat(&[&m, &a])?,
                        Some(v_prev) => channel_concat(&[v_prev, &m, &a])?,
                    };
                    let residual = self.virtual_enc[s].forward(&cat)?;
                    let v = residual.add(&m.average(&a)?)?;
                    if self.record_virtual {
                        virtual_outputs.push(v.clone());
                    }
                    let (m_pooled, midx) = max_pool2(&m)?;
                    idx_main.push(midx);
                    main = m_pooled;
                    let (a_pooled, aidx) = max_pool2(&a)?;
                    idx_aux.push(aidx);
                    aux = a_pooled;
                    let (v_pooled, vidx) = max_pool2(&v)?;
                    idx_virtual.push(vidx);
                    fused = Some(v_pooled);
                }
            }
        }
        let bottom = match self.cfg.mode {
            FusionMode::Sum => main,
            FusionMode::Virtual => fused.expect("virtual branch ran for all stages"),
        };
        self.state = Some(FuseState {
            idx_main,
            idx_aux,
            idx_virtual,
            virtual_outputs,
            bottom,
        });
        Ok(())
    }

    fn decode(&mut self) -> Result<Tensor4> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::State("fusenet: decode before encode".into()))?;
        let mut cur = state.bottom.clone();
        let idx_main = state.idx_main.clone();
        for (j, stage) in self.dec.iter_mut().enumerate() {
            let unpooled = max_unpool2(&cur, &idx_main[4 - j])?;
            cur = stage.forward(&unpooled)?;
        }
        self.classifier.forward(&cur)
    }

    /// Returns `(dL/d optical, dL/d composite)`.
    pub fn backward(&mut self, grad_scores: &Tensor4) -> Result<(Tensor4, Tensor4)> {
        let state = self
            .state
            .clone()
            .ok_or_else(|| Error::State("fusenet: backward before forward".into()))?;

        let mut g = self.classifier.backward(grad_scores)?;
        for j in (0..5).rev() {
            let g_unpooled = self.dec[j].backward(&g)?;
            g = max_unpool2_backward(&g_unpooled, &state.idx_main[4 - j])?;
        }

        match self.cfg.mode {
            FusionMode::Sum => {
                let mut g_main = g; // gradient at the pooled fused output of stage 4
                let mut g_aux: Option<Tensor4> = None;
                for s in (0..5).rev() {
                    let g_fused = max_unpool2(&g_main, &state.idx_main[s])?;
                    let mut g_a = match g_aux.take() {
                        Some(ga) => max_unpool2(&ga, &state.idx_aux[s])?.add(&g_fused)?,
                        None => g_fused.clone(),
                    };
                    g_main = self.main_enc[s].backward(&g_fused)?;
                    g_a = self.aux_enc[s].backward(&g_a)?;
                    g_aux = Some(g_a);
                }
                Ok((g_main, g_aux.expect("five stages processed")))
            }
            FusionMode::Virtual => {
                let mut g_v = Some(g); // gradient at the pooled virtual output of stage 4
                let mut g_main: Option<Tensor4> = None;
                let mut g_aux: Option<Tensor4> = None;
                for s in (0..5).rev() {
                    let gv = max_unpool2(&g_v.take().expect("virtual grad present"), &state.idx_virtual[s])?;
                    // v = residual + (m + a) / 2
                    let g_residual = gv.clone();
                    let g_cat = self.virtual_enc[s].backward(&g_residual)?;
                    let widths = &self.cfg.widths;
                    let (g_v_prev, g_m_cat, g_a_cat) = if s == 0 {
                        let parts = channel_split(&g_cat, &[widths[0], widths[0]])?;
                        let mut it = parts.into_iter();
                        (None, it.next().unwrap(), it.next().unwrap())
                    } else {
                        let parts =
                            channel_split(&g_cat, &[widths[s - 1], widths[s], widths[s]])?;
                        let mut it = parts.into_iter();
                        (Some(it.next().unwrap()), it.next().unwrap(), it.next().unwrap())
                    };

                    let half = gv.scale(0.5);
                    let mut g_m = g_m_cat.add(&half)?;
                    if let Some(gm_pooled) = g_main.take() {
                        g_m.add_assign(&max_unpool2(&gm_pooled, &state.idx_main[s])?)?;
                    }
                    let mut g_a = g_a_cat.add(&half)?;
                    if let Some(ga_pooled) = g_aux.take() {
                        g_a.add_assign(&max_unpool2(&ga_pooled, &state.idx_aux[s])?)?;
                    }

                    g_main = Some(self.main_enc[s].backward(&g_m)?);
                    g_aux = Some(self.aux_enc[s].backward(&g_a)?);
                    g_v = g_v_prev;
                }
                Ok((
                    g_main.expect("five stages processed"),
                    g_aux.expect("five stages processed"),
                ))
            }
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for stage in self
            .main_enc
            .iter_mut()
            .chain(self.aux_enc.iter_mut())
            .chain(self.virtual_enc.iter_mut())
            .chain(self.dec.iter_mut())
        {
            stage.set_mode(mode);
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps: Vec<&mut Parameter> = Vec::new();
        for stage in &mut self.main_enc {
            ps.extend(stage.parameters_mut());
        }
        for stage in &mut self.aux_enc {
            ps.extend(stage.parameters_mut());
        }
        for stage in &mut self.virtual_enc {
            ps.extend(stage.parameters_mut());
        }
        for stage in &mut self.dec {
            ps.extend(stage.parameters_mut());
        }
        ps.extend(self.classifier.parameters_mut());
        ps
    }

    pub fn set_encoder_lr_multiplier(&mut self, m: f32) {
        for stage in self.main_enc.iter_mut().chain(self.aux_enc.iter_mut()) {
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
        for stage in &mut self.main_enc {
            bns.extend(stage.bn_layers_mut());
        }
        for stage in &mut self.aux_enc {
            bns.extend(stage.bn_layers_mut());
        }
        for stage in &mut self.virtual_enc {
            bns.extend(stage.bn_layers_mut());
        }
        for stage in &mut self.dec {
            bns.extend(stage.bn_layers_mut());
        }
        bns
    }

    /// Zeroes every auxiliary-encoder convolution so the aux activations
    /// vanish (test helper).
    pub fn zero_aux_convs(&mut self) {
        for stage in &mut self.aux_enc {
            stage.zero_convs();
        }
    }

    /// Zeroes every virtual-branch convolution (test helper).
    pub fn zero_virtual_convs(&mut self) {
        for stage in &mut self.virtual_enc {
            stage.zero_convs();
        }
    }

    /// Records per-stage virtual activations on subsequent forwards.
    pub fn record_virtual_outputs(&mut self, on: bool) {
        self.record_virtual = on;
    }

    pub fn recorded_virtual_outputs(&self) -> &[Tensor4] {
        self.state
            .as_ref()
            .map(|s| s.virtual_outputs.as_slice())
            .unwrap_or(&[])
    }
}

impl Forward64 for FuseNet {
    /// Mirrors the full forward with f64 accumulation and pinned pooling
    /// routing. The input carries both modalities stacked on the channel
    /// axis (main channels first).
    fn forward_f64(&self, x: &Map64) -> Result<Map64> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::State("fusenet: oracle evaluation needs a prior forward".into()))?;
        let parts = crate::layers::oracle64::split_f64(
            x,
            &[self.cfg.main_channels, self.cfg.aux_channels],
        )?;
        let mut main = parts[0].clone();
        let mut aux = parts[1].clone();
        let mut fused: Option<Map64> = None;
        for s in 0..5 {
            let m = self.main_enc[s].forward_f64(&main)?;
            let a = self.aux_enc[s].forward_f64(&aux)?;
            match self.cfg.mode {
                FusionMode::Sum => {
                    let f = add_f64(&m, &a)?;
                    main = pool_frozen_f64(&f, &state.idx_main[s])?;
                    aux = pool_frozen_f64(&a, &state.idx_aux[s])?;
                }
                FusionMode::Virtual => {
                    let cat = match &fused {
                        None => concat_f64(&[&m, &a])?,
                        Some(v_prev) => concat_f64(&[v_prev, &m, &a])?,
                    };
                    let residual = self.virtual_enc[s].forward_f64(&cat)?;
                    let v = add_f64(&residual, &average_f64(&m, &a)?)?;
                    main = pool_frozen_f64(&m, &state.idx_main[s])?;
                    aux = pool_frozen_f64(&a, &state.idx_aux[s])?;
                    fused = Some(pool_frozen_f64(&v, &state.idx_virtual[s])?);
                }
            }
        }
        let mut cur = match self.cfg.mode {
            FusionMode::Sum => main,
            FusionMode::Virtual => fused.expect("virtual branch ran"),
        };
        for (j, stage) in self.dec.iter().enumerate() {
            let unpooled = unpool_f64(&cur, &state.idx_main[4 - j])?;
            cur = stage.forward_f64(&unpooled)?;
        }
        self.classifier.forward_f64(&cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{rng_from_seed, uniform_pm1};
    use crate::models::segnet::{SegNet, SegNetConfig};

    fn tiny_cfg(mode: FusionMode) -> FuseNetConfig {
        FuseNetConfig::new(3, 3, 6, mode).with_widths([4, 4, 4, 4, 4])
    }

    #[test]
    fn shape_contract() {
        for mode in [FusionMode::Sum, FusionMode::Virtual] {
            let mut rng = rng_from_seed(51);
            let mut net = FuseNet::new(tiny_cfg(mode), &mut rng);
            let optical = uniform_pm1((1, 3, 64, 64), &mut rng);
            let composite = uniform_pm1((1, 3, 64, 64), &mut rng);
            let scores = net.forward(&optical, &composite).unwrap();
            assert_eq!(scores.dims(), (1, 6, 64, 64));
        }
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let mut rng = rng_from_seed(52);
        let mut net = FuseNet::new(tiny_cfg(FusionMode::Sum), &mut rng);
        let optical = uniform_pm1((1, 3, 64, 64), &mut rng);
        let composite = uniform_pm1((1, 3, 32, 32), &mut rng);
        assert!(matches!(
            net.forward(&optical, &composite),
            Err(Error::Shape(_))
        ));
    }

    /// With the aux encoder zeroed, sum-mode output must equal a plain
    /// SegNet carrying the same main-encoder/decoder weights.
    #[test]
    fn zero_aux_reduces_to_segnet() {
        let mut rng = rng_from_seed(53);
        let mut fuse = FuseNet::new(tiny_cfg(FusionMode::Sum), &mut rng);
        fuse.zero_aux_convs();

        let mut seg = SegNet::new(
            SegNetConfig::new(3, 6).with_widths([4, 4, 4, 4, 4]),
            &mut rng_from_seed(99),
        );
        // copy main encoder + decoder + classifier weights by name
        let fuse_values: std::collections::BTreeMap<String, Tensor4> = fuse
            .parameters_mut()
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for p in seg.parameters_mut() {
            let source = if p.name.starts_with("enc") {
                format!("main_{}", p.name)
            } else {
                p.name.clone()
            };
            p.value = fuse_values
                .get(&source)
                .unwrap_or_else(|| panic!("missing {source}"))
                .clone();
        }

        let optical = uniform_pm1((2, 3, 32, 32), &mut rng);
        let composite = uniform_pm1((2, 3, 32, 32), &mut rng);
        let fused = fuse.forward(&optical, &composite).unwrap();
        let plain = crate::models::segnet::SegNet::forward(&mut seg, &optical).unwrap();
        assert_eq!(fused.data(), plain.full.data());
    }

    /// Zero-initialized virtual blocks leave the residual path empty, so the
    /// virtual activation is exactly the average of the encoder outputs.
    #[test]
    fn zeroed_virtual_block_passes_average() {
        let mut rng = rng_from_seed(54);
        let mut net = FuseNet::new(tiny_cfg(FusionMode::Virtual), &mut rng);
        net.zero_virtual_convs();
        net.record_virtual_outputs(true);
        let optical = uniform_pm1((1, 3, 32, 32), &mut rng);
        let composite = uniform_pm1((1, 3, 32, 32), &mut rng);

        // replicate the per-stage encoder outputs with identical weights
        let mut reference = FuseNet::new(tiny_cfg(FusionMode::Virtual), &mut rng_from_seed(54));
        reference.zero_virtual_convs();
        let mut m_in = optical.clone();
        let mut a_in = composite.clone();
        net.forward(&optical, &composite).unwrap();
        let recorded = net.recorded_virtual_outputs().to_vec();
        assert_eq!(recorded.len(), 5);
        for s in 0..5 {
            let m = reference.main_enc[s].forward(&m_in).unwrap();
            let a = reference.aux_enc[s].forward(&a_in).unwrap();
            let avg = m.average(&a).unwrap();
            let diff: f32 = recorded[s]
                .data()
                .iter()
                .zip(avg.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f32::max);
            assert!(diff == 0.0, "stage {s}: max diff {diff}");
            m_in = max_pool2(&m).unwrap().0;
            a_in = max_pool2(&a).unwrap().0;
        }
    }

    /// Sum-mode output must not depend on auxiliary pool indices: the
    /// decoder routes main indices only.
    #[test]
    fn aux_indices_do_not_reach_decoder() {
        let mut rng = rng_from_seed(55);
        let mut net = FuseNet::new(tiny_cfg(FusionMode::Sum), &mut rng);
        let optical = uniform_pm1((1, 3, 32, 32), &mut rng);
        let composite = uniform_pm1((1, 3, 32, 32), &mut rng);
        let clean = net.forward(&optical, &composite).unwrap();

        net.encode(&optical, &composite).unwrap();
        if let Some(state) = net.state.as_mut() {
            for idx in &mut state.idx_aux {
                for coord in idx.coords_mut() {
                    *coord = 0;
                }
            }
        }
        let corrupted = net.decode().unwrap();
        assert_eq!(clean.data(), corrupted.data());
    }

    #[test]
    fn backward_produces_gradients_for_both_encoders() {
        for mode in [FusionMode::Sum, FusionMode::Virtual] {
            let mut rng = rng_from_seed(56);
            let mut net = FuseNet::new(tiny_cfg(mode), &mut rng);
            let optical = uniform_pm1((1, 3, 32, 32), &mut rng);
            let composite = uniform_pm1((1, 3, 32, 32), &mut rng);
            let scores = net.forward(&optical, &composite).unwrap();
            net.zero_grads();
            let g = uniform_pm1(scores.dims(), &mut rng);
            let (g_opt, g_comp) = net.backward(&g).unwrap();
            assert_eq!(g_opt.dims(), optical.dims());
            assert_eq!(g_comp.dims(), composite.dims());
            let main_norm: f32 = net.main_enc[0]
                .parameters_mut()
                .iter()
                .flat_map(|p| p.grad.data())
                .map(|v| v.abs())
                .sum();
            let aux_norm: f32 = net.aux_enc[0]
                .parameters_mut()
                .iter()
                .flat_map(|p| p.grad.data())
                .map(|v| v.abs())
                .sum();
            assert!(main_norm > 0.0 && aux_norm > 0.0, "{mode:?}");
        }
    }
}
