//! Late fusion by learned residual correction.
//!
//! Frozen base networks each produce class scores and their final decoder
//! feature maps. The ensemble averages the per-base softmax probabilities and
//! adds a correction term inferred by a small network from the concatenated
//! feature maps: `P' = P_avg + c`. The final correction conv starts at zero,
//! so an untrained ensemble reproduces the base average exactly; training
//! updates the correction parameters only and never backpropagates into the
//! bases.

use crate::error::{Error, Result};
use crate::init::SeededRng;
use crate::layers::{channel_concat, Conv2d, Mode, Relu};
use crate::models::segnet::SegNet;
use crate::tensor::{softmax_channels, Parameter, Tensor4};

/// Which input tile a base network consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Optical,
    Composite,
}

impl Modality {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "optical" => Some(Self::Optical),
            "composite" => Some(Self::Composite),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Optical => "optical",
            Self::Composite => "composite",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaseModel {
    pub net: SegNet,
    pub modality: Modality,
}

#[derive(Clone, Debug)]
pub struct ResidualCorrection {
    pub bases: Vec<BaseModel>,
    conv1: Conv2d,
    relu1: Relu,
    conv2: Conv2d,
    relu2: Relu,
    conv3: Conv2d,
}

impl ResidualCorrection {
    /// Correction head widths are 32, 32, k; the last conv is zero-initialized.
    pub fn new(bases: Vec<BaseModel>, rng: &mut SeededRng) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::Arg("residual correction needs at least one base".into()));
        }
        let num_classes = bases[0].net.cfg.num_classes;
        let feat_channels: usize = bases.iter().map(|b| b.net.cfg.widths[0]).sum();
        for base in &bases {
            if base.net.cfg.num_classes != num_classes {
                return Err(Error::Arg(
                    "residual correction bases disagree on class count".into(),
                ));
            }
        }
        Ok(Self {
            bases,
            conv1: Conv2d::new("correction.0", feat_channels, 32, 3, 1, rng),
            relu1: Relu::new(),
            conv2: Conv2d::new("correction.1", 32, 32, 3, 1, rng),
            relu2: Relu::new(),
            conv3: Conv2d::new_zeroed("correction.2", 32, num_classes, 3, 1),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.bases[0].net.cfg.num_classes
    }

    fn base_input<'a>(
        base: &BaseModel,
        optical: &'a Tensor4,
        composite: &'a Tensor4,
    ) -> &'a Tensor4 {
        match base.modality {
            Modality::Optical => optical,
            Modality::Composite => composite,
        }
    }

    /// `P' = mean_i softmax(scores_i) + correction(concat(features_i))`.
    pub fn forward(&mut self, optical: &Tensor4, composite: &Tensor4) -> Result<Tensor4> {
        let mut prob_sum: Option<Tensor4> = None;
        let mut features: Vec<Tensor4> = Vec::with_capacity(self.bases.len());
        let mut score_dims = None;
        for base in &mut self.bases {
            let input = Self::base_input(base, optical, composite);
            let (scores, feats) = base.net.forward_with_features(input)?;
            if let Some(dims) = score_dims {
                if scores.dims() != dims {
                    return Err(Error::Shape(format!(
                        "residual correction: base score dims {:?} disagree with {:?}",
                        scores.dims(),
                        dims
                    )));
                }
            } else {
                score_dims = Some(scores.dims());
            }
            let probs = softmax_channels(&scores);
            prob_sum = Some(match prob_sum {
                None => probs,
                Some(acc) => acc.add(&probs)?,
            });
            features.push(feats);
        }
        let avg = prob_sum
            .expect("at least one base")
            .scale(1.0 / self.bases.len() as f32);

        let refs: Vec<&Tensor4> = features.iter().collect();
        let cat = channel_concat(&refs)?;
        let c = self.correction_forward(&cat)?;
        avg.add(&c)
    }

    fn correction_forward(&mut self, cat: &Tensor4) -> Result<Tensor4> {
        let z = self.relu1.forward(&self.conv1.forward(cat)?)?;
        let z = self.relu2.forward(&self.conv2.forward(&z)?)?;
        self.conv3.forward(&z)
    }

    /// Accumulates gradients for the correction parameters only; the bases
    /// are frozen by construction (no gradient path reaches them).
    pub fn backward(&mut self, grad: &Tensor4) -> Result<()> {
        let g = self.conv3.backward(grad)?;
        let g = self.conv2.backward(&self.relu2.backward(&g)?)?;
        let _unused_base_grad = self.conv1.backward(&self.relu1.backward(&g)?)?;
        Ok(())
    }

    /// Trainable parameters: the correction convs, never the bases.
    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = self.conv1.parameters_mut();
        ps.extend(self.conv2.parameters_mut());
        ps.extend(self.conv3.parameters_mut());
        ps
    }

    /// All parameters including frozen bases (checkpoint serialization).
    pub fn all_parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps: Vec<&mut Parameter> = Vec::new();
        for base in &mut self.bases {
            ps.extend(base.net.parameters_mut());
        }
        ps.extend(self.conv1.parameters_mut());
        ps.extend(self.conv2.parameters_mut());
        ps.extend(self.conv3.parameters_mut());
        ps
    }

    /// Bases always run with their running statistics; only the correction
    /// head has no mode to switch.
    pub fn set_mode(&mut self, _mode: Mode) {
        for base in &mut self.bases {
            base.net.set_mode(Mode::Eval);
        }
    }

    /// Batch-norm layers in declaration order (checkpoint running stats).
    pub fn bn_layers_mut(&mut self) -> Vec<&mut crate::layers::BatchNorm2d> {
        let mut bns = Vec::new();
        for base in &mut self.bases {
            bns.extend(base.net.bn_layers_mut());
        }
        bns
    }

    /// FNV-1a hash over the exact bits of every base parameter; stable
    /// across training steps when the bases are truly frozen.
    pub fn base_checksum(&mut self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for base in &mut self.bases {
            for p in base.net.parameters_mut() {
                for v in p.value.data() {
                    for byte in v.to_le_bytes() {
                        hash ^= byte as u64;
                        hash = hash.wrapping_mul(0x100_0000_01b3);
                    }
                }
            }
        }
        hash
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{rng_from_seed, uniform_pm1};
    use crate::models::segnet::SegNetConfig;

    fn tiny_base(seed: u64, modality: Modality) -> BaseModel {
        let mut rng = rng_from_seed(seed);
        let mut net = SegNet::new(
            SegNetConfig::new(3, 4).with_widths([4, 4, 4, 4, 4]),
            &mut rng,
        );
        net.set_mode(Mode::Eval);
        BaseModel { net, modality }
    }

    #[test]
    fn zero_correction_equals_probability_average() {
        let mut rng = rng_from_seed(61);
        let bases = vec![
            tiny_base(1, Modality::Optical),
            tiny_base(2, Modality::Composite),
        ];
        let mut ens = ResidualCorrection::new(bases, &mut rng).unwrap();
        let optical = uniform_pm1((1, 3, 32, 32), &mut rng);
        let composite = uniform_pm1((1, 3, 32, 32), &mut rng);
        let fused = ens.forward(&optical, &composite).unwrap();

        let mut a = tiny_base(1, Modality::Optical);
        let mut b = tiny_base(2, Modality::Composite);
        let pa = softmax_channels(&a.net.forward_with_features(&optical).unwrap().0);
        let pb = softmax_channels(&b.net.forward_with_features(&composite).unwrap().0);
        let avg = pa.add(&pb).unwrap().scale(0.5);
        assert_eq!(fused.data(), avg.data());
    }

    #[test]
    fn single_base_with_zero_correction_is_identity() {
        let mut rng = rng_from_seed(62);
        let mut ens =
            ResidualCorrection::new(vec![tiny_base(3, Modality::Optical)], &mut rng).unwrap();
        let optical = uniform_pm1((1, 3, 32, 32), &mut rng);
        let composite = uniform_pm1((1, 3, 32, 32), &mut rng);
        let fused = ens.forward(&optical, &composite).unwrap();
        let mut solo = tiny_base(3, Modality::Optical);
        let p = softmax_channels(&solo.net.forward_with_features(&optical).unwrap().0);
        assert_eq!(fused.data(), p.data());
    }

    #[test]
    fn base_checksum_survives_correction_updates() {
        let mut rng = rng_from_seed(63);
        let bases = vec![
            tiny_base(4, Modality::Optical),
            tiny_base(5, Modality::Composite),
        ];
        let mut ens = ResidualCorrection::new(bases, &mut rng).unwrap();
        let before = ens.base_checksum();
        let optical = uniform_pm1((1, 3, 32, 32), &mut rng);
        let composite = uniform_pm1((1, 3, 32, 32), &mut rng);
        let out = ens.forward(&optical, &composite).unwrap();
        let g = uniform_pm1(out.dims(), &mut rng);
        ens.backward(&g).unwrap();
        // crude manual step on the trainable parameters
        for p in ens.parameters_mut() {
            let grad = p.grad.clone();
            p.value.add_assign(&grad.scale(-0.1)).unwrap();
        }
        let after_step = ens.base_checksum();
        assert_eq!(before, after_step);
        // and the correction output actually moved
        let out2 = ens.forward(&optical, &composite).unwrap();
        assert_ne!(out.data(), out2.data());
    }
}
