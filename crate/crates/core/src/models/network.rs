//! Architecture-erased wrapper used by the training loop, inference, and
//! checkpointing.

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::models::correction::{Modality, ResidualCorrection};
use crate::models::fusenet::{FuseNet, FusionMode};
use crate::models::segnet::SegNet;
use crate::tensor::{Parameter, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    SegNet,
    SegNetMs,
    FuseNetSum,
    FuseNetVirtual,
    ResidualCorrection,
}

impl Architecture {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "segnet" => Self::SegNet,
            "segnet_ms" => Self::SegNetMs,
            "fusenet_sum" => Self::FuseNetSum,
            "fusenet_virtual" => Self::FuseNetVirtual,
            "residual_correction" => Self::ResidualCorrection,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SegNet => "segnet",
            Self::SegNetMs => "segnet_ms",
            Self::FuseNetSum => "fusenet_sum",
            Self::FuseNetVirtual => "fusenet_virtual",
            Self::ResidualCorrection => "residual_correction",
        }
    }
}

/// Forward outputs: the full-resolution score map plus any auxiliary branch
/// maps the architecture produces.
#[derive(Clone, Debug)]
pub struct NetOutput {
    pub full: Tensor4,
    pub branches: Vec<(usize, Tensor4)>,
}

pub enum Network {
    SegNet { net: SegNet, modality: Modality },
    FuseNet(FuseNet),
    Correction(ResidualCorrection),
}

impl Network {
    pub fn architecture(&self) -> Architecture {
        match self {
            Self::SegNet { net, .. } => {
                if net.num_branches() > 0 {
                    Architecture::SegNetMs
                } else {
                    Architecture::SegNet
                }
            }
            Self::FuseNet(net) => match net.cfg.mode {
                FusionMode::Sum => Architecture::FuseNetSum,
                FusionMode::Virtual => Architecture::FuseNetVirtual,
            },
            Self::Correction(_) => Architecture::ResidualCorrection,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Self::SegNet { net, .. } => net.cfg.num_classes,
            Self::FuseNet(net) => net.cfg.num_classes,
            Self::Correction(ens) => ens.num_classes(),
        }
    }

    pub fn forward(&mut self, optical: &Tensor4, composite: &Tensor4) -> Result<NetOutput> {
        match self {
            Self::SegNet { net, modality } => {
                let input = match modality {
                    Modality::Optical => optical,
                    Modality::Composite => composite,
                };
                let out = net.forward(input)?;
                Ok(NetOutput {
                    full: out.full,
                    branches: out.branches,
                })
            }
            Self::FuseNet(net) => Ok(NetOutput {
                full: net.forward(optical, composite)?,
                branches: Vec::new(),
            }),
            Self::Correction(ens) => Ok(NetOutput {
                full: ens.forward(optical, composite)?,
                branches: Vec::new(),
            }),
        }
    }

    /// `branch_grads` must align with the forward's `branches` (or be empty
    /// to skip auxiliary losses).
    pub fn backward(&mut self, grad_full: &Tensor4, branch_grads: &[Tensor4]) -> Result<()> {
        match self {
            Self::SegNet { net, .. } => {
                net.backward(grad_full, branch_grads)?;
            }
            Self::FuseNet(net) => {
                if !branch_grads.is_empty() {
                    return Err(Error::Arg("fusenet has no branch outputs".into()));
                }
                net.backward(grad_full)?;
            }
            Self::Correction(ens) => {
                if !branch_grads.is_empty() {
                    return Err(Error::Arg("residual correction has no branch outputs".into()));
                }
                ens.backward(grad_full)?;
            }
        }
        Ok(())
    }

    /// Parameters the optimizer may update. For the correction ensemble this
    /// excludes the frozen bases.
    pub fn trainable_parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Self::SegNet { net, .. } => net.parameters_mut(),
            Self::FuseNet(net) => net.parameters_mut(),
            Self::Correction(ens) => ens.parameters_mut(),
        }
    }

    /// Every parameter including frozen ones (serialization order).
    pub fn all_parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Self::SegNet { net, .. } => net.parameters_mut(),
            Self::FuseNet(net) => net.parameters_mut(),
            Self::Correction(ens) => ens.all_parameters_mut(),
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        match self {
            Self::SegNet { net, .. } => net.set_mode(mode),
            Self::FuseNet(net) => net.set_mode(mode),
            Self::Correction(ens) => ens.set_mode(mode),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.all_parameters_mut() {
            p.zero_grad();
        }
    }

    pub fn set_encoder_lr_multiplier(&mut self, m: f32) {
        match self {
            Self::SegNet { net, .. } => net.set_encoder_lr_multiplier(m),
            Self::FuseNet(net) => net.set_encoder_lr_multiplier(m),
            Self::Correction(_) => {}
        }
    }
}
