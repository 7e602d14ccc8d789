//! Sliding-window inference with overlap-averaged stitching.

use crate::data::grid::{stitch_predictions, PatchGrid};
use crate::data::patches::{crop_tensor, TileTensors};
use crate::error::Result;
use crate::layers::{bilinear_upsample, Mode};
use crate::models::network::Network;
use crate::tensor::{softmax_channels, LabelMap, Tensor4};

/// Which prediction map to stitch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictTarget {
    /// The full-resolution output.
    Full,
    /// A single auxiliary branch, upsampled to patch resolution.
    Branch(usize),
}

/// Runs the network over a sliding-window grid and averages per-window
/// softmax probabilities on the overlaps. Returns a `(1, k, H, W)`
/// probability map whose per-pixel channel sums stay 1.
pub fn predict_tile(
    net: &mut Network,
    tile: &TileTensors,
    patch_size: usize,
    stride: usize,
    batch_size: usize,
    target: PredictTarget,
) -> Result<Tensor4> {
    net.set_mode(Mode::Eval);
    let grid = PatchGrid::new(tile.height(), tile.width(), patch_size, stride)?;
    let origins = grid.origins();
    let k = net.num_classes();
    let mut windows = Tensor4::zeros((origins.len(), k, patch_size, patch_size))?;

    for chunk_start in (0..origins.len()).step_by(batch_size.max(1)) {
        let chunk = &origins[chunk_start..(chunk_start + batch_size.max(1)).min(origins.len())];
        let n = chunk.len();
        let mut optical = Tensor4::zeros((n, 3, patch_size, patch_size))?;
        let mut composite = Tensor4::zeros((n, 3, patch_size, patch_size))?;
        for (bi, &(row, col)) in chunk.iter().enumerate() {
            let opt = crop_tensor(&tile.optical, row, col, patch_size)?;
            let comp = crop_tensor(&tile.composite, row, col, patch_size)?;
            optical.item_mut(bi).copy_from_slice(opt.item(0));
            composite.item_mut(bi).copy_from_slice(comp.item(0));
        }
        let out = net.forward(&optical, &composite)?;
        let scores = match target {
            PredictTarget::Full => out.full,
            PredictTarget::Branch(factor) => {
                let map = out
                    .branches
                    .iter()
                    .find(|(f, _)| *f == factor)
                    .map(|(_, m)| m.clone())
                    .ok_or_else(|| {
                        crate::error::Error::Arg(format!(
                            "predict: network has no branch with downscale factor {factor}"
                        ))
                    })?;
                bilinear_upsample(&map, factor)?
            }
        };
        let probs = softmax_channels(&scores);
        for bi in 0..n {
            windows
                .item_mut(chunk_start + bi)
                .copy_from_slice(probs.item(bi));
        }
    }
    stitch_predictions(&windows, &grid)
}

/// Probability map to label map.
pub fn probabilities_to_labels(probs: &Tensor4) -> Result<LabelMap> {
    probs.argmax_channel()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_scene;
    use crate::data::TileTensors;
    use crate::init::rng_from_seed;
    use crate::models::correction::Modality;
    use crate::models::segnet::{SegNet, SegNetConfig};

    fn tile() -> TileTensors {
        let scene = synth_scene(42, 96, 6).unwrap();
        TileTensors::from_tiles("t", &scene.optical, &scene.composite, &scene.label).unwrap()
    }

    fn net(branches: usize) -> Network {
        Network::SegNet {
            net: SegNet::new(
                SegNetConfig::new(3, 6)
                    .with_widths([4, 4, 4, 4, 4])
                    .with_branches(branches),
                &mut rng_from_seed(9),
            ),
            modality: Modality::Optical,
        }
    }

    #[test]
    fn stitched_probabilities_stay_normalized() {
        let t = tile();
        let mut n = net(0);
        for stride in [32usize, 64] {
            let probs = predict_tile(&mut n, &t, 64, stride, 4, PredictTarget::Full).unwrap();
            assert_eq!(probs.dims(), (1, 6, 96, 96));
            for p in 0..96 * 96 {
                let s: f32 = (0..6).map(|c| probs.data()[c * 96 * 96 + p]).sum();
                assert!((s - 1.0).abs() < 1e-5, "pixel {p}: sum {s}");
            }
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let t = tile();
        let mut n = net(0);
        let a = predict_tile(&mut n, &t, 64, 32, 4, PredictTarget::Full).unwrap();
        let b = predict_tile(&mut n, &t, 64, 32, 4, PredictTarget::Full).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn branch_target_requires_multiscale() {
        let t = tile();
        let mut plain = net(0);
        assert!(predict_tile(&mut plain, &t, 64, 64, 4, PredictTarget::Branch(8)).is_err());
        let mut ms = net(3);
        let probs = predict_tile(&mut ms, &t, 64, 64, 4, PredictTarget::Branch(8)).unwrap();
        assert_eq!(probs.dims(), (1, 6, 96, 96));
    }
}
