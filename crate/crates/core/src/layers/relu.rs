//! Rectified linear unit.

use crate::error::{Error, Result};
use crate::layers::oracle64::{relu_masked_f64, Forward64, Map64};
use crate::tensor::Tensor4;

#[derive(Clone, Debug, Default)]
pub struct Relu {
    // true where the forward input was strictly positive
    mask: Option<(Vec<bool>, (usize, usize, usize, usize))>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let mut out = x.clone();
        let mut mask = vec![false; x.len()];
        for (v, m) in out.data_mut().iter_mut().zip(mask.iter_mut()) {
            if *v > 0.0 {
                *m = true;
            } else {
                *v = 0.0;
            }
        }
        self.mask = Some((mask, x.dims()));
        Ok(out)
    }

    /// Gradient passes only where the input was positive.
    pub fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4> {
        let (mask, dims) = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::State("relu: backward before forward".into()))?;
        if grad_out.dims() != *dims {
            return Err(Error::Shape(format!(
                "relu: upstream grad dims {:?}, expected {:?}",
                grad_out.dims(),
                dims
            )));
        }
        let mut grad_in = grad_out.clone();
        for (v, &m) in grad_in.data_mut().iter_mut().zip(mask.iter()) {
            if !m {
                *v = 0.0;
            }
        }
        Ok(grad_in)
    }

    /// Activation mask recorded by the last forward.
    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_ref().map(|(m, _)| m.as_slice())
    }
}

impl Forward64 for Relu {
    fn forward_f64(&self, x: &Map64) -> Result<Map64> {
        let (mask, _) = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::State("relu: oracle evaluation needs a prior forward".into()))?;
        relu_masked_f64(x, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let mut relu = Relu::new();
        let x = Tensor4::from_vec((1, 1, 1, 2), vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu.forward(&x).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn dead_region_blocks_gradient() {
        let mut relu = Relu::new();
        let x = Tensor4::from_vec((1, 1, 2, 2), vec![-1.0, -0.5, -3.0, -0.1]).unwrap();
        let y = relu.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let g = Tensor4::new((1, 1, 2, 2), 1.0).unwrap();
        let gi = relu.backward(&g).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_identity_on_positive_side() {
        let mut relu = Relu::new();
        let x = Tensor4::from_vec((1, 1, 1, 3), vec![1.0, -2.0, 0.5]).unwrap();
        relu.forward(&x).unwrap();
        let g = Tensor4::from_vec((1, 1, 1, 3), vec![0.3, 0.7, -0.2]).unwrap();
        assert_eq!(relu.backward(&g).unwrap().data(), &[0.3, 0.0, -0.2]);
    }

    #[test]
    fn oracle_applies_the_recorded_mask() {
        let mut relu = Relu::new();
        let x = Tensor4::from_vec((1, 1, 1, 3), vec![1.0, -2.0, 0.5]).unwrap();
        relu.forward(&x).unwrap();
        // perturbed values keep the old routing
        let probe = Map64 {
            dims: (1, 1, 1, 3),
            data: vec![-5.0, 7.0, 0.25],
        };
        let y = relu.forward_f64(&probe).unwrap();
        assert_eq!(y.data, vec![-5.0, 0.0, 0.25]);
    }
}
