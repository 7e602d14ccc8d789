//! Channel concatenation and its splitting backward.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Stacks channels in argument order; all inputs must share `(n, h, w)`.
pub fn channel_concat(xs: &[&Tensor4]) -> Result<Tensor4> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Arg("channel_concat: empty input list".into()))?;
    let (n, _, h, w) = first.dims();
    let mut total_c = 0usize;
    for x in xs {
        let (xn, xc, xh, xw) = x.dims();
        if (xn, xh, xw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "channel_concat: operand dims {:?} incompatible with (n={n}, h={h}, w={w})",
                x.dims()
            )));
        }
        total_c += xc;
    }
    let mut out = Tensor4::zeros((n, total_c, h, w))?;
    for item in 0..n {
        let mut offset = 0usize;
        for x in xs {
            let c = x.channels();
            for ch in 0..c {
                out.plane_mut(item, offset + ch).copy_from_slice(x.plane(item, ch));
            }
            offset += c;
        }
    }
    Ok(out)
}

/// Splits channels back at the given sizes; backward of `channel_concat`.
pub fn channel_split(x: &Tensor4, sizes: &[usize]) -> Result<Vec<Tensor4>> {
    let (n, c, h, w) = x.dims();
    let total: usize = sizes.iter().sum();
    if total != c {
        return Err(Error::Shape(format!(
            "channel_split: sizes sum to {total}, tensor has {c} channels"
        )));
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut offset = 0usize;
    for &size in sizes {
        if size == 0 {
            return Err(Error::Arg("channel_split: zero-sized part".into()));
        }
        let mut part = Tensor4::zeros((n, size, h, w))?;
        for item in 0..n {
            for ch in 0..size {
                part.plane_mut(item, ch)
                    .copy_from_slice(x.plane(item, offset + ch));
            }
        }
        out.push(part);
        offset += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{rng_from_seed, uniform_pm1};

    #[test]
    fn stacks_channels_in_order() {
        let mut rng = rng_from_seed(5);
        let a = uniform_pm1((2, 2, 3, 3), &mut rng);
        let b = uniform_pm1((2, 3, 3, 3), &mut rng);
        let cat = channel_concat(&[&a, &b]).unwrap();
        assert_eq!(cat.dims(), (2, 5, 3, 3));
        assert_eq!(cat.plane(1, 0), a.plane(1, 0));
        assert_eq!(cat.plane(1, 2), b.plane(1, 0));
        assert_eq!(cat.plane(0, 4), b.plane(0, 2));
    }

    #[test]
    fn single_tensor_is_identity() {
        let mut rng = rng_from_seed(6);
        let a = uniform_pm1((1, 3, 2, 2), &mut rng);
        assert_eq!(channel_concat(&[&a]).unwrap(), a);
    }

    #[test]
    fn split_round_trips_bit_exact() {
        let mut rng = rng_from_seed(7);
        let a = uniform_pm1((2, 2, 4, 3), &mut rng);
        let b = uniform_pm1((2, 4, 4, 3), &mut rng);
        let cat = channel_concat(&[&a, &b]).unwrap();
        let parts = channel_split(&cat, &[2, 4]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let a = Tensor4::zeros((1, 2, 3, 3)).unwrap();
        let b = Tensor4::zeros((1, 2, 4, 3)).unwrap();
        assert!(matches!(channel_concat(&[&a, &b]), Err(Error::Shape(_))));
    }
}
