//! Cross-cutting invariants: adjointness, backward linearity, determinism,
//! and elementwise algebra against brute-force oracles.

use proptest::prelude::*;

use mfn_core::init::{rng_from_seed, uniform_pm1};
use mfn_core::layers::{
    max_pool2, max_unpool2, max_unpool2_backward, BatchNorm2d, Conv2d, Relu,
};
use mfn_core::tensor::Tensor4;

fn tensor_from(values: &[f32], dims: (usize, usize, usize, usize)) -> Tensor4 {
    Tensor4::from_vec(dims, values.to_vec()).unwrap()
}

fn dot(a: &Tensor4, b: &Tensor4) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// <pool(x), y> == <x, unpool(y, idx(x))> for disjoint-window pooling.
    #[test]
    fn pool_unpool_adjoint(
        xs in proptest::collection::vec(-10.0f32..10.0, 16),
        ys in proptest::collection::vec(-10.0f32..10.0, 4),
    ) {
        let x = tensor_from(&xs, (1, 1, 4, 4));
        let y = tensor_from(&ys, (1, 1, 2, 2));
        let (pooled, idx) = max_pool2(&x).unwrap();
        let unpooled = max_unpool2(&y, &idx).unwrap();
        let lhs = dot(&pooled, &y);
        let rhs = dot(&x, &unpooled);
        prop_assert!((lhs - rhs).abs() < 1e-5, "{lhs} vs {rhs}");
    }

    /// Elementwise add agrees with a flat scalar loop and is commutative.
    #[test]
    fn elementwise_add_matches_flat_loop(
        xs in proptest::collection::vec(-100.0f32..100.0, 24),
        ys in proptest::collection::vec(-100.0f32..100.0, 24),
    ) {
        let a = tensor_from(&xs, (2, 3, 2, 2));
        let b = tensor_from(&ys, (2, 3, 2, 2));
        let sum = a.add(&b).unwrap();
        for i in 0..24 {
            prop_assert_eq!(sum.data()[i], xs[i] + ys[i]);
        }
        prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
    }

    /// argmax_channel is invariant under a per-pixel constant shift.
    #[test]
    fn argmax_shift_invariant(
        xs in proptest::collection::vec(-5.0f32..5.0, 18),
        shift in -10.0f32..10.0,
    ) {
        let t = tensor_from(&xs, (1, 2, 3, 3));
        let mut shifted = t.clone();
        let hw = 9;
        for p in 0..hw {
            for c in 0..2 {
                let v = shifted.data()[c * hw + p];
                shifted.data_mut()[c * hw + p] = v + shift;
            }
        }
        prop_assert_eq!(
            t.argmax_channel().unwrap(),
            shifted.argmax_channel().unwrap()
        );
    }
}

/// backward(a*g1 + b*g2) == a*backward(g1) + b*backward(g2) for each layer.
#[test]
fn backward_is_linear_in_the_upstream_gradient() {
    let mut rng = rng_from_seed(500);
    let x = uniform_pm1((2, 3, 4, 4), &mut rng);
    let g1 = uniform_pm1((2, 4, 4, 4), &mut rng);
    let g2 = uniform_pm1((2, 4, 4, 4), &mut rng);
    let (a, b) = (0.7f32, -1.3f32);
    let combo = g1.scale(a).add(&g2.scale(b)).unwrap();

    // conv
    {
        let mut conv = Conv2d::new("c", 3, 4, 3, 1, &mut rng);
        conv.forward(&x).unwrap();
        let d1 = conv.backward(&g1).unwrap();
        let d2 = conv.backward(&g2).unwrap();
        let dc = conv.backward(&combo).unwrap();
        for i in 0..dc.len() {
            let want = a * d1.data()[i] + b * d2.data()[i];
            assert!((dc.data()[i] - want).abs() < 1e-5, "conv elem {i}");
        }
    }
    // batchnorm (train mode)
    {
        let x4 = uniform_pm1((2, 4, 4, 4), &mut rng);
        let mut bn = BatchNorm2d::new("b", 4);
        bn.forward(&x4).unwrap();
        let d1 = bn.backward(&g1).unwrap();
        let d2 = bn.backward(&g2).unwrap();
        let dc = bn.backward(&combo).unwrap();
        for i in 0..dc.len() {
            let want = a * d1.data()[i] + b * d2.data()[i];
            assert!((dc.data()[i] - want).abs() < 1e-5, "bn elem {i}");
        }
    }
    // relu
    {
        let x4 = uniform_pm1((2, 4, 4, 4), &mut rng);
        let mut relu = Relu::new();
        relu.forward(&x4).unwrap();
        let d1 = relu.backward(&g1).unwrap();
        let d2 = relu.backward(&g2).unwrap();
        let dc = relu.backward(&combo).unwrap();
        for i in 0..dc.len() {
            let want = a * d1.data()[i] + b * d2.data()[i];
            assert!((dc.data()[i] - want).abs() < 1e-5, "relu elem {i}");
        }
    }
    // unpool backward (gather)
    {
        let (_, idx) = max_pool2(&uniform_pm1((2, 4, 4, 4), &mut rng)).unwrap();
        let d1 = max_unpool2_backward(&g1, &idx).unwrap();
        let d2 = max_unpool2_backward(&g2, &idx).unwrap();
        let dc = max_unpool2_backward(&combo, &idx).unwrap();
        for i in 0..dc.len() {
            let want = a * d1.data()[i] + b * d2.data()[i];
            assert!((dc.data()[i] - want).abs() < 1e-5, "unpool elem {i}");
        }
    }
}

/// Forward passes repeat bit-exactly on a fixed input.
#[test]
fn layer_forwards_are_deterministic() {
    let mut rng = rng_from_seed(501);
    let x = uniform_pm1((2, 3, 8, 8), &mut rng);
    let mut conv = Conv2d::new("c", 3, 5, 3, 1, &mut rng);
    let y1 = conv.forward(&x).unwrap();
    let y2 = conv.forward(&x).unwrap();
    assert_eq!(y1.data(), y2.data());

    let mut bn = BatchNorm2d::new("b", 3);
    let z1 = bn.forward(&x).unwrap();
    let z2 = bn.forward(&x).unwrap();
    assert_eq!(z1.data(), z2.data());
}
