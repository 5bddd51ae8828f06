mod common;

use oscnet::autodiff::{grad_check_many, DEFAULT_GRAD_CHECK_EPS};
use oscnet::tensor::{conv2d, matmul, maxpool2d};
use oscnet::{Rng, Tensor};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_equals_nested_loops(seed in any::<u64>()) {
        let c = common::random_conv_case(&mut Rng::new(seed));
        let fast = conv2d(&c.x, &c.k, &c.b, c.stride, c.padding).unwrap();
        let slow = common::conv2d_reference(&c.x, &c.k, &c.b, c.stride, c.padding);
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..8, k in 1usize..8, l in 1usize..8, n in 1usize..8) {
        let mut rng = Rng::new(seed);
        let a = Tensor::<f64>::uniform(&[m, k], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[k, l], -1.0, 1.0, &mut rng);
        let c = Tensor::<f64>::uniform(&[l, n], -1.0, 1.0, &mut rng);
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(left.sub(&right).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn maxpool_output_dominates_window(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = Tensor::<f64>::uniform(&[1, 2, 5, 6], -1.0, 1.0, &mut rng);
        let (y, idx) = maxpool2d(&x, 2, 2).unwrap();
        prop_assert_eq!(y.dims(), &[1, 2, 2, 3]);
        for (v, &i) in y.data().iter().zip(&idx) {
            prop_assert_eq!(*v, x.data()[i]);
        }
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = Rng::new(11);
    for _ in 0..10 {
        let c = common::random_conv_case(&mut rng);
        let (stride, padding) = (c.stride, c.padding);
        let r = grad_check_many(
            |t, ids| {
                let y = t.conv2d(ids[0], ids[1], ids[2], stride, padding)?;
                let sq = t.mul(y, y)?;
                t.sum(sq)
            },
            &[c.x.clone(), c.k.clone(), c.b.clone()],
            DEFAULT_GRAD_CHECK_EPS,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-7, "{r:?}");
    }
}
