use proptest::prelude::*;
use tinyicenet_core::eval::{confusion, f1_weighted};
use tinyicenet_core::ops::{conv2d_ref, maxpool2x2, relu, ConvKernel};
use tinyicenet_core::quant::{dequantize_slice, quantize_slice, ScaleMode};
use tinyicenet_core::{Shape, Tensor};

fn tensor(shape: Shape) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-4.0f64..4.0, shape.len()).prop_map(move |v| Tensor::from_vec(shape, v).unwrap())
}

fn modes() -> impl Strategy<Value = ScaleMode> {
    prop_oneof![Just(ScaleMode::FloatScale), Just(ScaleMode::PowerOfTwo)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear(x in tensor(Shape::new(1, 3, 6, 5)), y in tensor(Shape::new(1, 3, 6, 5)),
                      w in tensor(Shape::new(2, 3, 3, 3)), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let k = ConvKernel::new(w, None).unwrap();
        let mix = Tensor::from_vec(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = conv2d_ref(&mix, &k, 1, 1).unwrap();
        let (cx, cy) = (conv2d_ref(&x, &k, 1, 1).unwrap(), conv2d_ref(&y, &k, 1, 1).unwrap());
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() <= 1e-12 * (1.0 + l.abs()));
        }
    }

    #[test]
    fn relu_commutes_with_maxpool_and_is_idempotent(x in tensor(Shape::new(2, 2, 6, 8))) {
        let a = relu(&maxpool2x2(&x).unwrap());
        let b = maxpool2x2(&relu(&x)).unwrap();
        prop_assert_eq!(a.data(), b.data());
        let (twice, once) = (relu(&relu(&x)), relu(&x));
        prop_assert_eq!(twice.data(), once.data());
    }

    #[test]
    fn quantization_is_symmetric_and_bounded(w in prop::collection::vec(-3.0f64..3.0, 1..64), bits in 2u32..=32, mode in modes()) {
        let (q, qp) = quantize_slice(&w, bits, mode).unwrap();
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let (qn, qpn) = quantize_slice(&neg, bits, mode).unwrap();
        prop_assert_eq!(qp, qpn);
        prop_assert!(q.iter().zip(&qn).all(|(a, b)| *a == -*b));
        let deq: Vec<f64> = dequantize_slice(&q, &qp);
        for ((&d, &v), &qi) in deq.iter().zip(&w).zip(&q) {
            prop_assert!(qi.abs() <= qp.qmax());
            prop_assert!((d - v).abs() <= qp.scale / 2.0 * (1.0 + 1e-12), "{} vs {} at scale {}", d, v, qp.scale);
        }
    }

    #[test]
    fn requantizing_dequantized_weights_is_identity(w in prop::collection::vec(-3.0f64..3.0, 1..64), bits in 2u32..=24, mode in modes()) {
        let (q, qp) = quantize_slice(&w, bits, mode).unwrap();
        let (q2, qp2) = quantize_slice(&dequantize_slice::<f64>(&q, &qp), bits, mode).unwrap();
        prop_assert_eq!(q, q2);
        prop_assert_eq!(qp.scale, qp2.scale);
    }

    #[test]
    fn power_of_two_scales_dequantize_exactly(w in prop::collection::vec(-3.0f64..3.0, 1..32), bits in 2u32..=24) {
        let (q, qp) = quantize_slice(&w, bits, ScaleMode::PowerOfTwo).unwrap();
        let k = qp.scale_exponent().expect("power-of-two scale");
        for &qi in &q {
            // a dequantized value is the integer shifted by k, exactly
            prop_assert_eq!(qp.dequantize(qi), qi as f64 * 2f64.powi(k));
            prop_assert_eq!(qp.dequantize(qi) / qp.scale, qi as f64);
        }
    }

    #[test]
    fn f1_ignores_pixel_order_class_names_and_masked_pixels(
        pairs in prop::collection::vec((0u8..5, prop_oneof![4 => 0u8..5, 1 => Just(255u8)]), 1..200),
        perm_seed in any::<u64>(),
        extra in prop::collection::vec(0u8..5, 0..50),
    ) {
        let (pred, gt): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let base = f1_weighted(&confusion(&pred, &gt, 5, 255).unwrap()).value;

        let mut order: Vec<usize> = (0..pred.len()).collect();
        order.sort_by_key(|&i| (i as u64).wrapping_mul(perm_seed | 1).rotate_left(17));
        let p2: Vec<u8> = order.iter().map(|&i| pred[i]).collect();
        let g2: Vec<u8> = order.iter().map(|&i| gt[i]).collect();
        prop_assert_eq!(f1_weighted(&confusion(&p2, &g2, 5, 255).unwrap()).value, base);

        let rename = |c: u8| if c == 255 { 255 } else { (c + 2) % 5 };
        let p3: Vec<u8> = pred.iter().map(|&c| rename(c)).collect();
        let g3: Vec<u8> = gt.iter().map(|&c| rename(c)).collect();
        prop_assert!((f1_weighted(&confusion(&p3, &g3, 5, 255).unwrap()).value - base).abs() < 1e-12);

        let mut p4 = pred.clone();
        let mut g4 = gt.clone();
        p4.extend(&extra);
        g4.extend(std::iter::repeat_n(255, extra.len()));
        prop_assert_eq!(f1_weighted(&confusion(&p4, &g4, 5, 255).unwrap()).value, base);
    }
}
