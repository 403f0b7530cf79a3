use rand::Rng;
use tinyicenet_core::model::{tinyicenet_builder, LayerKind, LayerParams};
use tinyicenet_core::ops::{argmax_channels, batchnorm_ref, conv2d_ref, relu};
use tinyicenet_core::{build_tinyicenet, rng, ModelGraph, Shape, Tensor};

/// TinyIceNet with non-trivial batch-norm state, as after training.
fn trained_like(h: usize, w: usize, seed: u64) -> ModelGraph<f32> {
    let m: ModelGraph<f32> = tinyicenet_builder(7, h, w).build(seed).unwrap();
    let mut r = rng::stream(seed, &[0xb4]);
    let params = m
        .params()
        .iter()
        .cloned()
        .map(|p| match p {
            LayerParams::BatchNorm(mut bn) => {
                for c in 0..bn.gamma.len() {
                    bn.gamma[c] = r.gen_range(0.5..1.5);
                    bn.beta[c] = r.gen_range(-0.2..0.2);
                    bn.running_mean[c] = r.gen_range(-0.3..0.3);
                    bn.running_var[c] = r.gen_range(0.3..3.0);
                }
                LayerParams::BatchNorm(bn)
            }
            p => p,
        })
        .collect();
    ModelGraph::from_parts(m.layers().to_vec(), params, m.input_shape()).unwrap()
}

fn random_input(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut r = rng::stream(seed, &[0x1a]);
    Tensor::from_fn(Shape::new(n, 2, h, w), |_, _, _, _| r.gen_range(-1.0..1.0))
}

#[test]
fn default_build_counts_and_structure() {
    let m: ModelGraph<f32> = build_tinyicenet(7, 0).unwrap();
    assert_eq!(m.count_params(), 146_599);
    assert_eq!(build_tinyicenet::<f32>(6, 0).unwrap().count_params(), 146_534);
    let count = |f: fn(&LayerKind) -> bool| m.layers().iter().filter(|l| f(&l.kind)).count();
    assert_eq!(count(|k| matches!(k, LayerKind::Conv3x3 | LayerKind::Conv1x1)), 9);
    assert_eq!(count(|k| matches!(k, LayerKind::MaxPool2x2)), 3);
    assert_eq!(count(|k| matches!(k, LayerKind::Upsample { .. })), 1);
    assert_eq!(count(|k| matches!(k, LayerKind::Argmax)), 1);
    let macs = m.count_macs((2, 512, 512)).unwrap();
    assert_eq!(macs.conv_macs, 2_910_846_976);
    assert!((macs.conv_macs as f64 / 2.97e9 - 1.0).abs() < 0.03);
    assert!(macs.elementwise_ops > 0);
}

#[test]
fn three_layer_truncation_is_manual_composition() {
    let m = trained_like(16, 16, 3);
    let x = random_input(2, 16, 16, 3);
    let got = m.forward(&x, Some(3)).unwrap();
    let (LayerParams::Conv(k), LayerParams::BatchNorm(bn)) = (&m.params()[0], &m.params()[1]) else {
        panic!("unexpected layer order")
    };
    let manual = relu(
        &batchnorm_ref(
            &conv2d_ref(&x, k, 1, 1).unwrap(),
            &bn.gamma,
            &bn.beta,
            &bn.running_mean,
            &bn.running_var,
            bn.eps,
        )
        .unwrap(),
    );
    assert_eq!(got, manual);
}

#[test]
fn folding_preserves_logits_and_labels() {
    for seed in 0..3 {
        let m = trained_like(64, 64, seed);
        let folded = m.fold_batchnorm().unwrap();
        assert!(folded.layers().iter().all(|l| !matches!(l.kind, LayerKind::BatchNorm)));
        assert_eq!(folded.count_macs((2, 64, 64)).unwrap().conv_macs, m.count_macs((2, 64, 64)).unwrap().conv_macs);
        let x = random_input(1, 64, 64, seed + 10);
        let (a, b) = (m.forward(&x, None).unwrap(), folded.forward(&x, None).unwrap());
        let scale = a.data().iter().fold(0.0f32, |s, v| s.max(v.abs()));
        let diff = a.data().iter().zip(b.data()).fold(0.0f32, |s, (p, q)| s.max((p - q).abs()));
        assert!(diff / scale < 1e-4, "seed {seed}: relative logit difference {}", diff / scale);
        let (la, lb) = (argmax_channels(&a).unwrap(), argmax_channels(&b).unwrap());
        let agree = la.data().iter().zip(lb.data()).filter(|(p, q)| p == q).count();
        assert!(agree as f64 >= 0.999 * la.data().len() as f64);
    }
}

#[test]
fn eight_pixel_shift_moves_features_by_one_cell() {
    let (h, w) = (128, 128);
    let m = trained_like(h, w, 4);
    let up = m.layers().iter().position(|l| matches!(l.kind, LayerKind::Upsample { .. })).unwrap();
    let x = random_input(1, h, w, 4);
    let shifted = Tensor::from_fn(x.shape(), |n, c, y, xx| if xx + 8 < w { x.get(n, c, y, xx + 8) } else { 0.0 });
    let (f, g) = (m.forward(&x, Some(up)).unwrap(), m.forward(&shifted, Some(up)).unwrap());
    assert_eq!(f.shape(), Shape::new(1, 64, 16, 16));
    // receptive field radius is 37 input pixels; these cells never see padding
    for c in 0..64 {
        for i in 5..=10 {
            for j in 5..=9 {
                assert_eq!(g.get(0, c, i, j).to_bits(), f.get(0, c, i, j + 1).to_bits(), "c {c} ({i}, {j})");
            }
        }
    }
}

#[test]
fn spatial_dims_must_divide_by_eight() {
    let m: ModelGraph<f32> = tinyicenet_builder(7, 64, 64).build(0).unwrap();
    assert!(m.forward(&random_input(1, 60, 64, 0), None).is_err());
    assert_eq!(m.forward(&random_input(1, 40, 48, 0), None).unwrap().shape(), Shape::new(1, 7, 40, 48));
}

#[test]
fn positive_head_scaling_keeps_labels() {
    let m = trained_like(32, 32, 6).fold_batchnorm().unwrap();
    let x = random_input(1, 32, 32, 6);
    let base = m.predict(&x).unwrap();
    let head = m.layers().iter().rposition(|l| l.is_conv()).unwrap();
    for alpha in [0.25f32, 2.0, 8.0, 3.0, 0.1] {
        let params = m
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| match p {
                LayerParams::Conv(k) if i == head => {
                    let mut k = k.clone();
                    k.weights = k.weights.map(|v| v * alpha);
                    k.bias = k.bias.map(|b| b.iter().map(|v| v * alpha).collect());
                    LayerParams::Conv(k)
                }
                p => p.clone(),
            })
            .collect();
        let scaled = ModelGraph::from_parts(m.layers().to_vec(), params, m.input_shape()).unwrap();
        let got = scaled.predict(&x).unwrap();
        let agree = got.data().iter().zip(base.data()).filter(|(a, b)| a == b).count();
        if alpha.log2().fract() == 0.0 {
            assert_eq!(got, base, "alpha {alpha}");
        } else {
            assert!(agree as f64 >= 0.999 * base.data().len() as f64, "alpha {alpha}");
        }
    }
}
