use rand::Rng;
use tinyicenet_core::model::tinyicenet_builder;
use tinyicenet_core::quant::{QuantSpec, ScaleMode};
use tinyicenet_core::scene::{preprocess, Normalization};
use tinyicenet_core::train::{cross_entropy_masked_grad, loss_and_grad, synth_scene, train_from, train_loop, BnMode, SceneGenParams, TrainConfig};
use tinyicenet_core::{rng, ModelGraph, Scene, Shape, Tensor};

fn corpus(n: u64, size: usize, seed: u64) -> Vec<Scene> {
    let p = SceneGenParams::noiseless(size);
    (0..n)
        .map(|i| {
            preprocess(
                &synth_scene(&p, &mut rng::stream(seed, &[i]), &format!("s{i}")).unwrap(),
                7,
                Normalization::Clip,
            )
            .unwrap()
        })
        .collect()
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        steps_per_epoch: 4,
        batch_size: 2,
        ..TrainConfig::desk(seed)
    }
}

#[test]
fn masked_pixels_never_touch_loss_or_gradient() {
    let mut r = rng::stream(1, &[]);
    let shape = Shape::new(2, 4, 5, 5);
    let logits = Tensor::from_fn(shape, |_, _, _, _| r.gen_range(-3.0..3.0f64));
    let labels = Tensor::from_fn(Shape::new(2, 1, 5, 5), |_, _, _, _| if r.gen_bool(0.3) { 255 } else { r.gen_range(0..4) });
    let (base, g) = cross_entropy_masked_grad(&logits, &labels, 255).unwrap();
    let mut noisy = logits.clone();
    for n in 0..2 {
        for y in 0..5 {
            for x in 0..5 {
                if labels.get(n, 0, y, x) == 255 {
                    for c in 0..4 {
                        noisy.set(n, c, y, x, r.gen_range(-50.0..50.0));
                    }
                }
            }
        }
    }
    let (again, g2) = cross_entropy_masked_grad(&noisy, &labels, 255).unwrap();
    assert_eq!(base, again);
    assert_eq!(g, g2);
    assert!(base.value >= 0.0);

    // appending a fully masked sample leaves parameter gradients unchanged
    let m: ModelGraph<f64> = tinyicenet_builder(3, 8, 8).build(2).unwrap();
    let x = Tensor::from_fn(Shape::new(1, 2, 8, 8), |_, _, _, _| r.gen_range(-1.0..1.0));
    let y = Tensor::from_fn(Shape::new(1, 1, 8, 8), |_, _, _, _| r.gen_range(0..3));
    let junk = Tensor::from_fn(Shape::new(1, 2, 8, 8), |_, _, _, _| r.gen_range(-9.0..9.0));
    let x2 = Tensor::concat_batch(&[x.clone(), junk]).unwrap();
    let y2 = Tensor::concat_batch(&[y.clone(), Tensor::filled(Shape::new(1, 1, 8, 8), 255)]).unwrap();
    let (l1, g1, _) = loss_and_grad(&m, &x, &y, 255, BnMode::Running).unwrap();
    let (l2, g2, _) = loss_and_grad(&m, &x2, &y2, 255, BnMode::Running).unwrap();
    assert_eq!(l1.value, l2.value);
    assert_eq!(g1, g2);
}

#[test]
fn same_seed_replays_bit_identically() {
    let scenes = corpus(12, 16, 3);
    let (tr, va) = scenes.split_at(9);
    let cfg = small_config(11);
    let a = train_loop(&cfg, tr, va, &mut |_| {}).unwrap();
    let b = train_loop(&cfg, tr, va, &mut |_| {}).unwrap();
    let bits = |o: &tinyicenet_core::train::TrainOutcome| o.history.iter().map(|h| h.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let flat = |m: &ModelGraph<f32>| m.param_slices().concat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(flat(&a.final_model), flat(&b.final_model));
    let c = train_loop(&small_config(12), tr, va, &mut |_| {}).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn history_schedule_and_checkpoints() {
    let scenes = corpus(12, 16, 4);
    let (tr, va) = scenes.split_at(9);
    let cfg = small_config(5);
    let mut improvements = Vec::new();
    let out = train_loop(&cfg, tr, va, &mut |cp| improvements.push((cp.epoch, cp.val_f1))).unwrap();
    assert_eq!(out.history.len(), cfg.total_steps());
    assert_eq!(out.history[0].lr, cfg.lr0);
    let last = out.history.last().unwrap();
    assert!(last.lr < cfg.lr0 * 0.05);
    // val F1 on the last step of each epoch only
    let tagged: Vec<usize> = out.history.iter().enumerate().filter(|(_, h)| h.val_f1.is_some()).map(|(i, _)| i).collect();
    assert_eq!(tagged, vec![3, 7]);
    // callbacks fire exactly on strict improvements
    assert!(improvements.windows(2).all(|w| w[1].1 > w[0].1));
    assert_eq!(improvements.last().map(|i| (i.0, i.1)), Some((out.best_epoch, out.best_val_f1)));
}

#[test]
fn fake_quant_at_32_bits_tracks_float_training() {
    let scenes = corpus(10, 16, 6);
    let (tr, va) = scenes.split_at(8);
    let cfg = small_config(7);
    let start = tinyicenet_builder(7, 16, 16).build::<f32>(7).unwrap().fold_batchnorm().unwrap();
    let float = train_from(start.clone(), &cfg, tr, va, None, false, &mut |_| {}).unwrap();
    let spec = QuantSpec::new(32, ScaleMode::FloatScale).unwrap();
    let qat = train_from(start, &cfg, tr, va, Some(spec), false, &mut |_| {}).unwrap();
    for (a, b) in float.history.iter().zip(&qat.history) {
        let rel = (a.loss - b.loss).abs() / a.loss.abs().max(1e-12);
        assert!(rel < 1e-3, "step {}: {} vs {}", a.step, a.loss, b.loss);
    }
}

#[test]
fn invalid_configs_and_empty_sets_are_rejected() {
    let scenes = corpus(3, 16, 8);
    let mut cfg = small_config(1);
    cfg.lr0 = 0.0;
    assert!(train_loop(&cfg, &scenes, &scenes, &mut |_| {}).is_err());
    assert!(train_loop(&small_config(1), &[], &scenes, &mut |_| {}).is_err());
    assert!(train_loop(&small_config(1), &scenes, &[], &mut |_| {}).is_err());
}
