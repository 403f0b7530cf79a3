//! Weighted F1 against a counting oracle that never builds a confusion matrix.

use rand::Rng;
use tinyicenet_core::eval::{confusion, f1_score, f1_weighted, Averaging};
use tinyicenet_core::rng;

/// Per-class counts straight from the label pairs.
fn oracle(pred: &[u8], gt: &[u8], classes: usize) -> f64 {
    let mut weighted = 0.0;
    let mut total = 0usize;
    for c in 0..classes as u8 {
        let valid = || pred.iter().zip(gt).filter(|(_, &g)| g != 255);
        let tp = valid().filter(|(&p, &g)| p == c && g == c).count() as f64;
        let fp = valid().filter(|(&p, &g)| p == c && g != c).count() as f64;
        let fnn = valid().filter(|(&p, &g)| p != c && g == c).count() as f64;
        let support = valid().filter(|(_, &g)| g == c).count();
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        weighted += support as f64 * f;
        total += support;
    }
    if total == 0 {
        0.0
    } else {
        weighted / total as f64
    }
}

#[test]
fn random_label_maps_match_counting_oracle() {
    let mut r = rng::stream(0xf1, &[]);
    for case in 0..1000 {
        let classes = r.gen_range(2..=7);
        let mask_p = [0.0, 0.1, 0.5, 1.0][case % 4];
        let gt: Vec<u8> = (0..256).map(|_| if r.gen_bool(mask_p) { 255 } else { r.gen_range(0..classes as u8) }).collect();
        // predictions mostly right, sometimes off
        let pred: Vec<u8> = gt
            .iter()
            .map(|&g| if g != 255 && r.gen_bool(0.6) { g } else { r.gen_range(0..classes as u8) })
            .collect();
        let cm = confusion(&pred, &gt, classes, 255).unwrap();
        let got = f1_weighted(&cm);
        let want = oracle(&pred, &gt, classes);
        assert!((got.value - want).abs() <= 1e-12, "case {case}: {} vs {want}", got.value);
        assert_eq!(got.no_valid_pixels, gt.iter().all(|&g| g == 255));
    }
}

#[test]
fn hand_counted_example() {
    let cm = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2, 255).unwrap();
    assert_eq!((cm.get(0, 0), cm.get(1, 0), cm.get(1, 1), cm.get(0, 1)), (1, 1, 2, 0));
    assert!((cm.class_f1(0) - 2.0 / 3.0).abs() < 1e-15);
    assert!((cm.class_f1(1) - 0.8).abs() < 1e-15);
    assert!((f1_weighted(&cm).value - (2.0 / 3.0 + 3.0 * 0.8) / 4.0).abs() < 1e-15);
    // micro F1 equals pixel accuracy for single-label segmentation
    assert!((f1_score(&cm, Averaging::Micro).value - 0.75).abs() < 1e-15);
    assert!((f1_score(&cm, Averaging::Macro).value - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
}
