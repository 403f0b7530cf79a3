use rand::Rng;
use tinyicenet_core::dataflow::{cycle_report, minimal_configs, schedule_pipeline, DataflowConfig, Variant};
use tinyicenet_core::model::tinyicenet_builder;
use tinyicenet_core::{rng, FixedFormat, ModelGraph};

fn act() -> FixedFormat {
    FixedFormat::ACTIVATION_DEFAULT
}

#[test]
fn sipo_with_unit_output_unroll_equals_standard() {
    let m: ModelGraph<f32> = tinyicenet_builder(7, 128, 96).build(0).unwrap();
    let mut std_cfgs = minimal_configs(&m, act(), 8);
    for uf in [1, 2, 4, 8, 16, 64] {
        for (_, c) in std_cfgs.iter_mut().filter(|(_, c)| c.variant == Variant::Standard) {
            c.uf_in = uf;
        }
        let sipo: Vec<_> = std_cfgs
            .iter()
            .map(|&(i, c)| {
                let mut s = c;
                if c.variant == Variant::Standard {
                    s = DataflowConfig {
                        variant: Variant::Sipo,
                        uf_out: 1,
                        ..c
                    };
                }
                (i, s)
            })
            .collect();
        let a = cycle_report(&m, 128, 96, &std_cfgs).unwrap();
        let b = cycle_report(&m, 128, 96, &sipo).unwrap();
        for (x, y) in a.layers.iter().zip(&b.layers) {
            assert_eq!((x.prime_cycles, x.steady_cycles), (y.prime_cycles, y.steady_cycles), "layer {}", x.layer);
        }
    }
}

#[test]
fn doubling_budget_never_slows_pipeline() {
    let m: ModelGraph<f32> = tinyicenet_builder(7, 512, 512).build(0).unwrap();
    let mut r = rng::stream(0xb0d6, &[]);
    for _ in 0..20 {
        let b = r.gen_range(9..=400);
        let one = schedule_pipeline(&m, 512, 512, b, act(), 8).unwrap();
        let two = schedule_pipeline(&m, 512, 512, 2 * b, act(), 8).unwrap();
        assert!(one.budget_used <= b && two.budget_used <= 2 * b);
        assert!(
            two.report.bottleneck_cycles() <= one.report.bottleneck_cycles(),
            "budget {b}: {} > {}",
            two.report.bottleneck_cycles(),
            one.report.bottleneck_cycles()
        );
    }
}

#[test]
fn budget_below_layer_count_is_rejected() {
    let m: ModelGraph<f32> = tinyicenet_builder(7, 64, 64).build(0).unwrap();
    assert!(schedule_pipeline(&m, 64, 64, 3, act(), 8).is_err());
}
