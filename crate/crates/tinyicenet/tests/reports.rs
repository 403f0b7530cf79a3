use tinyicenet::{pipeline, report};
use tinyicenet_core::dataflow::{minimal_configs, schedule_pipeline};
use tinyicenet_core::eval::{ConfusionMatrix, EvalReport, F1Score, SceneScore};
use tinyicenet_core::model::tinyicenet_builder;
use tinyicenet_core::quant::SweepRow;
use tinyicenet_core::train::HistoryRow;
use tinyicenet_core::{FixedFormat, ModelGraph};

fn text(f: impl FnOnce(&mut Vec<u8>)) -> String {
    let mut buf = Vec::new();
    f(&mut buf);
    String::from_utf8(buf).unwrap()
}

#[test]
fn history_and_sweep_layouts() {
    let rows = [
        HistoryRow {
            epoch: 0,
            step: 0,
            loss: 1.5,
            lr: 0.001,
            val_f1: None,
        },
        HistoryRow {
            epoch: 0,
            step: 1,
            loss: 0.25,
            lr: 0.0005,
            val_f1: Some(0.75),
        },
    ];
    assert_eq!(
        text(|b| report::write_history(b, &rows).unwrap()),
        "epoch,step,loss,lr,val_f1\n0,0,1.5,0.001,\n0,1,0.25,0.0005,0.75\n"
    );
    let sweep = [SweepRow { bits: 7, f1: 0.5 }, SweepRow { bits: 32, f1: 0.9375 }];
    assert_eq!(text(|b| report::write_sweep(b, &sweep).unwrap()), "bits,f1\n7,0.5\n32,0.9375\n");
}

#[test]
fn eval_layout_ends_with_the_aggregate() {
    let r = EvalReport {
        per_scene: vec![
            SceneScore {
                id: "a".into(),
                valid_pixels: 10,
                f1: 0.5,
            },
            SceneScore {
                id: "b".into(),
                valid_pixels: 0,
                f1: 0.0,
            },
        ],
        aggregate: F1Score {
            value: 0.5,
            no_valid_pixels: false,
        },
        pooled: ConfusionMatrix::new(2),
    };
    assert_eq!(
        text(|b| report::write_eval(b, &r).unwrap()),
        "scene_id,valid_pixels,f1\na,10,0.5\nb,0,0\naggregate,10,0.5\n"
    );
}

#[test]
fn sweep_and_config_files_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = vec![SweepRow { bits: 8, f1: 1.0 / 3.0 }, SweepRow { bits: 12, f1: 0.1 }];
    let p = dir.path().join("sweep.csv");
    report::save_sweep(&p, &sweep).unwrap();
    assert_eq!(report::read_sweep(&p).unwrap(), sweep);

    let g: ModelGraph<f32> = tinyicenet_builder(7, 64, 64).build(0).unwrap().fold_batchnorm().unwrap();
    for configs in [
        minimal_configs(&g, FixedFormat::ACTIVATION_DEFAULT, 8),
        schedule_pipeline(&g, 64, 64, 100, FixedFormat::ACTIVATION_DEFAULT, 8).unwrap().configs,
    ] {
        let p = dir.path().join("dataflow.csv");
        report::save_configs(&p, &configs).unwrap();
        assert_eq!(report::read_configs(&p).unwrap(), configs);
    }
}

#[test]
fn merge_is_long_format_in_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("first.csv");
    let b = dir.path().join("second.csv");
    std::fs::write(&a, "x,y\n1,2\n").unwrap();
    std::fs::write(&b, "z\n3\n4\n").unwrap();
    let out = text(|buf| report::merge(buf, &[&a, &b]).unwrap());
    assert_eq!(out, "source,row,column,value\nfirst,0,x,1\nfirst,0,y,2\nsecond,0,z,3\nsecond,1,z,4\n");
}

#[test]
fn validation_split_rule() {
    let scenes: Vec<_> = (0..64).map(|i| pipeline::synth_corpus_scene(0, i, 8, 7).unwrap()).collect();
    for (n, val) in [(2, 1), (9, 1), (10, 2), (25, 5), (50, 10), (64, 10)] {
        let (tr, va) = pipeline::split(&scenes[..n]).unwrap();
        assert_eq!((tr.len(), va.len()), (n - val, val), "n = {n}");
        assert_eq!(va.last().unwrap().id, scenes[n - 1].id);
    }
    assert!(pipeline::split(&scenes[..1]).is_err());
}

#[test]
fn corpus_scenes_are_independent_of_corpus_size() {
    let dir = tempfile::tempdir().unwrap();
    pipeline::generate_corpus(dir.path(), 5, 3, 16, 7).unwrap();
    let loaded = pipeline::load_scenes(dir.path()).unwrap();
    assert_eq!(
        loaded.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(),
        ["scene_0000", "scene_0001", "scene_0002"]
    );
    assert_eq!(loaded[2], pipeline::synth_corpus_scene(5, 2, 16, 7).unwrap());
    assert!(loaded.iter().all(|s| s.hh.iter().chain(&s.hv).all(|v| (-1.0..=1.0).contains(v))));
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    assert_eq!(pipeline::load_scenes(dir.path()).unwrap().len(), 3);
    assert!(pipeline::load_scenes(&dir.path().join("missing")).is_err());
}
