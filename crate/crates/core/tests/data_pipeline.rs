use std::path::{Path, PathBuf};

use fbftl_core::data::{load_csv, split_train_test, synth_gaussian_mixture, CsvSchema, Standardizer};
use fbftl_core::model::{ArchitectureSpec, LayerSpec};
use fbftl_core::nn::{Activation, OptimizerConfig};
use fbftl_core::seed::rng_for;
use fbftl_core::sim::{accuracy, train_minibatch, MinibatchConfig};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn train_on_mixture(separation: f64) -> f64 {
    let ds = synth_gaussian_mixture(3, 6, 300, separation, &mut rng_for(1, "data", &[])).unwrap();
    let (train, test) = split_train_test(&ds, 0.3, &mut rng_for(1, "split", &[])).unwrap();
    let st = Standardizer::fit(&train).unwrap();
    let (train, test) = (st.apply(&train), st.apply(&test));
    let arch = ArchitectureSpec::new(
        vec![
            LayerSpec::dense(6, 16, Activation::Relu),
            LayerSpec::dense(16, 3, Activation::Identity),
        ],
        1,
        32,
    )
    .unwrap();
    let mut net = arch.build_network(&mut rng_for(1, "init", &[])).unwrap();
    let mut cfg = MinibatchConfig::new(OptimizerConfig::adam(0.01), 32, 600, 2);
    cfg.eval_every = 100;
    train_minibatch(&mut net, train.samples(), test.samples(), test.samples(), &cfg).unwrap();
    accuracy(test.samples(), |x| net.predict(x)).unwrap()
}

#[test]
fn separated_mixture_is_learnable() {
    let acc = train_on_mixture(10.0);
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn overlapping_mixture_stays_near_chance() {
    let acc = train_on_mixture(0.0);
    assert!((acc - 1.0 / 3.0).abs() < 0.1, "{acc}");
}

#[test]
fn named_csv_classes_round_trip() {
    let ds = load_csv(&fixture("tiny.csv"), &CsvSchema::default()).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.dim(), 3);
    assert_eq!(ds.class_names(), ["DERMASON", "HOROZ", "SEKER"]);
    assert_eq!(ds.class_counts(), vec![1, 1, 2]);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("copy.csv");
    ds.write_csv(&out).unwrap();
    let schema = CsvSchema {
        classes: Some(ds.class_names().to_vec()),
    };
    let back = load_csv(&out, &schema).unwrap();
    assert_eq!(back.samples(), ds.samples());

    let strict = CsvSchema {
        classes: Some(vec!["SEKER".into()]),
    };
    assert!(load_csv(&fixture("tiny.csv"), &strict).is_err());
}
