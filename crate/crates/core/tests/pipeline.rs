use std::path::PathBuf;

use echo_core::config::PipelineConfig;
use echo_core::pipeline::{detect, load_inputs};
use echo_core::router::Pathway;
use echo_core::synth::{generate_lfr, synthesize_features, FeatureSynthConfig, LfrConfig};
use echo_core::{Error, Rng};

fn presets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

#[test]
fn every_preset_loads() {
    let mut count = 0;
    for entry in std::fs::read_dir(presets()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = PipelineConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap();
        count += 1;
    }
    assert!(count >= 9);
}

#[test]
fn lfr_preset_values() {
    let cfg = PipelineConfig::load(presets().join("lfr.conf")).unwrap();
    assert_eq!(cfg.router.force, Some(Pathway::Densifying));
    assert_eq!(cfg.train.steps, 2);
    assert_eq!(cfg.train.loss.temperature, 0.1);
    assert_eq!(cfg.train.loss.sparsity_lambda, 1e-4);
    assert_eq!(cfg.extract.delta, 0.15);
}

#[test]
fn detection_is_deterministic() {
    let (g, truth) = generate_lfr(&LfrConfig { n: 200, seed: 3, ..LfrConfig::default() }).unwrap();
    let x = synthesize_features(&g, &truth, &FeatureSynthConfig::default(), &mut Rng::new(3)).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.train.epochs = 3;
    cfg.train.embed_dim = 16;
    let a = detect(&g, &x, &cfg).unwrap();
    let b = detect(&g, &x, &cfg).unwrap();
    assert_eq!(a.clusters.partition, b.clusters.partition);
    assert_eq!(a.similarity, b.similarity);
    assert_eq!(a.train.report.snapshot_id, b.train.report.snapshot_id);
    assert_eq!(a.clusters.partition.len(), 200);
}

#[test]
fn missing_inputs_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.edges");
    std::fs::write(&graph, "0 1\n1 2\n").unwrap();
    let err = load_inputs(&graph, dir.path().join("nope.csv")).unwrap_err();
    assert!(err.is_input_error());
    assert!(err.to_string().contains("nope.csv"), "{err}");

    let feats = dir.path().join("x.csv");
    std::fs::write(&feats, "1,0\n0,1\n").unwrap();
    let err = load_inputs(&graph, &feats).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)), "{err:?}");
}
