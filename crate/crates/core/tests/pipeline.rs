use std::path::Path;

use dkph::pipeline::{Pipeline, RunConfig};
use dkph::Error;

fn small(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.synth.videos_per_class = 12;
    cfg.teacher_epochs = 2;
    cfg.student_epochs = 2;
    cfg.code_bits = vec![16];
    cfg.data_dir = dir.join("data");
    cfg.out_dir = dir.join("run");
    cfg
}

fn mtime(p: &Path) -> std::time::SystemTime {
    std::fs::metadata(p).unwrap().modified().unwrap()
}

#[test]
fn rerun_skips_finished_stages_and_reproduces_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let first = Pipeline::new(cfg.clone()).unwrap().run().unwrap();
    let ckpt = cfg.out_dir.join("teacher.ckpt");
    let stamp = mtime(&ckpt);

    let mut again = Pipeline::new(cfg.clone()).unwrap();
    let second = again.run().unwrap();
    assert_eq!(first, second);
    assert_eq!(mtime(&ckpt), stamp);
    assert!(again.timings().is_empty(), "{:?}", again.timings());
}

#[test]
fn tampered_artifact_is_rebuilt() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let first = Pipeline::new(cfg.clone()).unwrap().run().unwrap();
    std::fs::write(cfg.out_dir.join("graph.bin"), b"junk").unwrap();

    let mut again = Pipeline::new(cfg).unwrap();
    assert_eq!(again.run().unwrap(), first);
    assert!(again.timings().iter().any(|(s, _)| s == "graph"), "{:?}", again.timings());
}

#[test]
fn changed_config_invalidates_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    Pipeline::new(cfg.clone()).unwrap().run().unwrap();
    let mut changed = cfg;
    changed.student_epochs = 3;
    let mut p = Pipeline::new(changed).unwrap();
    p.run().unwrap();
    assert!(p.timings().iter().any(|(s, _)| s == "teacher"));
}

#[test]
fn zero_similarity_weights_are_labelled_as_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.weights.gamma1 = 0.0;
    cfg.weights.gamma2 = 0.0;
    let report = Pipeline::new(cfg).unwrap().run().unwrap();
    assert!(report.contains("variant = reconstruction-only baseline"), "{report}");
}

#[test]
fn failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    // more centres than training videos
    cfg.n_centers = 500;
    cfg.anchors_per_point = 3;
    let err = Pipeline::new(cfg).unwrap().run().unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(*stage, "graph"),
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().contains("graph"));
}

#[test]
fn mismatched_dataset_shape_fails_in_data_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    Pipeline::new(cfg.clone()).unwrap().data().unwrap();
    let mut other = cfg;
    other.encoder.input_dim = 10;
    other.synth.feature_dim = 10;
    let mut p = Pipeline::new(other).unwrap();
    let err = p.data().unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "data", .. }), "{err}");
}
