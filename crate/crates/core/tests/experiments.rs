use std::fs;

use dabc::metrics::ConfusionMatrix;
use dabc::pipeline::{gates_from_csv, run_experiment, ExperimentConfig, ExperimentKind, DIAGONAL_BAND};
use dabc::Error;

#[test]
fn confusion_experiment_writes_matrices_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(ExperimentKind::Confusion, &ExperimentConfig::smoke(), dir.path()).unwrap();
    let tables = report.dir.join("tables");
    let full = ConfusionMatrix::from_counts_csv(
        &fs::read_to_string(tables.join("confusion_classification_full.csv")).unwrap(),
    )
    .unwrap();
    assert_eq!(full.size(), 151);
    let window = ConfusionMatrix::from_counts_csv(
        &fs::read_to_string(tables.join("confusion_regression_window.csv")).unwrap(),
    )
    .unwrap();
    assert_eq!(window.size(), 36);
    assert!(report.dir.join("figures/confusion_classification_window.png").is_file());

    let summary = fs::read_to_string(tables.join("confusion_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    let saved: f64 = rows
        .iter()
        .find(|r| r.starts_with("classification,full,"))
        .and_then(|r| r.rsplit(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((saved - full.diagonal_band_mass(DIAGONAL_BAND)).abs() < 1e-12);
}

#[test]
fn attention_dump_reuses_saved_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::smoke();
    let trained = run_experiment(ExperimentKind::AttentionAblation, &cfg, dir.path()).unwrap();

    let reuse = ExperimentConfig {
        checkpoint_dir: Some(trained.dir.join("checkpoints")),
        ..cfg.clone()
    };
    let dumped = run_experiment(ExperimentKind::AttentionDump, &reuse, dir.path()).unwrap();
    assert!(dumped.variants.iter().all(|v| v.training.is_none()));
    // Same weights, same inputs: identical gates.
    assert_eq!(dumped.gates.len(), trained.gates.len());
    for (a, b) in dumped.gates.iter().zip(&trained.gates) {
        assert_eq!((a.sample_id.as_str(), a.block), (b.sample_id.as_str(), b.block));
        assert_eq!(a.gate, b.gate);
    }
    let csv = fs::read_to_string(dumped.dir.join("tables/attention_gates.csv")).unwrap();
    let parsed = gates_from_csv(&csv).unwrap();
    assert_eq!(parsed.len(), dumped.gates.len());
    for b in 1..=4 {
        assert!(dumped.dir.join(format!("figures/afa_block{b}.png")).is_file());
    }
}

#[test]
fn missing_checkpoint_names_the_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        checkpoint_dir: Some(dir.path().join("nothing-here")),
        ..ExperimentConfig::smoke()
    };
    let Err(err) = run_experiment(ExperimentKind::AttentionDump, &cfg, dir.path()) else {
        panic!("expected a missing-checkpoint error");
    };
    match err {
        Error::MissingCheckpoint { path, .. } => assert!(path.ends_with("cls_mixed.ckpt"), "{path:?}"),
        other => panic!("unexpected error {other}"),
    }
}
