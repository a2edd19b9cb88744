mod common;

use ctakit::definitions::{definitions_path, load_definitions, DefinitionKind};
use ctakit::gateway::{Cassette, RecordingBackend, ReplayBackend};
use ctakit::runner::load_run;
use ctakit::workflow::{oracle_backend, run_pipeline, snapshot_dir, PipelineConfig};
use ctakit::RunContext;

#[test]
fn pipeline_writes_every_stage() {
    let corpus = common::recipe_corpus();
    let cfg = PipelineConfig::default();
    let backend = oracle_backend(&corpus, &cfg.serialization, 30);
    let dir = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&corpus, &backend, &cfg, &RunContext::deterministic(9, 4), dir.path()).unwrap();

    let gen_dir = dir.path().join("runs").join(&summary.generation_id);
    let demo = load_definitions(definitions_path(&gen_dir, DefinitionKind::Demonstration)).unwrap();
    let refined = load_definitions(definitions_path(&gen_dir, DefinitionKind::Refined)).unwrap();
    assert_eq!(demo.len(), 5);
    assert_eq!(refined.len(), 5);
    assert!(refined.iter().all(|d| d.kind == DefinitionKind::Refined));
    assert!(gen_dir.join("usage.jsonl").exists());
    assert!(dir.path().join("corpus-downsampled").join("vocabulary.json").exists());
    assert!(dir.path().join("reports").join("pipeline.json").exists());

    let review = load_run(dir.path().join("runs").join(&summary.review_run)).unwrap();
    assert_eq!(
        review.strategy.prior_run.as_deref(),
        Some(summary.annotation_run.as_str())
    );
    // The oracle reviewer answers gold.
    assert_eq!(summary.review_metrics.micro_f1, 1.0);
    assert!(summary.annotation_metrics.micro_f1 <= 1.0);
    assert!(summary.costs.generation.pico() > 0 && summary.costs.inference.pico() > 0);
    assert_eq!(summary.validation_runs.len(), 1);
}

#[test]
fn recorded_pipeline_replays_byte_identically() {
    let corpus = common::recipe_corpus();
    let cfg = PipelineConfig {
        refine_rounds: 2,
        ..PipelineConfig::default()
    };
    let tmp = tempfile::tempdir().unwrap();
    let cassette = tmp.path().join("cassette.jsonl");
    let live = tmp.path().join("live");
    let recorder = RecordingBackend::create(oracle_backend(&corpus, &cfg.serialization, 30), &cassette).unwrap();
    run_pipeline(&corpus, &recorder, &cfg, &RunContext::deterministic(9, 4), &live).unwrap();
    drop(recorder);

    let mut snapshots = vec![snapshot_dir(&live).unwrap()];
    for i in 0..2 {
        let out = tmp.path().join(format!("replay{i}"));
        let replay = ReplayBackend::new(Cassette::load(&cassette).unwrap(), "mock-oracle");
        run_pipeline(&corpus, &replay, &cfg, &RunContext::deterministic(9, 4), &out).unwrap();
        snapshots.push(snapshot_dir(&out).unwrap());
    }
    assert!(!snapshots[0].is_empty());
    assert_eq!(snapshots[1], snapshots[2]);
    assert_eq!(snapshots[0], snapshots[1]);
}
