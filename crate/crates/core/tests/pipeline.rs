use std::fs;

use pachinko_core::bayes::StrataScheme;
use pachinko_core::data::{load_gsr, write_gsr, CityId};
use pachinko_core::pipeline::{generate_synthetic, run, Manifest, PipelineConfig, SyntheticScenario};
use pachinko_core::Error;

fn small(seed: u64) -> SyntheticScenario {
    SyntheticScenario {
        days: 40,
        corpus_size: 80,
        ..SyntheticScenario::planted(20.0, 2.0, 5.0, 0.2, seed)
    }
}

#[test]
fn run_writes_every_artifact_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = generate_synthetic(&small(1), dir.path()).unwrap();
    let summary = run(&cfg).unwrap();
    let names: Vec<&str> = summary.manifest.artifacts.iter().map(|a| a.path.as_str()).collect();
    for expected in [
        "predictions.csv",
        "roc.csv",
        "lead_time.csv",
        "tests.json",
        "evaluation.json",
        "counts.json",
        "jars.csv",
        "classifier.json",
        "tiles_truth.csv",
        "tiles_predicted.csv",
        "proportions.csv",
        "low_tweet.json",
    ] {
        assert!(names.contains(&expected), "missing {expected}");
    }
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    assert!(!cfg.output.join(".partial").exists());
    let manifest = Manifest::load(&cfg.output.join("manifest.json")).unwrap();
    assert_eq!(manifest, summary.manifest);
    assert!(manifest.verify(&cfg.output).unwrap().is_empty());

    fs::write(cfg.output.join("roc.csv"), "tampered").unwrap();
    assert_eq!(manifest.verify(&cfg.output).unwrap(), vec!["roc.csv".to_string()]);
}

#[test]
fn missing_gsr_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::new(dir.path().join("nope.csv"), dir.path().join("t.jsonl"), dir.path().join("out"));
    let err = run(&cfg).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains("nope.csv"), "{err}");
}

#[test]
fn stage_failure_removes_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = generate_synthetic(&small(2), dir.path()).unwrap();
    let mut gsr = load_gsr(&cfg.gsr).unwrap();
    gsr[0].city = CityId::from("Atlantis");
    write_gsr(&cfg.gsr, &gsr).unwrap();
    let err = run(&cfg).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(*stage, "load"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("Atlantis"), "{err}");
    assert_eq!(fs::read_dir(&cfg.output).unwrap().count(), 0);
}

#[test]
fn degenerate_stage_is_not_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = small(3);
    s.cities.iter_mut().for_each(|c| c.p_event = 0.0);
    let cfg = generate_synthetic(&s, dir.path()).unwrap();
    let err = run(&cfg).unwrap_err();
    assert!(matches!(err, Error::Stage { .. }));
    assert!(!err.is_validation(), "{err}");
    assert_eq!(fs::read_dir(&cfg.output).unwrap().count(), 0);
}

#[test]
fn config_round_trip_and_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = generate_synthetic(&small(4), dir.path()).unwrap();
    assert_eq!(cfg.gsr, dir.path().join("gsr.csv"));
    assert_eq!(cfg.output, dir.path().join("run"));
    let mut changed = cfg.clone();
    changed.strata = StrataScheme::LocationMonth;
    changed.split = Some(0.7);
    let p = dir.path().join("abs.json");
    changed.save(&p).unwrap();
    assert_eq!(PipelineConfig::load(&p).unwrap(), changed);
    fs::write(&p, r#"{"gsr": "a", "tweets": "b", "output": "c", "colour": 1}"#).unwrap();
    assert!(PipelineConfig::load(&p).unwrap_err().is_validation());
}

#[test]
fn held_out_split_and_seed_sensitivity() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = generate_synthetic(&small(5), &dir.path().join("a")).unwrap();
    cfg.split = Some(0.7);
    let first = run(&cfg).unwrap();
    let eval = fs::read_to_string(cfg.output.join("evaluation.json")).unwrap();
    assert!(eval.contains("held_out"));
    cfg.seed += 1;
    let second = run(&cfg).unwrap();
    assert_ne!(first.manifest, second.manifest);
}
