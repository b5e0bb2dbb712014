use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pachinko(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pachinko"));
    cmd.args(args).env_remove("PACHINKO_SEED");
    if let Some(s) = seed {
        cmd.env("PACHINKO_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pachinko(args, None);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SCENARIO: &str = r#"{
  "cities": [
    {"name": "Sydney", "p_event": 0.2},
    {"name": "Melbourne", "p_event": 0.3},
    {"name": "Hobart", "p_event": 0.1}
  ],
  "mu_event": 20.0,
  "mu_nonevent": 2.0,
  "r": 5.0,
  "start": "2015-07-01",
  "days": 60,
  "corpus_size": 120,
  "seed": 5
}"#;

fn synth(dir: &Path) -> String {
    let scenario = dir.join("scenario.json");
    fs::write(&scenario, SCENARIO).unwrap();
    let data = dir.join("data");
    ok(&["synth", "--scenario", scenario.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    data.to_str().unwrap().to_string()
}

#[test]
fn stage_by_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let p = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    let d = |name: &str| format!("{data}/{name}");

    ok(&["filter", "--gsr", &d("gsr.csv"), "--tweets", &d("tweets.jsonl"), "--gazetteer", &d("gazetteer.json"), "--out", &p("filtered")]);
    assert!(tmp.path().join("filtered/filtered_tweets.jsonl").is_file());

    ok(&["train-classifier", "--corpus", &d("corpus.csv"), "--folds", "5", "--seed", "3", "--out", &p("model.json")]);
    ok(&["classify", "--model", &p("model.json"), "--tweets", &p("filtered/filtered_tweets.jsonl"), "--out", &p("classified.jsonl")]);
    ok(&["--config", &d("config.json"), "build-jars", "--tweets", &p("classified.jsonl"), "--out", &p("jars.csv")]);
    ok(&["fit-counts", "--jars", &p("jars.csv"), "--out", &p("counts.json")]);

    // No r from fit-counts and no --r: refuse with a validation exit code.
    let refused = pachinko(&["predict", "--jars", &p("jars.csv"), "--strata", "location", "--mode", "days", "--out", &p("pred.csv")], None);
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("fit-counts"));

    ok(&["predict", "--jars", &p("jars.csv"), "--strata", "location", "--mode", "days", "--fit", &p("counts.json"), "--out", &p("pred.csv")]);
    ok(&["predict", "--jars", &p("jars.csv"), "--strata", "location-month", "--mode", "tweets", "--r", "0.24", "--out", &p("pred2.csv")]);
    let header = fs::read_to_string(p("pred.csv")).unwrap();
    assert!(header.starts_with("date,city,stratum,y,alpha_post,beta_post,posterior_mean,evidence_ids\n"));

    let eval = ok(&["evaluate", "--jars", &p("jars.csv"), "--fit", &p("counts.json"), "--split", "0.7", "--seed", "1", "--out", &p("eval")]);
    assert!(String::from_utf8_lossy(&eval.stdout).contains("location+tweets"));
    assert!(fs::read_to_string(p("eval/roc.csv")).unwrap().starts_with("model,fpr,tpr,threshold\n"));

    ok(&["--config", &d("config.json"), "leadtime", "--tweets", &p("classified.jsonl"), "--fit", &p("counts.json"), "--max", "30", "--out", &p("lead.csv")]);
    assert_eq!(fs::read_to_string(p("lead.csv")).unwrap().lines().count(), 32);

    ok(&["report", "--gsr", &d("gsr.csv"), "--jars", &p("jars.csv"), "--ci-method", "wald", "--out", &p("report")]);
    let tests = fs::read_to_string(p("report/tests.json")).unwrap();
    assert!(tests.contains("\"factor\": \"city\""));
}

#[test]
fn run_is_deterministic_and_honours_seed_env() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let cfg = format!("{data}/config.json");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["--config", &cfg, "run", "--out", a.to_str().unwrap()]);
    ok(&["--config", &cfg, "run", "--out", b.to_str().unwrap()]);
    let ma = fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(ma, fs::read(b.join("manifest.json")).unwrap());

    let c = tmp.path().join("c");
    let out = pachinko(&["--config", &cfg, "run", "--out", c.to_str().unwrap()], Some("99"));
    assert!(out.status.success());
    let mc = fs::read_to_string(c.join("manifest.json")).unwrap();
    assert!(mc.contains("\"seed\": 99"));

    let bad = pachinko(&["--config", &cfg, "run"], Some("minus one"));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = pachinko(&["fit-counts", "--jars", "/nonexistent/jars.csv", "--out", "x.json"], None);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/jars.csv"));

    let unknown = pachinko(&["predict", "--strata", "galaxy"], None);
    assert_eq!(unknown.status.code(), Some(2));

    // A scenario with no events passes validation but cannot be fitted.
    let scenario = SCENARIO.replace("0.2}", "0.0}").replace("0.3}", "0.0}").replace("0.1}", "0.0}");
    let path = tmp.path().join("s.json");
    fs::write(&path, scenario).unwrap();
    let data = tmp.path().join("d");
    ok(&["synth", "--scenario", path.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    let failed = pachinko(&["--config", data.join("config.json").to_str().unwrap(), "run"], None);
    assert_eq!(failed.status.code(), Some(3), "{}", String::from_utf8_lossy(&failed.stderr));
    assert_eq!(fs::read_dir(data.join("run")).unwrap().count(), 0);
}
