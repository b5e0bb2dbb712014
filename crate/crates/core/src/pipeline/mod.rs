//! End-to-end runs: configuration, the staged driver and its manifest.

pub mod synth;

pub use synth::{generate_synthetic, synthesize, LeadTime, SynthCity, SyntheticData, SyntheticScenario};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes::{predict_all, write_predictions, CountsMode, Dispersion, ModelSpec, StrataScheme};
use crate::classifier::{self, ClassifierKind, SvmParams};
use crate::counts::{counts_report, daily_counts, write_daily_counts};
use crate::data::{self, CityGazetteer, JarGrid, TweetRecord};
use crate::error::{Error, Result};
use crate::eval;
use crate::filter::apply_filters;
use crate::fmt::write_json;
use crate::random::GENERATOR;
use crate::stats::{self, CiMethod, Factor};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "PACHINKO_SEED";

/// The seed given in [`SEED_ENV`], if any.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Validation(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub const MANIFEST_FORMAT: &str = "pachinko-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Which relevance classifier to use; `auto` selects by cross-validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ClassifierChoice {
    #[default]
    Auto,
    Kind(ClassifierKind),
}

impl std::str::FromStr for ClassifierChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            Ok(ClassifierChoice::Auto)
        } else {
            s.parse().map(ClassifierChoice::Kind)
        }
    }
}

impl std::fmt::Display for ClassifierChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassifierChoice::Auto => f.write_str("auto"),
            ClassifierChoice::Kind(k) => write!(f, "{k}"),
        }
    }
}

impl Serialize for ClassifierChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClassifierChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_folds() -> usize {
    5
}

fn default_lead_max() -> u32 {
    30
}

fn default_level() -> f64 {
    0.95
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub gsr: PathBuf,
    pub tweets: PathBuf,
    /// Labelled corpus for the relevance classifier. Without one every
    /// filtered tweet counts as indicative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Defaults to the eight Australian capitals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gazetteer: Option<PathBuf>,
    pub output: PathBuf,
    #[serde(default = "default_strata")]
    pub strata: StrataScheme,
    #[serde(default = "default_mode")]
    pub mode: CountsMode,
    #[serde(default)]
    pub classifier: ClassifierChoice,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_lead_max")]
    pub lead_time_max: u32,
    #[serde(default = "default_ci")]
    pub ci_method: CiMethod,
    #[serde(default = "default_level")]
    pub ci_level: f64,
    /// Training fraction for a held-out evaluation, in addition to the
    /// in-sample one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<f64>,
    /// Fixed dispersion instead of the fitted one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

fn default_strata() -> StrataScheme {
    StrataScheme::Location
}

fn default_mode() -> CountsMode {
    CountsMode::Days
}

fn default_ci() -> CiMethod {
    CiMethod::Wilson
}

impl PipelineConfig {
    pub fn new(gsr: impl Into<PathBuf>, tweets: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            gsr: gsr.into(),
            tweets: tweets.into(),
            corpus: None,
            gazetteer: None,
            output: output.into(),
            strata: default_strata(),
            mode: default_mode(),
            classifier: ClassifierChoice::Auto,
            seed: 0,
            folds: default_folds(),
            lead_time_max: default_lead_max(),
            ci_method: default_ci(),
            ci_level: default_level(),
            split: None,
            r: None,
        }
    }

    /// Reads a JSON config. Relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, e.line() as u64, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.gsr);
        rebase(&mut cfg.tweets);
        rebase(&mut cfg.output);
        if let Some(p) = cfg.corpus.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.gazetteer.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Applies [`SEED_ENV`] when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Some(seed) = env_seed()? {
            self.seed = seed;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let inputs = [("GSR", Some(&self.gsr)), ("tweets", Some(&self.tweets)), ("corpus", self.corpus.as_ref()), ("gazetteer", self.gazetteer.as_ref())];
        for (what, path) in inputs {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::Validation(format!("{what} file {} does not exist", p.display())));
                }
            }
        }
        if self.folds < 2 {
            return Err(Error::Validation("folds must be at least 2".into()));
        }
        if let Some(f) = self.split {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Validation(format!("split must lie in (0, 1), got {f}")));
            }
        }
        if let Some(r) = self.r {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Validation(format!("r must be positive, got {r}")));
            }
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Validation(format!("ci_level must lie in (0, 1), got {}", self.ci_level)));
        }
        Ok(())
    }

    pub fn load_gazetteer(&self) -> Result<CityGazetteer> {
        match &self.gazetteer {
            Some(p) => CityGazetteer::load(p),
            None => Ok(CityGazetteer::australian_capitals()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Artifacts whose content under `dir` no longer matches its hash.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        for a in &self.artifacts {
            let p = dir.join(&a.path);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            if hex::encode(Sha256::digest(&bytes)) != a.sha256 {
                stale.push(a.path.clone());
            }
        }
        Ok(stale)
    }
}

fn artifacts_in(dir: &Path) -> Result<Vec<Artifact>> {
    let mut names: Vec<String> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let p = dir.join(&name);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Ok(Artifact {
                path: name,
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            })
        })
        .collect()
}

/// What a successful run leaves behind.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub r: f64,
    pub auc: BTreeMap<String, f64>,
    pub lead_time: Vec<eval::LeadTimeResult>,
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    info!("stage {name}");
    f().map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Model-level results written to `evaluation.json`.
#[derive(Serialize)]
struct EvaluationReport<'a> {
    in_sample: Vec<ModelSummary<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    held_out: Option<Vec<ModelSummary<'a>>>,
}

#[derive(Serialize)]
struct ModelSummary<'a> {
    model: &'a str,
    auc: f64,
    per_city: &'a BTreeMap<data::CityId, f64>,
    skipped_cities: &'a [data::CityId],
}

fn summaries(evals: &[eval::ModelEvaluation]) -> Vec<ModelSummary<'_>> {
    evals
        .iter()
        .map(|e| ModelSummary {
            model: &e.model,
            auc: e.auc,
            per_city: &e.per_city,
            skipped_cities: &e.skipped_cities,
        })
        .collect()
}

/// Writes per-model and per-city AUC, optionally with a held-out block.
pub fn write_evaluation(path: &Path, in_sample: &[eval::ModelEvaluation], held_out: Option<&[eval::ModelEvaluation]>) -> Result<()> {
    write_json(
        path,
        &EvaluationReport {
            in_sample: summaries(in_sample),
            held_out: held_out.map(summaries),
        },
    )
}

/// Runs filter, classify, jar fill, count fit, predict, evaluate and report
/// into `config.output`, then writes `manifest.json`. On failure the staging
/// directory is removed and nothing is left in the output directory.
pub fn run(config: &PipelineConfig) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(&config.output).map_err(|e| Error::io(&config.output, e))?;
    let staging = config.output.join(".partial");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;

    let result = run_stages(config, &staging);
    let summary = match result {
        Ok(s) => s,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    let artifacts = artifacts_in(&staging)?;
    for a in &artifacts {
        let (from, to) = (staging.join(&a.path), config.output.join(&a.path));
        fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
    }
    fs::remove_dir(&staging).map_err(|e| Error::io(&staging, e))?;
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        generator: GENERATOR.into(),
        seed: config.seed,
        artifacts,
    };
    write_json(&config.output.join("manifest.json"), &manifest)?;
    Ok(RunSummary { manifest, ..summary })
}

fn run_stages(config: &PipelineConfig, out: &Path) -> Result<RunSummary> {
    let (gazetteer, gsr, tweets) = stage("load", || {
        let gazetteer = config.load_gazetteer()?;
        let mut gsr = data::load_gsr(&config.gsr)?;
        data::validate_gsr(&mut gsr, &gazetteer, None)?;
        let tweets = data::load_tweets(&config.tweets)?;
        Ok((gazetteer, gsr, tweets))
    })?;

    let filtered = stage("filter", || {
        let (kept, report) = apply_filters(&tweets, &gazetteer);
        data::write_tweets(&out.join("filtered_tweets.jsonl"), &kept)?;
        write_json(&out.join("filter_report.json"), &report)?;
        Ok(kept)
    })?;

    let classified: Vec<TweetRecord> = stage("classify", || match &config.corpus {
        None => Ok(filtered),
        Some(path) => {
            let corpus = classifier::load_corpus(path)?;
            let svm = SvmParams {
                seed: config.seed,
                ..SvmParams::default()
            };
            let model = match config.classifier {
                ClassifierChoice::Auto => classifier::select_model(&corpus, &ClassifierKind::ALL, config.folds, config.seed, &svm)?,
                ClassifierChoice::Kind(k) => classifier::train(k, &corpus, &svm)?,
            };
            model.save(&out.join("classifier.json"))?;
            let classified = classifier::classify(&model, &filtered);
            data::write_tweets(&out.join("classified_tweets.jsonl"), &classified)?;
            Ok(classified)
        }
    })?;

    let (template, grid) = stage("jars", || {
        let template = data::build_jar_grid(&gsr);
        let mut grid = template.clone();
        let report = data::drop_tweets_into_jars(&mut grid, &classified);
        data::write_jars(&out.join("jars.csv"), &grid)?;
        write_json(&out.join("drop_report.json"), &report)?;
        Ok((template, grid))
    })?;

    let r = stage("fit-counts", || {
        let counts = daily_counts(&grid, None);
        write_daily_counts(&out.join("daily_counts.csv"), &counts)?;
        let fitted = match counts_report(&counts) {
            Ok(report) => {
                report.save(&out.join("counts.json"))?;
                report.r()
            }
            Err(e) if config.r.is_some() => {
                log::warn!("count fit failed ({e}); using the configured r");
                None
            }
            Err(e) => return Err(e),
        };
        config
            .r
            .or(fitted)
            .ok_or_else(|| Error::Degenerate("no dispersion r was fitted".into()))
    })?;
    let dispersion = Dispersion::global(r);
    let spec = ModelSpec::tweets(config.strata);

    stage("predict", || {
        let preds = predict_all(&grid, spec, config.mode, &dispersion)?;
        write_predictions(&out.join("predictions.csv"), &preds)?;
        eval::write_tiles(&out.join("tiles_predicted.csv"), &eval::prediction_tiles(&preds))?;
        eval::write_tiles(&out.join("tiles_truth.csv"), &eval::truth_tiles(&grid))
    })?;

    let auc = stage("evaluate", || {
        let in_sample = eval::evaluate_models(&grid, config.mode, &dispersion, None)?;
        let held_out = config
            .split
            .map(|f| eval::evaluate_models(&grid, config.mode, &dispersion, Some((f, config.seed))))
            .transpose()?;
        let curves: Vec<(String, eval::RocCurve)> = in_sample.iter().map(|e| (e.model.clone(), e.curve.clone())).collect();
        eval::write_roc(&out.join("roc.csv"), &curves)?;
        write_evaluation(&out.join("evaluation.json"), &in_sample, held_out.as_deref())?;
        Ok(in_sample.iter().map(|e| (e.model.clone(), e.auc)).collect::<BTreeMap<_, _>>())
    })?;

    let lead_time = stage("lead-time", || {
        let results = eval::lead_time_auc(&template, &classified, spec, config.mode, &dispersion, config.lead_time_max)?;
        eval::write_lead_time(&out.join("lead_time.csv"), &results)?;
        Ok(results)
    })?;

    stage("report", || write_gsr_reports(&gsr, &grid, config, out))?;

    Ok(RunSummary {
        manifest: Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            generator: GENERATOR.into(),
            seed: config.seed,
            artifacts: Vec::new(),
        },
        r,
        auc,
        lead_time,
    })
}

/// Association tests, proportion intervals and the low-tweet diagnostic.
pub fn write_gsr_reports(gsr: &[data::GsrRecord], grid: &JarGrid, config: &PipelineConfig, out: &Path) -> Result<()> {
    let mut tests = Vec::new();
    let mut ci_rows = Vec::new();
    for factor in [Factor::City, Factor::Month, Factor::Weekday] {
        let table = stats::ContingencyTable::from_gsr(gsr, factor);
        let Ok(table) = table else {
            log::warn!("{} factor has fewer than two levels; test skipped", factor.name());
            continue;
        };
        ci_rows.extend(stats::ci_table(&table, factor, config.ci_level, config.ci_method)?);
        match stats::association_report(gsr, factor) {
            Ok(report) => tests.push(report),
            Err(e) => log::warn!("{} test skipped: {e}", factor.name()),
        }
    }
    write_json(&out.join("tests.json"), &tests)?;
    stats::write_ci_table(&out.join("proportions.csv"), &ci_rows)?;
    let diagnostics: Vec<_> = grid
        .cities()
        .iter()
        .map(|c| stats::low_tweet_diagnostic(grid, c, LOW_TWEET_THRESHOLD))
        .collect();
    write_json(&out.join("low_tweet.json"), &diagnostics)
}

/// Jars with at most this many indicative tweets form the low-count subset.
pub const LOW_TWEET_THRESHOLD: u64 = 25;
