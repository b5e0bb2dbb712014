//! Relevance filter: n-gram features, four candidate classifiers, and
//! cross-validated selection by F1.

pub mod features;
pub mod naive_bayes;
pub mod svm;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::TweetRecord;
use crate::error::{Error, Result};
use crate::random;

pub use features::{ngram_counts, tokens, FeatureVector, Vocabulary};
pub use naive_bayes::{BernoulliNb, GaussianNb};
pub use svm::{LinearSvm, Penalty, SvmParams};

pub const MODEL_FORMAT: &str = "pachinko-classifier";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    SvmL2,
    SvmL1,
    BernoulliNb,
    GaussianNb,
}

impl ClassifierKind {
    /// Also the tie-break order for model selection.
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::SvmL2,
        ClassifierKind::SvmL1,
        ClassifierKind::BernoulliNb,
        ClassifierKind::GaussianNb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::SvmL2 => "svm_l2",
            ClassifierKind::SvmL1 => "svm_l1",
            ClassifierKind::BernoulliNb => "bernoulli_nb",
            ClassifierKind::GaussianNb => "gaussian_nb",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown classifier kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Svm(LinearSvm),
    GaussianNb(GaussianNb),
    BernoulliNb(BernoulliNb),
}

impl ModelParams {
    pub fn fit(kind: ClassifierKind, docs: &[FeatureVector], labels: &[bool], n_features: usize, svm: &SvmParams) -> Self {
        match kind {
            ClassifierKind::SvmL2 => ModelParams::Svm(LinearSvm::fit(docs, labels, n_features, Penalty::L2, svm)),
            ClassifierKind::SvmL1 => ModelParams::Svm(LinearSvm::fit(docs, labels, n_features, Penalty::L1, svm)),
            ClassifierKind::GaussianNb => ModelParams::GaussianNb(GaussianNb::fit(docs, labels, n_features)),
            ClassifierKind::BernoulliNb => ModelParams::BernoulliNb(BernoulliNb::fit(docs, labels, n_features)),
        }
    }

    /// Positive values mean relevant.
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        match self {
            ModelParams::Svm(m) => m.decision(x),
            ModelParams::GaussianNb(m) => m.decision(x),
            ModelParams::BernoulliNb(m) => m.decision(x),
        }
    }

    pub fn predict(&self, x: &FeatureVector) -> bool {
        self.decision(x) > 0.0
    }
}

/// A fitted relevance classifier with its vocabulary and selection scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub format: String,
    pub version: u32,
    pub kind: ClassifierKind,
    pub vocabulary: Vocabulary,
    pub parameters: ModelParams,
    /// Mean cross-validated F1 of the selected kind, when selection ran.
    #[serde(default)]
    pub cv_f1: Option<f64>,
    /// Mean cross-validated F1 of every candidate.
    #[serde(default)]
    pub cv_scores: BTreeMap<ClassifierKind, f64>,
}

impl TrainedClassifier {
    pub fn predict_text(&self, text: &str) -> bool {
        self.parameters.predict(&self.vocabulary.transform(text))
    }

    /// Prediction for a document with no known n-grams.
    pub fn bias_class(&self) -> bool {
        self.parameters.predict(&FeatureVector::default())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut line = crate::fmt::to_json_line(self)?;
        line.push('\n');
        std::fs::write(path, line).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let model: TrainedClassifier = serde_json::from_reader(BufReader::new(file))?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::Validation(format!(
                "{}: unsupported model format {} v{}",
                path.display(),
                model.format,
                model.version
            )));
        }
        Ok(model)
    }
}

/// Labelled training text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelledText {
    pub text: String,
    pub label: bool,
}

impl LabelledText {
    pub fn new(text: impl Into<String>, label: bool) -> Self {
        LabelledText {
            text: text.into(),
            label,
        }
    }
}

/// Reads a `text,label` CSV with labels in {0,1}.
pub fn load_corpus(path: &Path) -> Result<Vec<LabelledText>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["text", "label"] {
        return Err(Error::parse(path, 1, "header must be text,label"));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let label = match row.get(1).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            other => return Err(Error::parse(path, line, format!("label must be 0 or 1, got {other:?}"))),
        };
        out.push(LabelledText::new(row.get(0).unwrap_or(""), label));
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, corpus: &[LabelledText]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["text", "label"])?;
    for doc in corpus {
        w.write_record([doc.text.as_str(), if doc.label { "1" } else { "0" }])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Harmonic mean of precision and recall; zero when there are no true
/// positives.
pub fn f1_score(tp: u64, fp: u64, fn_: u64) -> Result<f64> {
    if tp + fn_ == 0 {
        return Err(Error::Degenerate("F1 is undefined with no positives in truth".into()));
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    Ok(2.0 * precision * recall / (precision + recall))
}

fn check_classes(labels: &[bool], min_each: usize) -> Result<()> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos < min_each.max(1) || neg < min_each.max(1) {
        return Err(Error::Degenerate(format!(
            "need at least {} examples of each class, got {pos} positive and {neg} negative",
            min_each.max(1)
        )));
    }
    Ok(())
}

/// Fits the vocabulary and a classifier of `kind` on the whole corpus.
pub fn train(kind: ClassifierKind, corpus: &[LabelledText], svm: &SvmParams) -> Result<TrainedClassifier> {
    let labels: Vec<bool> = corpus.iter().map(|d| d.label).collect();
    check_classes(&labels, 1)?;
    let vocabulary = Vocabulary::fit(corpus.iter().map(|d| d.text.as_str()));
    let docs: Vec<FeatureVector> = corpus.iter().map(|d| vocabulary.transform(&d.text)).collect();
    let parameters = ModelParams::fit(kind, &docs, &labels, vocabulary.len(), svm);
    Ok(TrainedClassifier {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        kind,
        vocabulary,
        parameters,
        cv_f1: None,
        cv_scores: BTreeMap::new(),
    })
}

/// Stratified fold assignment: validation indices for each fold, sorted.
pub fn cv_folds(labels: &[bool], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Validation(format!("need at least 2 folds, got {folds}")));
    }
    check_classes(labels, folds)?;
    let mut rng = random::substream(seed, "cv-folds");
    let mut out = vec![Vec::new(); folds];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            out[pos % folds].push(i);
        }
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    Ok(out)
}

/// Validation F1 of `kind` on each fold. The vocabulary of every fold is fit
/// on that fold's training documents only.
pub fn cross_validate(
    kind: ClassifierKind,
    corpus: &[LabelledText],
    folds: usize,
    seed: u64,
    svm: &SvmParams,
) -> Result<Vec<f64>> {
    let labels: Vec<bool> = corpus.iter().map(|d| d.label).collect();
    let partition = cv_folds(&labels, folds, seed)?;
    let mut scores = Vec::with_capacity(folds);
    for validation in &partition {
        let mut in_validation = vec![false; corpus.len()];
        validation.iter().for_each(|&i| in_validation[i] = true);
        let train_set: Vec<LabelledText> = corpus
            .iter()
            .zip(&in_validation)
            .filter(|(_, &v)| !v)
            .map(|(d, _)| d.clone())
            .collect();
        let model = train(kind, &train_set, svm)?;
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for &i in validation {
            match (model.predict_text(&corpus[i].text), corpus[i].label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        scores.push(f1_score(tp, fp, fn_)?);
    }
    Ok(scores)
}

/// Picks the kind with the highest mean cross-validated F1 (ties go to the
/// earlier kind in [`ClassifierKind::ALL`] order) and refits it on the whole
/// corpus.
pub fn select_model(
    corpus: &[LabelledText],
    kinds: &[ClassifierKind],
    folds: usize,
    seed: u64,
    svm: &SvmParams,
) -> Result<TrainedClassifier> {
    if kinds.is_empty() {
        return Err(Error::Validation("no classifier kinds to select from".into()));
    }
    let mut ordered = kinds.to_vec();
    ordered.sort();
    ordered.dedup();
    let mut scores = BTreeMap::new();
    for &kind in &ordered {
        let folds = cross_validate(kind, corpus, folds, seed, svm)?;
        scores.insert(kind, folds.iter().sum::<f64>() / folds.len() as f64);
    }
    let best = pick_best(&scores);
    let mut model = train(best, corpus, svm)?;
    model.cv_f1 = scores.get(&best).copied();
    model.cv_scores = scores;
    Ok(model)
}

fn pick_best(scores: &BTreeMap<ClassifierKind, f64>) -> ClassifierKind {
    let mut best: Option<(ClassifierKind, f64)> = None;
    for (&kind, &score) in scores {
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((kind, score));
        }
    }
    best.expect("non-empty scores").0
}

/// Marks every tweet relevant or not.
pub fn classify(model: &TrainedClassifier, tweets: &[TweetRecord]) -> Vec<TweetRecord> {
    tweets
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.relevant = Some(model.predict_text(&t.text));
            t
        })
        .collect()
}
