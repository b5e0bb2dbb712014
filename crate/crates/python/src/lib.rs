//! Python bindings for `pachinko_core`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{DateTime, Days, NaiveDate};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pachinko_core::bayes::{self, BetaParams, StrataCounts, StrataKey};
use pachinko_core::classifier::{self, ClassifierKind, LabelledText, SvmParams, TrainedClassifier};
use pachinko_core::counts::{self, CountModelFit, DailyCount};
use pachinko_core::data::GeoPoint;
use pachinko_core::pipeline::{self, synth::SyntheticScenario, PipelineConfig};
use pachinko_core::{eval, filter, stats, Error};

fn py_err(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// Great-circle distance in miles between two (lat, lon) points in degrees.
#[pyfunction]
fn haversine_miles(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    filter::haversine_miles(GeoPoint::new(lat1, lon1), GeoPoint::new(lat2, lon2))
}

/// Dates referenced by `text`, as `(start, end, kind, iso_date)` with
/// character offsets. `authored_at` is an RFC 3339 timestamp.
#[pyfunction]
fn resolve_temporal(text: &str, authored_at: &str) -> PyResult<Vec<(usize, usize, String, String)>> {
    let at = DateTime::parse_from_rfc3339(authored_at)
        .map_err(|e| PyValueError::new_err(format!("bad timestamp {authored_at:?}: {e}")))?;
    Ok(filter::resolve_temporal(text, &at)
        .into_iter()
        .map(|m| {
            let kind = format!("{:?}", m.kind);
            (m.span.0, m.span.1, kind, m.resolved.to_string())
        })
        .collect())
}

#[pyfunction]
fn tokens(text: &str) -> Vec<String> {
    classifier::tokens(text)
}

/// Unigram, bigram and trigram counts.
#[pyfunction]
fn ngram_counts(text: &str) -> BTreeMap<String, u32> {
    classifier::ngram_counts(text)
}

#[pyfunction]
#[pyo3(signature = (tp, fp, fn_))]
fn f1_score(tp: u64, fp: u64, fn_: u64) -> PyResult<f64> {
    classifier::f1_score(tp, fp, fn_).map_err(py_err)
}

/// Count-model fit: `family`, `lambda_`, `mu`, `r`,
/// `log_likelihood` and `warning`.
#[pyclass(name = "CountFit", frozen, get_all)]
struct PyCountFit {
    family: String,
    lambda_: Option<f64>,
    mu: Option<f64>,
    r: Option<f64>,
    log_likelihood: f64,
    warning: Option<String>,
}

impl From<CountModelFit> for PyCountFit {
    fn from(f: CountModelFit) -> Self {
        PyCountFit {
            family: format!("{:?}", f.family).to_lowercase(),
            lambda_: f.lambda,
            mu: f.mu,
            r: f.r,
            log_likelihood: f.log_likelihood,
            warning: f.warning,
        }
    }
}

#[pymethods]
impl PyCountFit {
    fn __repr__(&self) -> String {
        format!(
            "CountFit(family={:?}, lambda_={:?}, mu={:?}, r={:?}, log_likelihood={})",
            self.family, self.lambda_, self.mu, self.r, self.log_likelihood
        )
    }
}

fn daily(xs: &[u64]) -> Vec<DailyCount> {
    let base = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    xs.iter()
        .enumerate()
        .map(|(i, &count)| DailyCount {
            date: base + Days::new(i as u64),
            count,
        })
        .collect()
}

#[pyfunction]
fn fit_poisson(counts: Vec<u64>) -> PyResult<PyCountFit> {
    counts::fit_poisson(&daily(&counts)).map(Into::into).map_err(py_err)
}

/// Negative-binomial maximum likelihood in the (mu, r) parameterisation.
#[pyfunction]
fn fit_negbinom(counts: Vec<u64>) -> PyResult<PyCountFit> {
    counts::fit_negbinom(&daily(&counts)).map(Into::into).map_err(py_err)
}

#[pyfunction]
fn negbinom_pmf(k: u64, mu: f64, r: f64) -> f64 {
    counts::negbinom_pmf(k, mu, r)
}

/// Beta distribution over the daily event probability.
#[pyclass(name = "Beta", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyBeta(BetaParams);

#[pymethods]
impl PyBeta {
    #[new]
    fn new(a: f64, b: f64) -> PyResult<Self> {
        BetaParams::new(a, b).map(PyBeta).map_err(py_err)
    }

    /// Empirical prior `Beta(event days, non-event days)`.
    #[staticmethod]
    fn from_events(events: Vec<bool>) -> PyResult<Self> {
        bayes::prior_from_events(events).map(PyBeta).map_err(py_err)
    }

    #[getter]
    fn a(&self) -> f64 {
        self.0.a
    }

    #[getter]
    fn b(&self) -> f64 {
        self.0.b
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn variance(&self) -> f64 {
        self.0.variance()
    }

    fn ln_pdf(&self, theta: f64) -> f64 {
        self.0.ln_pdf(theta)
    }

    /// Posterior after `successes` event days out of `trials`.
    fn stratum_update(&self, trials: u64, successes: u64) -> PyResult<Self> {
        if successes > trials {
            return Err(PyValueError::new_err("successes exceed trials"));
        }
        let counts = StrataCounts {
            key: StrataKey::All,
            trials,
            successes,
        };
        Ok(PyBeta(bayes::strata_posterior(self.0, &counts)))
    }

    /// Posterior for a day holding `y` indicative tweets under dispersion `r`.
    fn day_update(&self, y: u64, r: f64) -> Self {
        PyBeta(bayes::day_posterior(self.0, y, r))
    }

    fn __repr__(&self) -> String {
        format!("Beta({}, {})", self.0.a, self.0.b)
    }
}

/// Pearson test on `(name, events, non_events)` rows: `(statistic, df, p)`.
#[pyfunction]
fn chi_squared_test(rows: Vec<(String, u64, u64)>) -> PyResult<(f64, u64, f64)> {
    let (names, counts) = rows.into_iter().map(|(n, e, ne)| (n, [e, ne])).unzip();
    let table = stats::ContingencyTable::new(names, counts).map_err(py_err)?;
    let res = stats::chi_squared_test(&table).map_err(py_err)?;
    Ok((res.statistic, res.df as u64, res.p_value))
}

#[pyfunction]
#[pyo3(signature = (successes, trials, level = 0.95, method = "wilson"))]
fn proportion_ci(successes: u64, trials: u64, level: f64, method: &str) -> PyResult<(f64, f64)> {
    stats::proportion_ci(successes, trials, level, parse(method)?).map_err(py_err)
}

/// IRLS logistic regression of `y` on `x`, returned as a dict.
#[pyfunction]
fn fit_logistic(py: Python<'_>, x: Vec<f64>, y: Vec<bool>) -> PyResult<Py<PyAny>> {
    let fit = stats::fit_logistic(&x, &y).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("intercept", fit.intercept)?;
    d.set_item("slope", fit.slope)?;
    d.set_item("converged", fit.converged)?;
    d.set_item("iterations", fit.iterations)?;
    d.set_item("separated", fit.separated)?;
    d.set_item("log_likelihood_trace", fit.log_likelihood_trace)?;
    Ok(d.into_any().unbind())
}

/// `(fpr, tpr, thresholds)`; the first point is the origin at `+inf`.
#[pyfunction]
fn roc_curve(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let curve = eval::roc_curve(&scores, &labels).map_err(py_err)?;
    let (fpr, tpr) = curve.points().into_iter().unzip();
    Ok((fpr, tpr, curve.thresholds))
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    eval::roc_auc(&scores, &labels).map_err(py_err)
}

/// Fitted relevance classifier.
#[pyclass(name = "Classifier", frozen)]
struct PyClassifier(TrainedClassifier);

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    #[pyo3(signature = (texts, labels, kind = "svm_l2", seed = 0))]
    fn train(texts: Vec<String>, labels: Vec<bool>, kind: &str, seed: u64) -> PyResult<Self> {
        if texts.len() != labels.len() {
            return Err(PyValueError::new_err("texts and labels differ in length"));
        }
        let kind: ClassifierKind = parse(kind)?;
        let corpus: Vec<LabelledText> = texts.into_iter().zip(labels).map(|(t, l)| LabelledText::new(t, l)).collect();
        let svm = SvmParams { seed, ..SvmParams::default() };
        classifier::train(kind, &corpus, &svm).map(PyClassifier).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        TrainedClassifier::load(&path).map(PyClassifier).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(py_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind.name()
    }

    fn predict(&self, text: &str) -> bool {
        self.0.predict_text(text)
    }
}

/// Writes a planted synthetic dataset under `out` and returns the path of
/// its pipeline config.
#[pyfunction]
#[pyo3(signature = (out, mu_event = 40.0, mu_nonevent = 2.0, r = 5.0, p_event = 0.15, seed = 0))]
fn synthesize(out: PathBuf, mu_event: f64, mu_nonevent: f64, r: f64, p_event: f64, seed: u64) -> PyResult<PathBuf> {
    let scenario = SyntheticScenario::planted(mu_event, mu_nonevent, r, p_event, seed);
    pipeline::synth::generate_synthetic(&scenario, &out).map_err(py_err)?;
    Ok(out.join("config.json"))
}

/// Result of a full pipeline run.
#[pyclass(name = "RunSummary", frozen, get_all)]
struct PyRunSummary {
    output: PathBuf,
    r: f64,
    auc: BTreeMap<String, f64>,
    /// `(n, auc, tweets)` per minimum lead time.
    lead_time: Vec<(u32, f64, u64)>,
    artifacts: Vec<String>,
}

/// Runs every stage for the config at `config`. `output` and `seed`
/// override the file; `PACHINKO_SEED` is honoured as on the command line.
#[pyfunction]
#[pyo3(signature = (config, output = None, seed = None))]
fn run_pipeline(py: Python<'_>, config: PathBuf, output: Option<PathBuf>, seed: Option<u64>) -> PyResult<PyRunSummary> {
    let mut cfg = PipelineConfig::load(&config).map_err(py_err)?;
    cfg.apply_env().map_err(py_err)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let summary = py.detach(|| pipeline::run(&cfg)).map_err(py_err)?;
    Ok(PyRunSummary {
        output: cfg.output,
        r: summary.r,
        auc: summary.auc,
        lead_time: summary.lead_time.iter().map(|l| (l.n, l.auc, l.tweets)).collect(),
        artifacts: summary.manifest.artifacts.into_iter().map(|a| a.path).collect(),
    })
}

#[pymodule]
fn pachinko(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(haversine_miles, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_temporal, m)?)?;
    m.add_function(wrap_pyfunction!(tokens, m)?)?;
    m.add_function(wrap_pyfunction!(ngram_counts, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    m.add_function(wrap_pyfunction!(fit_poisson, m)?)?;
    m.add_function(wrap_pyfunction!(fit_negbinom, m)?)?;
    m.add_function(wrap_pyfunction!(negbinom_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(chi_squared_test, m)?)?;
    m.add_function(wrap_pyfunction!(proportion_ci, m)?)?;
    m.add_function(wrap_pyfunction!(fit_logistic, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_class::<PyBeta>()?;
    m.add_class::<PyCountFit>()?;
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyRunSummary>()?;
    m.add("GENERATOR", pachinko_core::random::GENERATOR)?;
    Ok(())
}
