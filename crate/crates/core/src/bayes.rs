//! Empirical-Bayes beta prior, strata-level conjugate update and the
//! day-level posterior from indicative-tweet counts.
//!
//! With prior `Beta(a, b)` from the national event/non-event day totals, a
//! stratum with `N` trials and `E` successes has posterior
//! `Beta(a + E, b + N - E)`. A jar in that stratum holding `y` indicative
//! tweets then multiplies in the `theta^y (1 - theta)^r` kernel of the
//! negative-binomial count model, giving `Beta(a + E + y, b + N - E + r)`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::data::{CityId, GsrRecord, Jar, JarGrid, JarKey};
use crate::error::{Error, Result};
use crate::fmt::fmt_f64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Degenerate(format!("Beta({a}, {b}) needs positive finite shapes")));
        }
        Ok(BetaParams { a, b })
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn variance(&self) -> f64 {
        let s = self.a + self.b;
        self.a * self.b / (s * s * (s + 1.0))
    }

    pub fn ln_pdf(&self, theta: f64) -> f64 {
        if !(0.0..=1.0).contains(&theta) {
            return f64::NEG_INFINITY;
        }
        (self.a - 1.0) * theta.ln() + (self.b - 1.0) * (1.0 - theta).ln() - ln_beta(self.a, self.b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrataScheme {
    None,
    Location,
    Month,
    LocationMonth,
}

impl StrataScheme {
    pub const ALL: [StrataScheme; 4] = [
        StrataScheme::None,
        StrataScheme::Location,
        StrataScheme::Month,
        StrataScheme::LocationMonth,
    ];

    pub fn key(self, jar: &JarKey) -> StrataKey {
        match self {
            StrataScheme::None => StrataKey::All,
            StrataScheme::Location => StrataKey::City(jar.city.clone()),
            StrataScheme::Month => StrataKey::Month(jar.month()),
            StrataScheme::LocationMonth => StrataKey::CityMonth(jar.city.clone(), jar.month()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrataScheme::None => "none",
            StrataScheme::Location => "location",
            StrataScheme::Month => "month",
            StrataScheme::LocationMonth => "location-month",
        }
    }
}

impl FromStr for StrataScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrataScheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown strata scheme {s:?}")))
    }
}

const MONTH_ABBR: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];

/// One stratum. Months are calendar months regardless of year.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrataKey {
    All,
    City(CityId),
    Month(u32),
    CityMonth(CityId, u32),
}

impl fmt::Display for StrataKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let month = |m: &u32| MONTH_ABBR[(*m as usize).clamp(1, 12) - 1];
        match self {
            StrataKey::All => f.write_str("all"),
            StrataKey::City(c) => write!(f, "{c}"),
            StrataKey::Month(m) => f.write_str(month(m)),
            StrataKey::CityMonth(c, m) => write!(f, "{c}/{}", month(m)),
        }
    }
}

/// What a stratum's trials are.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountsMode {
    /// Trials are day-rows, successes are event days.
    Days,
    /// Trials are indicative tweets, successes those on event days.
    Tweets,
}

impl FromStr for CountsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "days" => Ok(CountsMode::Days),
            "tweets" => Ok(CountsMode::Tweets),
            _ => Err(Error::Validation(format!("unknown counts mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StrataCounts {
    pub key: StrataKey,
    pub trials: u64,
    pub successes: u64,
}

/// `Beta(event days, non-event days)` over the whole record.
pub fn prior_from_gsr(gsr: &[GsrRecord]) -> Result<BetaParams> {
    prior_from_events(gsr.iter().map(|r| r.event))
}

pub fn prior_from_events(events: impl IntoIterator<Item = bool>) -> Result<BetaParams> {
    let (mut ev, mut non) = (0u64, 0u64);
    for e in events {
        if e {
            ev += 1;
        } else {
            non += 1;
        }
    }
    if ev == 0 || non == 0 {
        return Err(Error::Degenerate(format!(
            "empirical prior needs both event and non-event days (got {ev} and {non})"
        )));
    }
    BetaParams::new(ev as f64, non as f64)
}

/// Per-stratum trials and successes over the given jars, in key order.
pub fn strata_counts<'a>(
    jars: impl IntoIterator<Item = &'a Jar>,
    scheme: StrataScheme,
    mode: CountsMode,
) -> Vec<StrataCounts> {
    let mut acc: BTreeMap<StrataKey, (u64, u64)> = BTreeMap::new();
    for jar in jars {
        let entry = acc.entry(scheme.key(&jar.key)).or_insert((0, 0));
        let weight = match mode {
            CountsMode::Days => 1,
            CountsMode::Tweets => jar.indicative_count,
        };
        entry.0 += weight;
        if jar.event {
            entry.1 += weight;
        }
    }
    acc.into_iter()
        .map(|(key, (trials, successes))| StrataCounts { key, trials, successes })
        .collect()
}

pub fn strata_posterior(prior: BetaParams, counts: &StrataCounts) -> BetaParams {
    debug_assert!(counts.successes <= counts.trials);
    BetaParams {
        a: prior.a + counts.successes as f64,
        b: prior.b + (counts.trials - counts.successes) as f64,
    }
}

pub fn day_posterior(strata: BetaParams, y: u64, r: f64) -> BetaParams {
    BetaParams {
        a: strata.a + y as f64,
        b: strata.b + r,
    }
}

/// Global dispersion with optional per-stratum overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct Dispersion {
    pub global: f64,
    pub overrides: BTreeMap<StrataKey, f64>,
}

impl Dispersion {
    pub fn global(r: f64) -> Self {
        Dispersion {
            global: r,
            overrides: BTreeMap::new(),
        }
    }

    pub fn for_stratum(&self, key: &StrataKey) -> f64 {
        self.overrides.get(key).copied().unwrap_or(self.global)
    }
}

/// A model as named in the evaluation: a stratification, and whether the
/// indicative tweets enter the day-level update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub scheme: StrataScheme,
    pub use_tweets: bool,
}

impl ModelSpec {
    /// Constant national prior mean: the uninformative baseline.
    pub const OVERALL: ModelSpec = ModelSpec {
        scheme: StrataScheme::None,
        use_tweets: false,
    };
    pub const TWEETS_ONLY: ModelSpec = ModelSpec {
        scheme: StrataScheme::None,
        use_tweets: true,
    };
    pub const LOCATION_TWEETS: ModelSpec = ModelSpec {
        scheme: StrataScheme::Location,
        use_tweets: true,
    };
    pub const MONTH_TWEETS: ModelSpec = ModelSpec {
        scheme: StrataScheme::Month,
        use_tweets: true,
    };
    pub const MONTH_LOCATION_TWEETS: ModelSpec = ModelSpec {
        scheme: StrataScheme::LocationMonth,
        use_tweets: true,
    };

    pub const STANDARD: [ModelSpec; 5] = [
        ModelSpec::OVERALL,
        ModelSpec::TWEETS_ONLY,
        ModelSpec::LOCATION_TWEETS,
        ModelSpec::MONTH_TWEETS,
        ModelSpec::MONTH_LOCATION_TWEETS,
    ];

    pub fn tweets(scheme: StrataScheme) -> Self {
        ModelSpec { scheme, use_tweets: true }
    }

    pub fn name(&self) -> String {
        match (self.scheme, self.use_tweets) {
            (StrataScheme::None, false) => "overall".into(),
            (StrataScheme::None, true) => "tweets-only".into(),
            (s, true) => format!("{}+tweets", s.name()),
            (s, false) => s.name().into(),
        }
    }
}

/// Strata posteriors fitted on a set of training jars.
#[derive(Clone, Debug, PartialEq)]
pub struct BayesModel {
    pub spec: ModelSpec,
    pub prior: BetaParams,
    pub strata: BTreeMap<StrataKey, BetaParams>,
}

impl BayesModel {
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a Jar>, spec: ModelSpec, mode: CountsMode) -> Result<Self> {
        let train: Vec<&Jar> = train.into_iter().collect();
        let prior = prior_from_events(train.iter().map(|j| j.event))?;
        // The baseline predicts the bare national prior; every other model,
        // including the unstratified one, updates on its strata counts.
        let strata = if spec == ModelSpec::OVERALL {
            BTreeMap::new()
        } else {
            strata_counts(train.iter().copied(), spec.scheme, mode)
                .into_iter()
                .map(|c| (c.key.clone(), strata_posterior(prior, &c)))
                .collect()
        };
        Ok(BayesModel { spec, prior, strata })
    }

    /// Strata without training data fall back to the prior.
    pub fn stratum_posterior(&self, key: &StrataKey) -> BetaParams {
        self.strata.get(key).copied().unwrap_or(self.prior)
    }

    pub fn predict(&self, jar: &Jar, dispersion: &Dispersion) -> PredictionRecord {
        let stratum = self.spec.scheme.key(&jar.key);
        let base = self.stratum_posterior(&stratum);
        let (posterior, y) = if self.spec.use_tweets {
            let r = dispersion.for_stratum(&stratum);
            (day_posterior(base, jar.indicative_count, r), jar.indicative_count)
        } else {
            (base, 0)
        };
        PredictionRecord {
            key: jar.key.clone(),
            stratum: stratum.to_string(),
            y,
            posterior,
            posterior_mean: posterior.mean(),
            evidence: if self.spec.use_tweets { jar.evidence.clone() } else { Vec::new() },
        }
    }

    pub fn predict_many<'a>(&self, jars: impl IntoIterator<Item = &'a Jar>, dispersion: &Dispersion) -> Vec<PredictionRecord> {
        jars.into_iter().map(|j| self.predict(j, dispersion)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub key: JarKey,
    pub stratum: String,
    pub y: u64,
    pub posterior: BetaParams,
    pub posterior_mean: f64,
    pub evidence: Vec<String>,
}

/// Fits on every jar and predicts every jar.
pub fn predict_all(jars: &JarGrid, spec: ModelSpec, mode: CountsMode, dispersion: &Dispersion) -> Result<Vec<PredictionRecord>> {
    if !(dispersion.global > 0.0) {
        return Err(Error::Validation(format!("dispersion r must be positive, got {}", dispersion.global)));
    }
    let model = BayesModel::fit(jars.iter(), spec, mode)?;
    Ok(model.predict_many(jars.iter(), dispersion))
}

/// Writes the audit-trail CSV
/// `date,city,stratum,y,alpha_post,beta_post,posterior_mean,evidence_ids`.
pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record([
        "date",
        "city",
        "stratum",
        "y",
        "alpha_post",
        "beta_post",
        "posterior_mean",
        "evidence_ids",
    ])?;
    for p in preds {
        w.write_record([
            p.key.date.to_string(),
            p.key.city.to_string(),
            p.stratum.clone(),
            p.y.to_string(),
            fmt_f64(p.posterior.a),
            fmt_f64(p.posterior.b),
            fmt_f64(p.posterior_mean),
            p.evidence.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 8 {
            return Err(Error::parse(path, line, format!("expected 8 fields, got {}", row.len())));
        }
        let bad = |what: &str| Error::parse(path, line, format!("bad {what}"));
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|_| bad("date"))?;
        let a: f64 = row[4].parse().map_err(|_| bad("alpha_post"))?;
        let b: f64 = row[5].parse().map_err(|_| bad("beta_post"))?;
        out.push(PredictionRecord {
            key: JarKey::new(date, CityId::from(&row[1])),
            stratum: row[2].to_string(),
            y: row[3].parse().map_err(|_| bad("y"))?,
            posterior: BetaParams::new(a, b)?,
            posterior_mean: row[6].parse().map_err(|_| bad("posterior_mean"))?,
            evidence: if row[7].is_empty() {
                Vec::new()
            } else {
                row[7].split(';').map(str::to_string).collect()
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jar(date: (i32, u32, u32), city: &str, event: bool, y: u64) -> Jar {
        Jar {
            key: JarKey::new(NaiveDate::from_ymd_opt(date.0, date.1, date.2).unwrap(), city.into()),
            indicative_count: y,
            evidence: (0..y).map(|i| format!("{city}-{i}")).collect(),
            event,
        }
    }

    #[test]
    fn prior_examples() {
        let events = [true, false];
        assert_eq!(prior_from_events(events).unwrap(), BetaParams { a: 1.0, b: 1.0 });
        assert!(prior_from_events([true, true]).is_err());
        assert!(prior_from_events([]).is_err());
    }

    #[test]
    fn strata_posterior_examples() {
        let prior = BetaParams { a: 226.0, b: 1437.0 };
        let melb = StrataCounts {
            key: StrataKey::City("Melbourne".into()),
            trials: 209,
            successes: 57,
        };
        assert_eq!(strata_posterior(prior, &melb), BetaParams { a: 283.0, b: 1589.0 });
        let empty = StrataCounts {
            key: StrataKey::All,
            trials: 0,
            successes: 0,
        };
        assert_eq!(strata_posterior(prior, &empty), prior);
        let small = StrataCounts {
            key: StrataKey::All,
            trials: 10,
            successes: 4,
        };
        assert_eq!(strata_posterior(BetaParams { a: 1.0, b: 1.0 }, &small), BetaParams { a: 5.0, b: 7.0 });
    }

    #[test]
    fn day_posterior_examples() {
        let melb = BetaParams { a: 283.0, b: 1589.0 };
        let post = day_posterior(melb, 10, 0.24);
        assert_eq!(post, BetaParams { a: 293.0, b: 1589.24 });
        assert!((post.mean() - 293.0 / 1882.24).abs() < 1e-12);
        assert!((post.mean() - 0.155_666).abs() < 1e-6);
        let zero = day_posterior(melb, 0, 0.24);
        assert!((zero.mean() - 0.15116).abs() < 5e-6);
        assert!(zero.mean() < melb.mean());
        let flat = day_posterior(BetaParams { a: 1.0, b: 1.0 }, 0, 0.0);
        assert_eq!(flat, BetaParams { a: 1.0, b: 1.0 });
    }

    #[test]
    fn tweets_mode_counts_tweets() {
        let jars = vec![
            jar((2018, 1, 3), "Perth", true, 4),
            jar((2018, 1, 4), "Perth", false, 6),
            jar((2018, 1, 4), "Hobart", false, 1),
        ];
        let c = strata_counts(&jars, StrataScheme::Location, CountsMode::Tweets);
        assert_eq!(c[1].key, StrataKey::City("Perth".into()));
        assert_eq!((c[1].trials, c[1].successes), (10, 4));
        let c = strata_counts(&jars, StrataScheme::Location, CountsMode::Days);
        assert_eq!((c[1].trials, c[1].successes), (2, 1));
        let all = strata_counts(&jars, StrataScheme::None, CountsMode::Days);
        assert_eq!(all.len(), 1);
    }

    #[test]
    fn no_tweets_gives_prior_mean_everywhere() {
        let grid: JarGrid = vec![
            jar((2018, 1, 3), "Perth", true, 0),
            jar((2018, 1, 4), "Perth", false, 0),
            jar((2018, 1, 5), "Hobart", false, 0),
        ]
        .into_iter()
        .collect();
        let preds = predict_all(&grid, ModelSpec::TWEETS_ONLY, CountsMode::Days, &Dispersion::global(0.5)).unwrap();
        assert!(preds.windows(2).all(|w| w[0].posterior_mean == w[1].posterior_mean));
        let base = predict_all(&grid, ModelSpec::OVERALL, CountsMode::Days, &Dispersion::global(0.5)).unwrap();
        for p in &base {
            assert!((p.posterior_mean - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_increases_with_y() {
        let grid: JarGrid = vec![
            jar((2018, 1, 3), "Perth", true, 5),
            jar((2018, 1, 4), "Perth", false, 0),
        ]
        .into_iter()
        .collect();
        for scheme in StrataScheme::ALL {
            let preds = predict_all(&grid, ModelSpec::tweets(scheme), CountsMode::Days, &Dispersion::global(0.24)).unwrap();
            assert!(preds[0].posterior_mean > preds[1].posterior_mean, "{scheme:?}");
            assert_eq!(preds[0].evidence.len(), 5);
        }
    }

    #[test]
    fn dispersion_override_per_stratum() {
        let mut d = Dispersion::global(0.24);
        d.overrides.insert(StrataKey::City("Perth".into()), 3.0);
        assert_eq!(d.for_stratum(&StrataKey::City("Perth".into())), 3.0);
        assert_eq!(d.for_stratum(&StrataKey::City("Hobart".into())), 0.24);
    }

    #[test]
    fn strata_key_display() {
        assert_eq!(StrataKey::Month(12).to_string(), "Dec");
        assert_eq!(StrataKey::CityMonth("Perth".into(), 7).to_string(), "Perth/Jul");
        assert_eq!(ModelSpec::MONTH_LOCATION_TWEETS.name(), "location-month+tweets");
    }

    #[test]
    fn predictions_csv_round_trip() {
        let grid: JarGrid = vec![jar((2018, 1, 3), "Perth", true, 2), jar((2018, 1, 4), "Perth", false, 0)]
            .into_iter()
            .collect();
        let preds = predict_all(&grid, ModelSpec::LOCATION_TWEETS, CountsMode::Days, &Dispersion::global(0.24)).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_predictions(f.path(), &preds).unwrap();
        assert_eq!(load_predictions(f.path()).unwrap(), preds);
    }

    #[test]
    fn beta_pdf_integrates_to_one() {
        let b = BetaParams { a: 283.0, b: 1589.24 };
        let n = 20000;
        let total: f64 = (0..n)
            .map(|i| (i as f64 + 0.5) / n as f64)
            .map(|t| b.ln_pdf(t).exp() / n as f64)
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_beta_rejected() {
        assert!(BetaParams::new(0.0, 1.0).is_err());
        assert!(BetaParams::new(1.0, f64::NAN).is_err());
    }
}
