//! ROC analysis of prediction records, lead-time decay and plot-data files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use chrono::NaiveDate;
use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bayes::{BayesModel, CountsMode, Dispersion, ModelSpec, PredictionRecord, predict_all};
use crate::data::{CityId, JarGrid, JarKey, TweetRecord, drop_tweets_filtered};
use crate::error::{Error, Result};
use crate::fmt::fmt_f64;

/// Empirical ROC curve kept as integer counts, so the area is exact.
///
/// Point `i` classifies as positive every score `>= thresholds[i]`. The first
/// point has threshold `+inf` and sits at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub tps: Vec<u64>,
    pub fps: Vec<u64>,
    pub positives: u64,
    pub negatives: u64,
}

impl RocCurve {
    pub fn len(&self) -> usize {
        self.tps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tps.is_empty()
    }

    /// `(fpr, tpr)` pairs from (0,0) to (1,1).
    pub fn points(&self) -> Vec<(f64, f64)> {
        let (p, n) = (self.positives as f64, self.negatives as f64);
        self.fps.iter().zip(&self.tps).map(|(&f, &t)| (f as f64 / n, t as f64 / p)).collect()
    }
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Validation("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("scores contain NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Degenerate("ROC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));

    let mut curve = RocCurve {
        thresholds: vec![f64::INFINITY],
        tps: vec![0],
        fps: vec![0],
        positives,
        negatives,
    };
    let (mut tp, mut fp) = (0, 0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        curve.thresholds.push(s);
        curve.tps.push(tp);
        curve.fps.push(fp);
    }
    Ok(curve)
}

/// Trapezoidal area under the curve. Equal to the Mann–Whitney probability
/// that a random positive outscores a random negative, ties counting half.
pub fn auc(curve: &RocCurve) -> f64 {
    let twice_area: u128 = (1..curve.len())
        .map(|i| {
            let dx = (curve.fps[i] - curve.fps[i - 1]) as u128;
            dx * (curve.tps[i] + curve.tps[i - 1]) as u128
        })
        .sum();
    twice_area as f64 / (2 * curve.positives as u128 * curve.negatives as u128) as f64
}

pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    roc_curve(scores, labels).map(|c| auc(&c))
}

fn scored(preds: &[PredictionRecord], truth: &JarGrid) -> Result<(Vec<f64>, Vec<bool>, Vec<CityId>)> {
    let mut scores = Vec::with_capacity(preds.len());
    let mut labels = Vec::with_capacity(preds.len());
    let mut cities = Vec::with_capacity(preds.len());
    for p in preds {
        let jar = truth
            .get(&p.key)
            .ok_or_else(|| Error::Validation(format!("prediction for {} {} has no GSR jar", p.key.date, p.key.city)))?;
        scores.push(p.posterior_mean);
        labels.push(jar.event);
        cities.push(p.key.city.clone());
    }
    Ok((scores, labels, cities))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub model: String,
    pub curve: RocCurve,
    pub auc: f64,
    pub per_city: BTreeMap<CityId, f64>,
    /// Cities whose slice lacked one of the two classes.
    pub skipped_cities: Vec<CityId>,
}

pub fn evaluate_predictions(model: &str, preds: &[PredictionRecord], truth: &JarGrid) -> Result<ModelEvaluation> {
    let (scores, labels, cities) = scored(preds, truth)?;
    let curve = roc_curve(&scores, &labels)?;
    let mut slices: BTreeMap<&CityId, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for ((s, l), c) in scores.iter().zip(&labels).zip(&cities) {
        let e = slices.entry(c).or_default();
        e.0.push(*s);
        e.1.push(*l);
    }
    let mut per_city = BTreeMap::new();
    let mut skipped_cities = Vec::new();
    for (city, (s, l)) in slices {
        match roc_auc(&s, &l) {
            Ok(a) => {
                per_city.insert(city.clone(), a);
            }
            Err(_) => {
                warn!("{model}: skipping city slice {city}, which lacks events or non-events");
                skipped_cities.push(city.clone());
            }
        }
    }
    Ok(ModelEvaluation {
        model: model.to_string(),
        auc: auc(&curve),
        curve,
        per_city,
        skipped_cities,
    })
}

/// Evaluates the five standard models. With `split = Some((fraction, seed))`
/// strata are fitted on a seeded training fraction of the jars and scored on
/// the rest; otherwise every jar is used for both.
pub fn evaluate_models(
    jars: &JarGrid,
    mode: CountsMode,
    dispersion: &Dispersion,
    split: Option<(f64, u64)>,
) -> Result<Vec<ModelEvaluation>> {
    let (train, test) = match split {
        None => (jars.clone(), jars.clone()),
        Some((fraction, seed)) => train_test_split(jars, fraction, seed)?,
    };
    ModelSpec::STANDARD
        .iter()
        .map(|&spec| {
            let model = BayesModel::fit(train.iter(), spec, mode)?;
            let preds = model.predict_many(test.iter(), dispersion);
            evaluate_predictions(&spec.name(), &preds, &test)
        })
        .collect()
}

/// Seeded shuffle of the jar keys into a training fraction and a test rest.
pub fn train_test_split(jars: &JarGrid, fraction: f64, seed: u64) -> Result<(JarGrid, JarGrid)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Validation(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut keys: Vec<JarKey> = jars.keys().cloned().collect();
    keys.shuffle(&mut crate::random::substream(seed, "eval-split"));
    let cut = ((keys.len() as f64) * fraction).round() as usize;
    let (a, b) = keys.split_at(cut.clamp(1, keys.len().saturating_sub(1)));
    Ok((jars.subset(a), jars.subset(b)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadTimeResult {
    pub n: u32,
    pub auc: f64,
    /// (tweet, jar) placements that survived the lead filter.
    pub tweets: u64,
}

/// Whole days between the authored local date and the target date.
pub fn lead_days(tweet: &TweetRecord, target: NaiveDate) -> i64 {
    (target - tweet.authored_date()).num_days()
}

/// AUC of `spec` when each jar keeps only tweets authored at least `n` days
/// ahead of its date, for every `n` in `0..=max_n`. `template` supplies the
/// GSR jar grid; its existing evidence is discarded.
pub fn lead_time_auc(
    template: &JarGrid,
    tweets: &[TweetRecord],
    spec: ModelSpec,
    mode: CountsMode,
    dispersion: &Dispersion,
    max_n: u32,
) -> Result<Vec<LeadTimeResult>> {
    (0..=max_n)
        .map(|n| {
            let mut grid = template.emptied();
            let report = drop_tweets_filtered(&mut grid, tweets, |t, d| lead_days(t, d) >= n as i64);
            let preds = predict_all(&grid, spec, mode, dispersion)?;
            let eval = evaluate_predictions(&spec.name(), &preds, &grid)?;
            Ok(LeadTimeResult {
                n,
                auc: eval.auc,
                tweets: report.placed,
            })
        })
        .collect()
}

/// One tile of a (date, city) heat map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub date: NaiveDate,
    pub city: CityId,
    pub value: f64,
}

pub fn truth_tiles(grid: &JarGrid) -> Vec<Tile> {
    grid.iter()
        .map(|j| Tile {
            date: j.key.date,
            city: j.key.city.clone(),
            value: if j.event { 1.0 } else { 0.0 },
        })
        .collect()
}

pub fn prediction_tiles(preds: &[PredictionRecord]) -> Vec<Tile> {
    preds
        .iter()
        .map(|p| Tile {
            date: p.key.date,
            city: p.key.city.clone(),
            value: p.posterior_mean,
        })
        .collect()
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

fn field<T: std::str::FromStr>(path: &Path, row: &csv::StringRecord, i: usize, what: &str) -> Result<T> {
    let line = row.position().map(|p| p.line()).unwrap_or(0);
    row.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, line, format!("bad {what}")))
}

pub fn write_tiles(path: &Path, tiles: &[Tile]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "city", "value"])?;
    for t in tiles {
        w.write_record([t.date.to_string(), t.city.to_string(), fmt_f64(t.value)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_tiles(path: &Path) -> Result<Vec<Tile>> {
    let mut out = Vec::new();
    for row in reader(path)?.records() {
        let row = row?;
        out.push(Tile {
            date: field(path, &row, 0, "date")?,
            city: CityId::from(row.get(1).unwrap_or_default()),
            value: field(path, &row, 2, "value")?,
        });
    }
    Ok(out)
}

/// One row per curve point: `model,fpr,tpr,threshold`.
pub fn write_roc(path: &Path, evals: &[(String, RocCurve)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "fpr", "tpr", "threshold"])?;
    for (model, curve) in evals {
        for ((fpr, tpr), th) in curve.points().into_iter().zip(&curve.thresholds) {
            w.write_record([model.clone(), fmt_f64(fpr), fmt_f64(tpr), fmt_f64(*th)])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocRow {
    pub model: String,
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

pub fn load_roc(path: &Path) -> Result<Vec<RocRow>> {
    let mut out = Vec::new();
    for row in reader(path)?.records() {
        let row = row?;
        out.push(RocRow {
            model: row.get(0).unwrap_or_default().to_string(),
            fpr: field(path, &row, 1, "fpr")?,
            tpr: field(path, &row, 2, "tpr")?,
            threshold: field(path, &row, 3, "threshold")?,
        });
    }
    Ok(out)
}

pub fn write_lead_time(path: &Path, results: &[LeadTimeResult]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["n", "auc", "tweets"])?;
    for r in results {
        w.write_record([r.n.to_string(), fmt_f64(r.auc), r.tweets.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_lead_time(path: &Path) -> Result<Vec<LeadTimeResult>> {
    let mut out = Vec::new();
    for row in reader(path)?.records() {
        let row = row?;
        out.push(LeadTimeResult {
            n: field(path, &row, 0, "n")?,
            auc: field(path, &row, 1, "auc")?,
            tweets: field(path, &row, 2, "tweets")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut twice, mut pairs) = (0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1;
                    twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        twice as f64 / (2 * pairs) as f64
    }

    #[test]
    fn three_point_example() {
        let c = roc_curve(&[0.9, 0.8, 0.3], &[true, false, true]).unwrap();
        assert_eq!(c.points(), vec![(0.0, 0.0), (0.0, 0.5), (1.0, 0.5), (1.0, 1.0)]);
        assert_eq!(c.thresholds[1..], [0.9, 0.8, 0.3]);
        assert_eq!(auc(&c), 0.5);
    }

    #[test]
    fn separated_and_constant() {
        let c = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert!(c.points().contains(&(0.0, 1.0)));
        assert_eq!(auc(&c), 1.0);
        let c = roc_curve(&[0.3; 5], &[true, false, true, false, false]).unwrap();
        assert_eq!(c.points(), vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc(&c), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(roc_curve(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_curve(&[0.1], &[true, false]).is_err());
        assert!(roc_curve(&[f64::NAN, 0.2], &[true, false]).is_err());
    }

    #[test]
    fn random_scores_near_half() {
        use rand::Rng;
        let mut rng = crate::random::seeded(7);
        let scores: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..1000).map(|_| rng.random_bool(0.5)).collect();
        assert!((roc_auc(&scores, &labels).unwrap() - 0.5).abs() < 0.05);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..6, n).prop_map(|v| v.into_iter().map(|x| x as f64 / 5.0).collect()),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_equals_mann_whitney((scores, mut labels) in instance()) {
            labels[0] = true;
            labels[1] = false;
            let c = roc_curve(&scores, &labels).unwrap();
            prop_assert!((auc(&c) - mann_whitney(&scores, &labels)).abs() <= 1e-12);
            prop_assert!(c.tps.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(c.fps.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(c.points().last().copied(), Some((1.0, 1.0)));
        }

        #[test]
        fn auc_invariant_under_monotone_transform((scores, mut labels) in instance()) {
            labels[0] = true;
            labels[1] = false;
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&transformed, &labels).unwrap());
        }
    }

    #[test]
    fn plot_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = NaiveDate::from_ymd_opt(2015, 7, 1).unwrap();
        let tiles = vec![
            Tile { date: d, city: "Perth".into(), value: 0.125 },
            Tile { date: d, city: "Hobart".into(), value: 1.0 / 3.0 },
        ];
        let p = dir.path().join("tiles.csv");
        write_tiles(&p, &tiles).unwrap();
        assert_eq!(load_tiles(&p).unwrap(), tiles);

        let curve = roc_curve(&[0.9, 0.8, 0.3], &[true, false, true]).unwrap();
        let p = dir.path().join("roc.csv");
        write_roc(&p, &[("m".into(), curve.clone())]).unwrap();
        let rows = load_roc(&p).unwrap();
        assert_eq!(rows.len(), curve.len());
        assert_eq!(rows[0].threshold, f64::INFINITY);
        assert_eq!(rows[3].tpr, 1.0);

        let lt = vec![LeadTimeResult { n: 0, auc: 0.7123, tweets: 12 }, LeadTimeResult { n: 1, auc: 0.5, tweets: 0 }];
        let p = dir.path().join("lead.csv");
        write_lead_time(&p, &lt).unwrap();
        assert_eq!(load_lead_time(&p).unwrap(), lt);
    }
}
