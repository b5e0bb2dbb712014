//! Association tests and diagnostics over the gold-standard record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use chrono::{Datelike, Weekday};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::data::{CityId, GsrRecord, JarGrid};
use crate::error::{Error, Result};
use crate::fmt::fmt_f64;

/// Factor levels by (events, non-events).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub rows: Vec<String>,
    pub counts: Vec<[u64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    City,
    Month,
    Weekday,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Factor::City => "city",
            Factor::Month => "month",
            Factor::Weekday => "weekday",
        }
    }
}

const MONTHS: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];

impl ContingencyTable {
    pub fn new(rows: Vec<String>, counts: Vec<[u64; 2]>) -> Result<Self> {
        if rows.len() != counts.len() {
            return Err(Error::Validation("row labels and counts differ in length".into()));
        }
        if rows.len() < 2 {
            return Err(Error::Validation("contingency table needs at least two rows".into()));
        }
        Ok(ContingencyTable { rows, counts })
    }

    /// Cross-tabulates events by `factor`. Months and weekdays are ordered by
    /// the calendar; cities alphabetically.
    pub fn from_gsr(gsr: &[GsrRecord], factor: Factor) -> Result<Self> {
        let mut acc: BTreeMap<(u32, String), [u64; 2]> = BTreeMap::new();
        for r in gsr {
            let key = match factor {
                Factor::City => (0, r.city.to_string()),
                Factor::Month => (r.date.month(), MONTHS[r.date.month0() as usize].to_string()),
                Factor::Weekday => {
                    let w: Weekday = r.date.weekday();
                    (w.num_days_from_monday(), w.to_string())
                }
            };
            let cell = acc.entry(key).or_insert([0, 0]);
            cell[if r.event { 0 } else { 1 }] += 1;
        }
        let (rows, counts) = acc.into_iter().map(|((_, k), v)| (k, v)).unzip();
        ContingencyTable::new(rows, counts)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
}

/// Pearson's chi-squared test of independence without continuity correction.
pub fn chi_squared_test(table: &ContingencyTable) -> Result<ChiSquaredResult> {
    let row_tot: Vec<f64> = table.counts.iter().map(|c| (c[0] + c[1]) as f64).collect();
    let col_tot = [0, 1].map(|j| table.counts.iter().map(|c| c[j] as f64).sum::<f64>());
    let total: f64 = row_tot.iter().sum();
    if row_tot.contains(&0.0) || col_tot.contains(&0.0) {
        return Err(Error::Degenerate("contingency table has an empty row or column".into()));
    }
    let mut statistic = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for j in 0..2 {
            let expected = row_tot[i] * col_tot[j] / total;
            let d = row[j] as f64 - expected;
            statistic += d * d / expected;
        }
    }
    let df = (table.rows.len() - 1) as u32;
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(ChiSquaredResult {
        statistic,
        df,
        p_value: dist.sf(statistic),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Wilson,
    Wald,
}

impl std::str::FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wilson" => Ok(CiMethod::Wilson),
            "wald" => Ok(CiMethod::Wald),
            _ => Err(Error::Validation(format!("unknown CI method {s:?}"))),
        }
    }
}

/// Two-sided confidence interval for a binomial proportion, clipped to [0, 1].
pub fn proportion_ci(successes: u64, trials: u64, level: f64, method: CiMethod) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::Validation("proportion interval needs at least one trial".into()));
    }
    if successes > trials || !(level > 0.0 && level < 1.0) {
        return Err(Error::Validation(format!("invalid interval request {successes}/{trials} at {level}")));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let (lo, hi) = match method {
        CiMethod::Wald => {
            let half = z * (p * (1.0 - p) / n).sqrt();
            (p - half, p + half)
        }
        CiMethod::Wilson => {
            let z2 = z * z;
            let denom = 1.0 + z2 / n;
            let centre = (p + z2 / (2.0 * n)) / denom;
            let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
            (centre - half, centre + half)
        }
    };
    let (mut lo, mut hi) = (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0));
    if successes == 0 {
        lo = 0.0;
    }
    if successes == trials {
        hi = 1.0;
    }
    Ok((lo, hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub factor: String,
    pub level: String,
    pub events: u64,
    pub days: u64,
    pub proportion: f64,
    pub low: f64,
    pub high: f64,
}

pub fn ci_table(table: &ContingencyTable, factor: Factor, level: f64, method: CiMethod) -> Result<Vec<CiRow>> {
    table
        .rows
        .iter()
        .zip(&table.counts)
        .map(|(name, c)| {
            let days = c[0] + c[1];
            let (low, high) = proportion_ci(c[0], days, level, method)?;
            Ok(CiRow {
                factor: factor.name().to_string(),
                level: name.clone(),
                events: c[0],
                days,
                proportion: c[0] as f64 / days as f64,
                low,
                high,
            })
        })
        .collect()
}

pub fn write_ci_table(path: &Path, rows: &[CiRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["factor", "level", "events", "days", "proportion", "low", "high"])?;
    for r in rows {
        w.write_record([
            r.factor.clone(),
            r.level.clone(),
            r.events.to_string(),
            r.days.to_string(),
            fmt_f64(r.proportion),
            fmt_f64(r.low),
            fmt_f64(r.high),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub intercept: f64,
    pub slope: f64,
    pub converged: bool,
    pub iterations: u32,
    /// The classes are (quasi-)completely separated by `x`; the MLE does not exist.
    pub separated: bool,
    /// Log-likelihood after each accepted iteration, starting at the origin.
    pub log_likelihood_trace: Vec<f64>,
}

fn logistic_loglik(x: &[f64], y: &[bool], b0: f64, b1: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let eta = b0 + b1 * xi;
            // log(1 + e^eta) computed stably.
            let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            if yi { eta - softplus } else { -softplus }
        })
        .sum()
}

const IRLS_TOL: f64 = 1e-10;
const IRLS_MAX_ITER: u32 = 100;

/// Maximum-likelihood `P(y) = 1 / (1 + exp(-(intercept + slope x)))` by
/// iteratively reweighted least squares with step halving.
pub fn fit_logistic(x: &[f64], y: &[bool]) -> Result<LogisticFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Validation("logistic fit needs two or more paired observations".into()));
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::Degenerate("logistic fit needs both classes".into()));
    }
    let max_of = |class: bool| x.iter().zip(y).filter(|(_, &c)| c == class).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
    let min_of = |class: bool| x.iter().zip(y).filter(|(_, &c)| c == class).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
    let separated = max_of(false) <= min_of(true) || max_of(true) <= min_of(false);

    let (mut b0, mut b1) = (0.0, 0.0);
    let mut ll = logistic_loglik(x, y, b0, b1);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let p = 1.0 / (1.0 + (-(b0 + b1 * xi)).exp());
            let w = p * (1.0 - p);
            let resid = if yi { 1.0 } else { 0.0 } - p;
            g0 += resid;
            g1 += resid * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det.abs() > 1e-300) {
            break;
        }
        let mut d0 = (h11 * g0 - h01 * g1) / det;
        let mut d1 = (h00 * g1 - h01 * g0) / det;
        let mut next = logistic_loglik(x, y, b0 + d0, b1 + d1);
        let mut halvings = 0;
        while next < ll && halvings < 30 {
            d0 /= 2.0;
            d1 /= 2.0;
            next = logistic_loglik(x, y, b0 + d0, b1 + d1);
            halvings += 1;
        }
        if next < ll {
            break;
        }
        b0 += d0;
        b1 += d1;
        ll = next;
        trace.push(ll);
        if d0.abs().max(d1.abs()) < IRLS_TOL {
            converged = !separated;
            break;
        }
    }
    Ok(LogisticFit {
        intercept: b0,
        slope: b1,
        converged: converged && !separated,
        iterations,
        separated,
        log_likelihood_trace: trace,
    })
}

/// Logistic fit of event against indicative count for one city, over all
/// its jars, with the low-count subset kept for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowTweetDiagnostic {
    pub city: CityId,
    pub fit: Option<LogisticFit>,
    pub threshold: u64,
    /// (count, event) for jars at or below the threshold.
    pub low_points: Vec<(u64, bool)>,
    pub low_event_days: usize,
}

pub fn low_tweet_diagnostic(grid: &JarGrid, city: &CityId, threshold: u64) -> LowTweetDiagnostic {
    let jars: Vec<_> = grid.iter().filter(|j| &j.key.city == city).collect();
    let x: Vec<f64> = jars.iter().map(|j| j.indicative_count as f64).collect();
    let y: Vec<bool> = jars.iter().map(|j| j.event).collect();
    let low_points: Vec<(u64, bool)> = jars
        .iter()
        .filter(|j| j.indicative_count <= threshold)
        .map(|j| (j.indicative_count, j.event))
        .collect();
    LowTweetDiagnostic {
        city: city.clone(),
        fit: fit_logistic(&x, &y).ok(),
        threshold,
        low_event_days: low_points.iter().filter(|p| p.1).count(),
        low_points,
    }
}

/// One association test as reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub factor: Factor,
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub table: ContingencyTable,
}

pub fn association_report(gsr: &[GsrRecord], factor: Factor) -> Result<TestReport> {
    let table = ContingencyTable::from_gsr(gsr, factor)?;
    let res = chi_squared_test(&table)?;
    Ok(TestReport {
        factor,
        statistic: res.statistic,
        df: res.df,
        p_value: res.p_value,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn table(rows: &[[u64; 2]]) -> ContingencyTable {
        ContingencyTable::new((0..rows.len()).map(|i| i.to_string()).collect(), rows.to_vec()).unwrap()
    }

    #[test]
    fn homogeneous_table() {
        let r = chi_squared_test(&table(&[[10, 10], [10, 10]])).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.df, 1);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_margin_rejected() {
        assert!(chi_squared_test(&table(&[[0, 10], [0, 4]])).is_err());
        assert!(chi_squared_test(&table(&[[0, 0], [3, 4]])).is_err());
        assert!(ContingencyTable::new(vec!["a".into()], vec![[1, 2]]).is_err());
    }

    #[test]
    fn permutation_and_scaling() {
        let t = table(&[[12, 194], [37, 172], [27, 179]]);
        let s = chi_squared_test(&t).unwrap().statistic;
        let permuted = table(&[[27, 179], [12, 194], [37, 172]]);
        assert!((chi_squared_test(&permuted).unwrap().statistic - s).abs() < 1e-9);
        let scaled = table(&[[36, 582], [111, 516], [81, 537]]);
        assert!((chi_squared_test(&scaled).unwrap().statistic - 3.0 * s).abs() < 1e-9);
    }

    #[test]
    fn p_value_against_closed_form_df2() {
        // For df = 2 the survival function is exp(-x / 2).
        let t = table(&[[12, 194], [37, 172], [27, 179]]);
        let r = chi_squared_test(&t).unwrap();
        assert!((r.p_value - (-r.statistic / 2.0).exp()).abs() < 1e-14);
    }

    #[test]
    fn null_rejection_rate() {
        let mut rng = crate::random::seeded(2024);
        let mut rejections = 0;
        for _ in 0..1000 {
            let mut counts = vec![[0u64; 2]; 8];
            for row in counts.iter_mut() {
                for _ in 0..200 {
                    row[if rng.random_bool(0.14) { 0 } else { 1 }] += 1;
                }
            }
            if chi_squared_test(&table(&counts)).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / 1000.0;
        assert!((0.03..=0.07).contains(&rate), "{rate}");
    }

    #[test]
    fn ci_examples() {
        let (lo, hi) = proportion_ci(0, 10, 0.95, CiMethod::Wilson).unwrap();
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0);
        let (lo, hi) = proportion_ci(50, 100, 0.95, CiMethod::Wald).unwrap();
        assert!((lo - 0.402).abs() < 1e-3 && (hi - 0.598).abs() < 1e-3);
        let (lo, hi) = proportion_ci(50, 100, 0.95, CiMethod::Wilson).unwrap();
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
        assert!((lo - 0.403_831_530_365_995_6).abs() < 1e-9);
        assert!(proportion_ci(0, 0, 0.95, CiMethod::Wilson).is_err());
    }

    #[test]
    fn ci_contains_estimate_and_shrinks() {
        for method in [CiMethod::Wilson, CiMethod::Wald] {
            let mut prev = f64::INFINITY;
            for n in [10u64, 40, 160, 640] {
                let (lo, hi) = proportion_ci(n * 3 / 10, n, 0.95, method).unwrap();
                assert!(lo <= 0.3 && 0.3 <= hi);
                assert!(hi - lo < prev);
                prev = hi - lo;
            }
        }
    }

    #[test]
    fn logistic_symmetric_is_zero() {
        let f = fit_logistic(&[0.0, 0.0, 1.0, 1.0], &[false, true, false, true]).unwrap();
        assert!(f.converged);
        assert!(f.intercept.abs() < 1e-8 && f.slope.abs() < 1e-8);
    }

    #[test]
    fn logistic_separation_not_converged() {
        let f = fit_logistic(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true]).unwrap();
        assert!(!f.converged);
        assert!(f.separated);
        assert!(f.slope > 5.0, "coefficients diverge: {}", f.slope);
    }

    #[test]
    fn logistic_matches_newton_oracle() {
        // Frozen from a 40-digit Newton iteration run independently.
        let f = fit_logistic(&[1.0, 2.0, 3.0, 4.0, 5.0], &[false, true, false, true, true]).unwrap();
        assert!(f.converged);
        assert!((f.intercept - -2.648_586_615_460_588).abs() < 1e-6);
        assert!((f.slope - 1.090_425_560_298_115).abs() < 1e-6);
        assert!(f.log_likelihood_trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn logistic_needs_both_classes() {
        assert!(fit_logistic(&[1.0, 2.0], &[true, true]).is_err());
        assert!(fit_logistic(&[1.0], &[true]).is_err());
    }
}
