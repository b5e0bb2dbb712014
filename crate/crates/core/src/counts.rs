//! Poisson and negative-binomial models for daily indicative-tweet counts.
//!
//! The negative binomial is parameterised by its mean `mu` and dispersion
//! `r`:
//!
//! ```text
//! P(Y = k) = Gamma(r + k) / (k! Gamma(r)) * (mu / (r + mu))^k * (r / (r + mu))^r
//! ```
//!
//! so the variance is `mu + mu^2 / r` and the Poisson is the `r -> inf` limit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::data::{CityId, JarGrid};
use crate::error::{Error, Result};

/// Search bracket for the dispersion, on a log scale.
pub const R_MIN: f64 = 1e-6;
pub const R_MAX: f64 = 1e6;
const R_REL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyCount {
    pub date: NaiveDate,
    pub count: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Poisson,
    Negbinom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountModelFit {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    pub log_likelihood: f64,
    /// Set when the data are not overdispersed and `r` was capped at [`R_MAX`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Sums jar counts per date, optionally for one city only.
pub fn daily_counts(grid: &JarGrid, city: Option<&CityId>) -> Vec<DailyCount> {
    let mut by_date: BTreeMap<NaiveDate, u64> = BTreeMap::new();
    for jar in grid.iter().filter(|j| city.is_none_or(|c| &j.key.city == c)) {
        *by_date.entry(jar.key.date).or_insert(0) += jar.indicative_count;
    }
    by_date
        .into_iter()
        .map(|(date, count)| DailyCount { date, count })
        .collect()
}

pub fn load_daily_counts(path: &Path) -> Result<Vec<DailyCount>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let date = NaiveDate::parse_from_str(row.get(0).unwrap_or(""), "%Y-%m-%d")
            .map_err(|e| Error::parse(path, line, format!("bad date: {e}")))?;
        let count = row
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|e| Error::parse(path, line, format!("bad count: {e}")))?;
        out.push(DailyCount { date, count });
    }
    Ok(out)
}

pub fn write_daily_counts(path: &Path, counts: &[DailyCount]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["date", "count"])?;
    for c in counts {
        w.write_record([c.date.to_string(), c.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn values(counts: &[DailyCount]) -> Vec<u64> {
    counts.iter().map(|c| c.count).collect()
}

fn mean(xs: &[u64]) -> f64 {
    xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64
}

fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

pub fn poisson_log_likelihood(xs: &[u64], lambda: f64) -> f64 {
    let ln_l = lambda.ln();
    xs.iter()
        .map(|&y| y as f64 * ln_l - lambda - ln_factorial(y))
        .sum()
}

pub fn poisson_pmf(k: u64, lambda: f64) -> f64 {
    (k as f64 * lambda.ln() - lambda - ln_factorial(k)).exp()
}

/// Closed-form maximum likelihood: the sample mean.
pub fn fit_poisson(counts: &[DailyCount]) -> Result<CountModelFit> {
    let xs = values(counts);
    if xs.is_empty() {
        return Err(Error::Degenerate("no counts to fit".into()));
    }
    let lambda = mean(&xs);
    if lambda == 0.0 {
        return Err(Error::Degenerate("all counts are zero".into()));
    }
    Ok(CountModelFit {
        family: Family::Poisson,
        lambda: Some(lambda),
        mu: None,
        r: None,
        log_likelihood: poisson_log_likelihood(&xs, lambda),
        warning: None,
    })
}

pub fn negbinom_ln_pmf(k: u64, mu: f64, r: f64) -> f64 {
    let k_f = k as f64;
    let ln_mix = (r + mu).ln();
    ln_gamma(r + k_f) - ln_factorial(k) - ln_gamma(r) + k_f * (mu.ln() - ln_mix) + r * (r.ln() - ln_mix)
}

pub fn negbinom_pmf(k: u64, mu: f64, r: f64) -> f64 {
    negbinom_ln_pmf(k, mu, r).exp()
}

/// Success probability `mu / (r + mu)` of the equivalent
/// `theta^k (1 - theta)^r` form.
pub fn negbinom_success_prob(mu: f64, r: f64) -> f64 {
    mu / (r + mu)
}

/// Mean of the negative binomial with success probability `p` and dispersion `r`.
pub fn negbinom_mean_from_prob(p: f64, r: f64) -> f64 {
    r * p / (1.0 - p)
}

pub fn negbinom_log_likelihood(xs: &[u64], mu: f64, r: f64) -> f64 {
    xs.iter().map(|&k| negbinom_ln_pmf(k, mu, r)).sum()
}

/// Trigamma via upward recurrence and the asymptotic series.
fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x + x2 / 2.0 + (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0))) * x2 / x
}

/// Profile likelihood of `r` at `mu = sample mean`, grouped by distinct count.
struct Profile {
    hist: Vec<(f64, f64)>,
    n: f64,
    mu: f64,
}

impl Profile {
    fn new(xs: &[u64]) -> Self {
        let mut h: BTreeMap<u64, u64> = BTreeMap::new();
        for &x in xs {
            *h.entry(x).or_insert(0) += 1;
        }
        Profile {
            hist: h.into_iter().map(|(k, c)| (k as f64, c as f64)).collect(),
            n: xs.len() as f64,
            mu: mean(xs),
        }
    }

    fn loglik(&self, r: f64) -> f64 {
        let ln_mix = (r + self.mu).ln();
        let per_k: f64 = self
            .hist
            .iter()
            .map(|&(k, c)| c * (ln_gamma(r + k) - ln_gamma(k + 1.0) + k * (self.mu.ln() - ln_mix)))
            .sum();
        per_k + self.n * (r * (r.ln() - ln_mix) - ln_gamma(r))
    }

    fn score(&self, r: f64) -> f64 {
        let s: f64 = self.hist.iter().map(|&(k, c)| c * (digamma(r + k) - digamma(r))).sum();
        s + self.n * (r / (r + self.mu)).ln()
    }

    fn score_slope(&self, r: f64) -> f64 {
        let s: f64 = self.hist.iter().map(|&(k, c)| c * (trigamma(r + k) - trigamma(r))).sum();
        s + self.n * (1.0 / r - 1.0 / (r + self.mu))
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = f(a);
        }
    }
    (lo + hi) / 2.0
}

/// Maximum-likelihood `(mu, r)`. `mu` is the sample mean; `r` maximises
/// the profile likelihood by a log-grid bracket, golden-section search and
/// a Newton polish on the score.
pub fn fit_negbinom(counts: &[DailyCount]) -> Result<CountModelFit> {
    let xs = values(counts);
    if xs.is_empty() {
        return Err(Error::Degenerate("no counts to fit".into()));
    }
    let profile = Profile::new(&xs);
    let mu = profile.mu;
    if mu == 0.0 {
        return Err(Error::Degenerate("all counts are zero".into()));
    }
    let n = xs.len() as f64;
    let var_mle = xs.iter().map(|&x| (x as f64 - mu).powi(2)).sum::<f64>() / n;
    if var_mle <= mu {
        return Ok(CountModelFit {
            family: Family::Negbinom,
            lambda: None,
            mu: Some(mu),
            r: Some(R_MAX),
            // The supremum over r is the Poisson limit r -> inf.
            log_likelihood: poisson_log_likelihood(&xs, mu),
            warning: Some(format!(
                "counts are not overdispersed (variance {var_mle} <= mean {mu}); r capped at {R_MAX}"
            )),
        });
    }

    let f = |ln_r: f64| profile.loglik(ln_r.exp());
    let (lo, hi) = (R_MIN.ln(), R_MAX.ln());
    let steps = 96;
    let grid: Vec<f64> = (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect();
    let best = (0..grid.len())
        .max_by(|&i, &j| f(grid[i]).total_cmp(&f(grid[j])))
        .unwrap_or(0);
    let ln_r = golden_max(f, grid[best.saturating_sub(1)], grid[(best + 1).min(steps)], 1e-6);

    let mut r = ln_r.exp();
    for _ in 0..50 {
        let slope = profile.score_slope(r);
        if !(slope < 0.0) {
            break;
        }
        let next = r - profile.score(r) / slope;
        if !(next.is_finite() && next > 0.0) {
            break;
        }
        let done = ((next - r) / r).abs() < R_REL_TOL;
        r = next;
        if done {
            break;
        }
    }
    let r = r.clamp(R_MIN, R_MAX);
    let warning = (r >= R_MAX * (1.0 - 1e-9)).then(|| format!("r reached the search bound {R_MAX}"));
    Ok(CountModelFit {
        family: Family::Negbinom,
        lambda: None,
        mu: Some(mu),
        r: Some(r),
        log_likelihood: negbinom_log_likelihood(&xs, mu, r),
        warning,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionStats {
    pub mean: f64,
    /// Unbiased (n - 1) sample variance.
    pub variance: f64,
    /// Variance over mean; zero when the variance is zero.
    pub ratio: f64,
}

pub fn dispersion_stats(counts: &[DailyCount]) -> Result<DispersionStats> {
    let xs = values(counts);
    if xs.len() < 2 {
        return Err(Error::Degenerate("dispersion needs at least two counts".into()));
    }
    let m = mean(&xs);
    let variance = xs.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    let ratio = if variance == 0.0 { 0.0 } else { variance / m };
    Ok(DispersionStats { mean: m, variance, ratio })
}

/// Right-continuous empirical distribution function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    /// Distinct values ascending with the cumulative fraction at each.
    pub steps: Vec<(u64, f64)>,
}

impl Ecdf {
    pub fn eval(&self, x: f64) -> f64 {
        match self.steps.partition_point(|&(v, _)| v as f64 <= x) {
            0 => 0.0,
            i => self.steps[i - 1].1,
        }
    }
}

pub fn empirical_cdf(counts: &[DailyCount]) -> Result<Ecdf> {
    let mut xs = values(counts);
    if xs.is_empty() {
        return Err(Error::Degenerate("empirical CDF of no data".into()));
    }
    xs.sort_unstable();
    let n = xs.len() as f64;
    let mut steps: Vec<(u64, f64)> = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match steps.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => steps.push((x, frac)),
        }
    }
    if let Some(last) = steps.last_mut() {
        last.1 = 1.0;
    }
    Ok(Ecdf { steps })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub value: u64,
    pub empirical: f64,
    pub poisson: f64,
    pub negbinom: f64,
}

/// Everything `fit-counts` emits: both fits, diagnostics and the CDF table
/// for the empirical-vs-fitted plot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountsReport {
    pub days: usize,
    pub dispersion: Option<DispersionStats>,
    pub poisson: CountModelFit,
    pub negbinom: CountModelFit,
    pub cdf: Vec<CdfRow>,
}

impl CountsReport {
    pub fn r(&self) -> Option<f64> {
        self.negbinom.r
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fmt::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

pub fn counts_report(counts: &[DailyCount]) -> Result<CountsReport> {
    let poisson = fit_poisson(counts)?;
    let negbinom = fit_negbinom(counts)?;
    let ecdf = empirical_cdf(counts)?;
    let lambda = poisson.lambda.unwrap_or(0.0);
    let (mu, r) = (negbinom.mu.unwrap_or(0.0), negbinom.r.unwrap_or(R_MAX));
    let max = ecdf.steps.last().map(|s| s.0).unwrap_or(0);
    let (mut cp, mut cn) = (0.0, 0.0);
    let mut cdf = Vec::new();
    for k in 0..=max {
        cp += poisson_pmf(k, lambda);
        cn += negbinom_pmf(k, mu, r);
        if ecdf.steps.binary_search_by_key(&k, |s| s.0).is_ok() {
            cdf.push(CdfRow {
                value: k,
                empirical: ecdf.eval(k as f64),
                poisson: cp.min(1.0),
                negbinom: cn.min(1.0),
            });
        }
    }
    Ok(CountsReport {
        days: counts.len(),
        dispersion: dispersion_stats(counts).ok(),
        poisson,
        negbinom,
        cdf,
    })
}

/// Draws from the negative binomial as a gamma-Poisson mixture.
pub fn sample_negbinom<R: Rng + ?Sized>(rng: &mut R, mu: f64, r: f64) -> u64 {
    let rate = Gamma::new(r, mu / r).expect("valid gamma").sample(rng);
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map(|p| p.sample(rng) as u64).unwrap_or(0)
}
