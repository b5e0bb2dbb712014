//! Planted-signal scenarios for desk-scale verification.
//!
//! Events are Bernoulli per (day, city); the number of indicative tweets
//! pointing at a jar is negative binomial with a mean that depends on the
//! event. Each tweet names its city and a date expression that resolves to
//! the jar's date from its authoring time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, FixedOffset, NaiveDate, TimeZone};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{write_corpus, LabelledText};
use crate::counts::sample_negbinom;
use crate::data::{write_gsr, write_tweets, CityEntry, CityGazetteer, CityId, GsrRecord, TweetRecord};
use crate::error::{Error, Result};
use crate::random::{substream, PipelineRng};

use super::PipelineConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCity {
    pub name: String,
    pub p_event: f64,
    /// Month (1..=12) overrides of `p_event`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub month_p_event: BTreeMap<u32, f64>,
    /// Needed only for cities outside the default gazetteer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
}

impl SynthCity {
    pub fn new(name: impl Into<String>, p_event: f64) -> Self {
        SynthCity {
            name: name.into(),
            p_event,
            month_p_event: BTreeMap::new(),
            lat: None,
            lon: None,
        }
    }

    fn p_on(&self, date: NaiveDate) -> f64 {
        self.month_p_event.get(&date.month()).copied().unwrap_or(self.p_event)
    }
}

/// Days between authoring and the referenced date.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeadTime {
    Fixed { days: u32 },
    Uniform { min: u32, max: u32 },
}

impl LeadTime {
    fn sample(self, rng: &mut PipelineRng) -> u32 {
        match self {
            LeadTime::Fixed { days } => days,
            LeadTime::Uniform { min, max } => rng.random_range(min..=max),
        }
    }

    fn max(self) -> u32 {
        match self {
            LeadTime::Fixed { days } => days,
            LeadTime::Uniform { max, .. } => max,
        }
    }
}

fn default_lead() -> LeadTime {
    LeadTime::Uniform { min: 0, max: 7 }
}

fn default_green() -> u32 {
    1
}

fn default_corpus_size() -> usize {
    400
}

fn default_utc_offset() -> i32 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScenario {
    pub cities: Vec<SynthCity>,
    pub mu_event: f64,
    pub mu_nonevent: f64,
    pub r: f64,
    pub start: NaiveDate,
    pub days: u32,
    #[serde(default = "default_lead")]
    pub lead: LeadTime,
    /// Non-indicative tweets per jar. They pass the location and date
    /// filters, so only the classifier removes them.
    #[serde(default = "default_green")]
    pub green_per_jar: u32,
    #[serde(default = "default_corpus_size")]
    pub corpus_size: usize,
    /// Hours east of UTC for every authored timestamp.
    #[serde(default = "default_utc_offset")]
    pub utc_offset_hours: i32,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticScenario {
    /// Eight capitals, equal base rate `p_event`, 200 days from 2015-07-01.
    pub fn planted(mu_event: f64, mu_nonevent: f64, r: f64, p_event: f64, seed: u64) -> Self {
        SyntheticScenario {
            cities: CityGazetteer::australian_capitals()
                .cities
                .iter()
                .map(|c| SynthCity::new(c.name.as_str(), p_event))
                .collect(),
            mu_event,
            mu_nonevent,
            r,
            start: NaiveDate::from_ymd_opt(2015, 7, 1).expect("valid date"),
            days: 200,
            lead: default_lead(),
            green_per_jar: default_green(),
            corpus_size: default_corpus_size(),
            utc_offset_hours: default_utc_offset(),
            seed,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: SyntheticScenario =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line() as u64, e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fmt::write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cities.is_empty() {
            return Err(Error::Validation("scenario has no cities".into()));
        }
        if !(self.mu_event > self.mu_nonevent && self.mu_nonevent > 0.0) {
            return Err(Error::Validation(format!(
                "need mu_event > mu_nonevent > 0, got {} and {}",
                self.mu_event, self.mu_nonevent
            )));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Validation(format!("r must be positive, got {}", self.r)));
        }
        if self.days == 0 {
            return Err(Error::Validation("scenario covers no days".into()));
        }
        if let LeadTime::Uniform { min, max } = self.lead {
            if min > max {
                return Err(Error::Validation(format!("lead range {min}..={max} is empty")));
            }
        }
        if self.lead.max() > 300 {
            return Err(Error::Validation("leads beyond 300 days are not supported".into()));
        }
        if !(-12..=14).contains(&self.utc_offset_hours) {
            return Err(Error::Validation(format!("UTC offset {} h is out of range", self.utc_offset_hours)));
        }
        for c in &self.cities {
            let probs = std::iter::once(&c.p_event).chain(c.month_p_event.values());
            if probs.clone().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Validation(format!("event probabilities for {} must lie in [0, 1]", c.name)));
            }
            if c.month_p_event.keys().any(|m| !(1..=12).contains(m)) {
                return Err(Error::Validation(format!("month overrides for {} must use months 1..=12", c.name)));
            }
        }
        self.gazetteer().map(|_| ())
    }

    /// Default-gazetteer entries for the scenario's cities, with explicit
    /// coordinates for any others.
    pub fn gazetteer(&self) -> Result<CityGazetteer> {
        let known = CityGazetteer::australian_capitals();
        let cities = self
            .cities
            .iter()
            .map(|c| match (known.cities.iter().find(|k| k.name.as_str() == c.name), c.lat, c.lon) {
                (_, Some(lat), Some(lon)) => Ok(CityEntry {
                    name: CityId::new(c.name.clone()),
                    aliases: Vec::new(),
                    lat,
                    lon,
                }),
                (Some(k), _, _) => Ok(k.clone()),
                _ => Err(Error::Validation(format!("city {} needs lat and lon", c.name))),
            })
            .collect::<Result<Vec<_>>>()?;
        let gaz = CityGazetteer { cities, ..known };
        gaz.validate()?;
        Ok(gaz)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub gsr: Vec<GsrRecord>,
    pub tweets: Vec<TweetRecord>,
    pub corpus: Vec<LabelledText>,
    pub gazetteer: CityGazetteer,
}

const INDICATIVE: [&str; 6] = [
    "rally against the new bill in {city} {when}, bring placards",
    "protest at the {city} town hall {when} #justice",
    "join the strike in {city} {when}, unions standing together",
    "demonstration planned {when} in {city} to demand fair wages",
    "activists will blockade the {city} port {when}, show up",
    "{city} sit-in {when} against the budget cuts, spread the word",
];

const DISTRACTOR: [&str; 6] = [
    "great coffee in {city} {when}, loving the flat white",
    "footy final in {city} {when}, go team",
    "farmers market in {city} {when} with fresh bread and cheese",
    "concert {when} in {city}, tickets still available",
    "beach weather in {city} {when}, sunscreen on",
    "{city} food festival {when}, tacos and dumplings",
];

const TOPICS: [&str; 4] = ["education", "housing", "climate", "pensions"];

const MONTH_NAMES: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];

/// A phrase that resolves to exactly `target` when authored on the date
/// `lead` days earlier.
pub fn date_phrase(target: NaiveDate, lead: u32) -> String {
    match lead {
        0 => "today".into(),
        1 => "tomorrow".into(),
        2..=7 => format!("on {}", weekday_name(target)),
        _ => format!("on {} {} {}", target.day(), MONTH_NAMES[target.month0() as usize], target.year()),
    }
}

fn weekday_name(d: NaiveDate) -> &'static str {
    ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"][d.weekday().num_days_from_monday() as usize]
}

fn render(template: &str, city: &str, when: &str, rng: &mut PipelineRng) -> String {
    let text = template.replace("{city}", city).replace("{when}", when);
    // A hashtag varies the vocabulary without touching the filters.
    format!("{text} #{}", TOPICS.choose(rng).expect("non-empty"))
}

pub fn synthesize(scenario: &SyntheticScenario) -> Result<SyntheticData> {
    scenario.validate()?;
    let gazetteer = scenario.gazetteer()?;
    let offset = FixedOffset::east_opt(scenario.utc_offset_hours * 3600).expect("validated offset");
    let mut events_rng = substream(scenario.seed, "synth-events");
    let mut counts_rng = substream(scenario.seed, "synth-counts");
    let mut text_rng = substream(scenario.seed, "synth-text");

    let mut gsr = Vec::new();
    let mut tweets = Vec::new();
    for day in 0..scenario.days {
        let date = scenario.start + Duration::days(day as i64);
        for city in &scenario.cities {
            let event = events_rng.random_bool(city.p_on(date));
            gsr.push(GsrRecord {
                date,
                city: CityId::new(city.name.clone()),
                event,
                headline: event.then(|| format!("Protest in {}", city.name)),
                violent: event.then_some(false),
            });
            let mu = if event { scenario.mu_event } else { scenario.mu_nonevent };
            let indicative = sample_negbinom(&mut counts_rng, mu, scenario.r);
            let total = indicative + scenario.green_per_jar as u64;
            for k in 0..total {
                let lead = scenario.lead.sample(&mut text_rng);
                let authored_day = date - Duration::days(lead as i64);
                let minute = text_rng.random_range(9 * 60..21 * 60);
                let authored_at = offset
                    .from_local_datetime(&authored_day.and_hms_opt(minute / 60, minute % 60, 0).expect("valid time"))
                    .single()
                    .expect("fixed offsets are unambiguous");
                let when = date_phrase(date, lead);
                let pool = if k < indicative { &INDICATIVE } else { &DISTRACTOR };
                let template = pool.choose(&mut text_rng).expect("non-empty");
                let id = format!("{}-{}-{k}", date.format("%Y%m%d"), city.name.to_lowercase());
                tweets.push(TweetRecord::new(id, render(template, &city.name, &when, &mut text_rng), authored_at));
            }
        }
    }

    let mut corpus_rng = substream(scenario.seed, "synth-corpus");
    let corpus = (0..scenario.corpus_size)
        .map(|i| {
            let label = i % 2 == 0;
            let pool = if label { &INDICATIVE } else { &DISTRACTOR };
            let city = &scenario.cities.choose(&mut corpus_rng).expect("validated non-empty").name;
            let lead = corpus_rng.random_range(0..=10);
            let target = scenario.start + Duration::days(corpus_rng.random_range(0..scenario.days as i64));
            let when = date_phrase(target, lead);
            let template = pool.choose(&mut corpus_rng).expect("non-empty");
            LabelledText::new(render(template, city, &when, &mut corpus_rng), label)
        })
        .collect();

    Ok(SyntheticData {
        gsr,
        tweets,
        corpus,
        gazetteer,
    })
}

/// File names written by [`generate_synthetic`].
pub const SYNTH_FILES: [&str; 5] = ["gsr.csv", "tweets.jsonl", "corpus.csv", "gazetteer.json", "config.json"];

/// Writes the scenario's GSR, tweets, corpus and gazetteer into `dir`, plus
/// a `config.json` that runs the pipeline on them into `dir/run`.
pub fn generate_synthetic(scenario: &SyntheticScenario, dir: &Path) -> Result<PipelineConfig> {
    let data = synthesize(scenario)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_gsr(&dir.join("gsr.csv"), &data.gsr)?;
    write_tweets(&dir.join("tweets.jsonl"), &data.tweets)?;
    write_corpus(&dir.join("corpus.csv"), &data.corpus)?;
    data.gazetteer.save(&dir.join("gazetteer.json"))?;
    let mut relative = PipelineConfig::new("gsr.csv", "tweets.jsonl", "run");
    relative.corpus = Some(PathBuf::from("corpus.csv"));
    relative.gazetteer = Some(PathBuf::from("gazetteer.json"));
    relative.seed = scenario.seed;
    relative.save(&dir.join("config.json"))?;
    PipelineConfig::load(&dir.join("config.json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{apply_filters, resolve_temporal};

    fn small(seed: u64) -> SyntheticScenario {
        SyntheticScenario {
            days: 20,
            corpus_size: 40,
            ..SyntheticScenario::planted(10.0, 1.0, 5.0, 0.2, seed)
        }
    }

    #[test]
    fn phrases_resolve_to_target() {
        let offset = FixedOffset::east_opt(10 * 3600).unwrap();
        let target = NaiveDate::from_ymd_opt(2016, 2, 29).unwrap();
        for lead in 0..=40 {
            let authored = offset
                .from_local_datetime(&(target - Duration::days(lead)).and_hms_opt(23, 59, 0).unwrap())
                .unwrap();
            let got: Vec<_> = resolve_temporal(&date_phrase(target, lead as u32), &authored)
                .into_iter()
                .map(|m| m.resolved)
                .collect();
            assert_eq!(got, vec![target], "lead {lead}");
        }
    }

    #[test]
    fn zero_probability_means_no_events() {
        let mut s = small(1);
        s.cities.iter_mut().for_each(|c| c.p_event = 0.0);
        let data = synthesize(&s).unwrap();
        assert!(data.gsr.iter().all(|r| !r.event));
        assert_eq!(data.gsr.len(), 8 * 20);
    }

    #[test]
    fn tweets_pass_filters_and_point_at_their_jar() {
        let data = synthesize(&small(3)).unwrap();
        let (kept, report) = apply_filters(&data.tweets, &data.gazetteer);
        assert_eq!(report.kept, data.tweets.len());
        assert!(report.ambiguous.is_empty());
        for t in &kept {
            let date = NaiveDate::parse_from_str(&t.id[..8], "%Y%m%d").unwrap();
            assert_eq!(t.resolved_target_dates.iter().copied().collect::<Vec<_>>(), vec![date]);
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(synthesize(&small(9)).unwrap(), synthesize(&small(9)).unwrap());
        assert_ne!(synthesize(&small(9)).unwrap().tweets, synthesize(&small(10)).unwrap().tweets);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut s = small(0);
        s.mu_nonevent = 50.0;
        assert!(synthesize(&s).is_err());
        let mut s = small(0);
        s.cities.push(SynthCity::new("Atlantis", 0.1));
        assert!(s.validate().is_err());
        let mut s = small(0);
        s.lead = LeadTime::Uniform { min: 4, max: 2 };
        assert!(s.validate().is_err());
    }
}
