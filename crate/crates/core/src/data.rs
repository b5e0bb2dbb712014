//! Domain records, file ingestion, and the jar grid.
//!
//! A jar is one (date, city) cell of the gold-standard coverage. Indicative
//! tweets are dropped into the jars named by their resolved target dates and
//! matched city; each jar keeps the ids of the tweets it received so every
//! downstream prediction can be traced back to its evidence.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, FixedOffset, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a configured city, always the gazetteer's canonical name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CityId(String);

impl CityId {
    pub fn new(name: impl Into<String>) -> Self {
        CityId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CityId {
    fn from(s: &str) -> Self {
        CityId(s.to_string())
    }
}

/// One gold-standard row: whether an unrest event happened in `city` on `date`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GsrRecord {
    pub date: NaiveDate,
    pub city: CityId,
    pub event: bool,
    pub headline: Option<String>,
    pub violent: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        GeoPoint { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// A single posting. The trailing fields are annotations written by the
/// pipeline stages and are absent on raw input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub text: String,
    pub authored_at: DateTime<FixedOffset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bio_location: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub resolved_target_dates: BTreeSet<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_city: Option<CityId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevant: Option<bool>,
}

impl TweetRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, authored_at: DateTime<FixedOffset>) -> Self {
        TweetRecord {
            id: id.into(),
            text: text.into(),
            authored_at,
            geo: None,
            bio_location: None,
            resolved_target_dates: BTreeSet::new(),
            matched_city: None,
            relevant: None,
        }
    }

    /// Calendar date of authorship in the tweet's own UTC offset.
    pub fn authored_date(&self) -> NaiveDate {
        self.authored_at.date_naive()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JarKey {
    pub date: NaiveDate,
    pub city: CityId,
}

impl JarKey {
    pub fn new(date: NaiveDate, city: CityId) -> Self {
        JarKey { date, city }
    }

    pub fn month(&self) -> u32 {
        self.date.month()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Jar {
    pub key: JarKey,
    pub indicative_count: u64,
    pub evidence: Vec<String>,
    pub event: bool,
}

impl Jar {
    pub fn empty(key: JarKey, event: bool) -> Self {
        Jar {
            key,
            indicative_count: 0,
            evidence: Vec::new(),
            event,
        }
    }
}

/// All jars of a study, ordered by (date, city).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct JarGrid {
    jars: BTreeMap<JarKey, Jar>,
}

impl JarGrid {
    pub fn len(&self) -> usize {
        self.jars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jars.is_empty()
    }

    pub fn get(&self, key: &JarKey) -> Option<&Jar> {
        self.jars.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Jar> {
        self.jars.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = &JarKey> {
        self.jars.keys()
    }

    /// A copy of the grid with every count and evidence list cleared.
    pub fn emptied(&self) -> JarGrid {
        JarGrid {
            jars: self
                .jars
                .iter()
                .map(|(k, j)| (k.clone(), Jar::empty(k.clone(), j.event)))
                .collect(),
        }
    }

    /// Restricts the grid to the given keys.
    pub fn subset<'a>(&self, keys: impl IntoIterator<Item = &'a JarKey>) -> JarGrid {
        JarGrid {
            jars: keys
                .into_iter()
                .filter_map(|k| self.jars.get(k).map(|j| (k.clone(), j.clone())))
                .collect(),
        }
    }

    pub fn cities(&self) -> BTreeSet<CityId> {
        self.jars.keys().map(|k| k.city.clone()).collect()
    }

    pub fn total_indicative(&self) -> u64 {
        self.jars.values().map(|j| j.indicative_count).sum()
    }

    fn insert(&mut self, jar: Jar) -> Option<Jar> {
        self.jars.insert(jar.key.clone(), jar)
    }
}

impl FromIterator<Jar> for JarGrid {
    fn from_iter<I: IntoIterator<Item = Jar>>(iter: I) -> Self {
        let mut grid = JarGrid::default();
        for jar in iter {
            grid.insert(jar);
        }
        grid
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CityEntry {
    pub name: CityId,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub lat: f64,
    pub lon: f64,
}

impl CityEntry {
    pub fn centre(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }

    /// Canonical name followed by aliases.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

fn default_radius() -> f64 {
    25.0
}

/// Configured cities with their centres and the shared geolocation radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CityGazetteer {
    pub cities: Vec<CityEntry>,
    #[serde(default = "default_radius")]
    pub radius_miles: f64,
}

impl CityGazetteer {
    /// The eight Australian capital cities.
    pub fn australian_capitals() -> Self {
        let city = |name: &str, aliases: &[&str], lat: f64, lon: f64| CityEntry {
            name: CityId::from(name),
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
            lat,
            lon,
        };
        CityGazetteer {
            cities: vec![
                city("Adelaide", &[], -34.9285, 138.6007),
                city("Brisbane", &["Brissie"], -27.4698, 153.0251),
                city("Canberra", &["CBR"], -35.2809, 149.1300),
                city("Darwin", &[], -12.4634, 130.8456),
                city("Hobart", &[], -42.8821, 147.3272),
                city("Melbourne", &["Melb"], -37.8136, 144.9631),
                city("Perth", &[], -31.9505, 115.8605),
                city("Sydney", &["Syd"], -33.8688, 151.2093),
            ],
            radius_miles: default_radius(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let gaz: CityGazetteer = serde_json::from_reader(BufReader::new(file))?;
        gaz.validate()?;
        Ok(gaz)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fmt::write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cities.is_empty() {
            return Err(Error::Validation("gazetteer has no cities".into()));
        }
        if !(self.radius_miles > 0.0) {
            return Err(Error::Validation(format!(
                "gazetteer radius must be positive, got {}",
                self.radius_miles
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.cities {
            if !seen.insert(c.name.as_str().to_lowercase()) {
                return Err(Error::Validation(format!("duplicate gazetteer city {}", c.name)));
            }
            if !c.centre().is_valid() {
                return Err(Error::Validation(format!("city {} has invalid centre", c.name)));
            }
        }
        Ok(())
    }

    /// Looks up a city by canonical name, case-insensitively.
    pub fn canonical(&self, name: &str) -> Option<&CityId> {
        let name = name.trim();
        self.cities
            .iter()
            .find(|c| c.name.as_str().eq_ignore_ascii_case(name))
            .map(|c| &c.name)
    }
}

/// Inclusive date range of a study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl StudyWindow {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

fn parse_bool(field: &str) -> Option<bool> {
    match field.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads a gold-standard CSV with header `date,city,event[,headline,violent]`.
pub fn load_gsr(path: &Path) -> Result<Vec<GsrRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_gsr(path, file)
}

fn read_gsr(path: &Path, input: impl std::io::Read) -> Result<Vec<GsrRecord>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(date_col), Some(city_col), Some(event_col)) =
        (column("date"), column("city"), column("event"))
    else {
        return Err(Error::parse(path, 1, "header must contain date,city,event"));
    };
    let headline_col = column("headline");
    let violent_col = column("violent");

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(field(date_col), "%Y-%m-%d")
            .map_err(|e| Error::parse(path, line, format!("bad date {:?}: {e}", field(date_col))))?;
        let city = field(city_col);
        if city.is_empty() {
            return Err(Error::parse(path, line, "empty city"));
        }
        let event = parse_bool(field(event_col))
            .ok_or_else(|| Error::parse(path, line, format!("bad event flag {:?}", field(event_col))))?;
        let headline = headline_col
            .map(field)
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        let violent = match violent_col.map(field).filter(|s| !s.is_empty()) {
            None => None,
            Some(v) => Some(
                parse_bool(v).ok_or_else(|| Error::parse(path, line, format!("bad violent flag {v:?}")))?,
            ),
        };
        let city = CityId::from(city);
        if !seen.insert((date, city.clone())) {
            return Err(Error::Validation(format!(
                "{}:{line}: duplicate GSR row for {date} {city}",
                path.display()
            )));
        }
        out.push(GsrRecord {
            date,
            city,
            event,
            headline,
            violent,
        });
    }
    Ok(out)
}

pub fn write_gsr(path: &Path, records: &[GsrRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["date", "city", "event", "headline", "violent"])?;
    for r in records {
        let violent = match r.violent {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        w.write_record([
            r.date.to_string().as_str(),
            r.city.as_str(),
            if r.event { "1" } else { "0" },
            r.headline.as_deref().unwrap_or(""),
            violent,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Canonicalises GSR city names against the gazetteer and checks the study
/// window when one is given.
pub fn validate_gsr(
    records: &mut [GsrRecord],
    gazetteer: &CityGazetteer,
    window: Option<StudyWindow>,
) -> Result<()> {
    for r in records.iter_mut() {
        let canonical = gazetteer
            .canonical(r.city.as_str())
            .ok_or_else(|| Error::Validation(format!("GSR city {} is not in the gazetteer", r.city)))?;
        r.city = canonical.clone();
        if let Some(w) = window {
            if !w.contains(r.date) {
                return Err(Error::Validation(format!(
                    "GSR date {} outside study window {}..{}",
                    r.date, w.start, w.end
                )));
            }
        }
    }
    let mut seen = HashSet::new();
    for r in records.iter() {
        if !seen.insert((r.date, &r.city)) {
            return Err(Error::Validation(format!("duplicate GSR row for {} {}", r.date, r.city)));
        }
    }
    Ok(())
}

/// (date, city) cells inside the GSR's own date span that have no row.
pub fn coverage_gaps(records: &[GsrRecord], gazetteer: &CityGazetteer) -> Vec<JarKey> {
    let (Some(start), Some(end)) = (
        records.iter().map(|r| r.date).min(),
        records.iter().map(|r| r.date).max(),
    ) else {
        return Vec::new();
    };
    let present: HashSet<(NaiveDate, &CityId)> = records.iter().map(|r| (r.date, &r.city)).collect();
    let mut gaps = Vec::new();
    for date in start.iter_days().take_while(|d| *d <= end) {
        for c in &gazetteer.cities {
            if !present.contains(&(date, &c.name)) {
                gaps.push(JarKey::new(date, c.name.clone()));
            }
        }
    }
    gaps
}

/// Reads a JSON-Lines tweet file. Annotation keys, when present, are kept so
/// stage outputs can be re-read.
pub fn load_tweets(path: &Path) -> Result<Vec<TweetRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tweet: TweetRecord = serde_json::from_str(&line).map_err(|e| {
            if e.is_data() {
                Error::Validation(format!("{}:{lineno}: {e}", path.display()))
            } else {
                Error::parse(path, lineno, e.to_string())
            }
        })?;
        if let Some(geo) = tweet.geo {
            if !geo.is_valid() {
                return Err(Error::Validation(format!(
                    "{}:{lineno}: geo point ({}, {}) out of range",
                    path.display(),
                    geo.lat,
                    geo.lon
                )));
            }
        }
        if tweet
            .resolved_target_dates
            .iter()
            .any(|d| *d < tweet.authored_date())
        {
            return Err(Error::Validation(format!(
                "{}:{lineno}: resolved date precedes authored date",
                path.display()
            )));
        }
        if !ids.insert(tweet.id.clone()) {
            return Err(Error::Validation(format!(
                "{}:{lineno}: duplicate tweet id {}",
                path.display(),
                tweet.id
            )));
        }
        out.push(tweet);
    }
    Ok(out)
}

pub fn write_tweets(path: &Path, tweets: &[TweetRecord]) -> Result<()> {
    let mut out = create(path)?;
    for t in tweets {
        let line = crate::fmt::to_json_line(t)?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// One empty jar per GSR row.
pub fn build_jar_grid(gsr: &[GsrRecord]) -> JarGrid {
    gsr.iter()
        .map(|r| Jar::empty(JarKey::new(r.date, r.city.clone()), r.event))
        .collect()
}

/// Tally of a drop pass over (tweet, target date) pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    /// (tweet, resolved date, matched city) triples offered to the grid.
    pub presented: u64,
    pub placed: u64,
    /// Triples whose jar is not in the grid.
    pub dropped: u64,
    /// Tweets ignored because they were marked non-relevant or had no city.
    pub skipped_tweets: u64,
}

/// Sorts indicative tweets into jars. Tweets explicitly marked non-relevant
/// are skipped; a tweet with several target dates lands in several jars.
pub fn drop_tweets_into_jars(grid: &mut JarGrid, tweets: &[TweetRecord]) -> DropReport {
    drop_tweets_filtered(grid, tweets, |_, _| true)
}

/// As [`drop_tweets_into_jars`], offering only the (tweet, date) pairs for
/// which `keep` returns true.
pub fn drop_tweets_filtered<F>(grid: &mut JarGrid, tweets: &[TweetRecord], mut keep: F) -> DropReport
where
    F: FnMut(&TweetRecord, NaiveDate) -> bool,
{
    let mut report = DropReport::default();
    for tweet in tweets {
        let Some(city) = tweet.matched_city.as_ref().filter(|_| tweet.relevant != Some(false)) else {
            report.skipped_tweets += 1;
            continue;
        };
        for &date in &tweet.resolved_target_dates {
            if !keep(tweet, date) {
                continue;
            }
            report.presented += 1;
            match grid.jars.get_mut(&JarKey::new(date, city.clone())) {
                Some(jar) => {
                    jar.indicative_count += 1;
                    jar.evidence.push(tweet.id.clone());
                    report.placed += 1;
                }
                None => report.dropped += 1,
            }
        }
    }
    report
}

/// Writes `date,city,event,indicative_count,evidence_ids`.
pub fn write_jars(path: &Path, grid: &JarGrid) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["date", "city", "event", "indicative_count", "evidence_ids"])?;
    for jar in grid.iter() {
        w.write_record([
            jar.key.date.to_string().as_str(),
            jar.key.city.as_str(),
            if jar.event { "1" } else { "0" },
            jar.indicative_count.to_string().as_str(),
            jar.evidence.join(";").as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_jars(path: &Path) -> Result<JarGrid> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut grid = JarGrid::default();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 5 {
            return Err(Error::parse(path, line, format!("expected 5 fields, got {}", row.len())));
        }
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d")
            .map_err(|e| Error::parse(path, line, format!("bad date: {e}")))?;
        let event = parse_bool(&row[2]).ok_or_else(|| Error::parse(path, line, "bad event flag"))?;
        let count: u64 = row[3]
            .parse()
            .map_err(|e| Error::parse(path, line, format!("bad count: {e}")))?;
        let evidence: Vec<String> = if row[4].is_empty() {
            Vec::new()
        } else {
            row[4].split(';').map(str::to_string).collect()
        };
        if evidence.len() as u64 != count {
            return Err(Error::Validation(format!(
                "{}:{line}: indicative_count {count} does not match {} evidence ids",
                path.display(),
                evidence.len()
            )));
        }
        let key = JarKey::new(date, CityId::from(&row[1]));
        let jar = Jar {
            key: key.clone(),
            indicative_count: count,
            evidence,
            event,
        };
        if grid.insert(jar).is_some() {
            return Err(Error::Validation(format!("{}:{line}: duplicate jar {} {}", path.display(), key.date, key.city)));
        }
    }
    Ok(grid)
}
