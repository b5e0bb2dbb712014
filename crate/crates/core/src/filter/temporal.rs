//! Rule-based resolution of future time references in English tweet text.
//!
//! Supported forms: `today`, `tonight`, `tomorrow`, `next week`,
//! `this|next <weekday>`, bare weekdays, ISO dates, day-first numeric dates
//! (`14/02`, `14/02/2018`), and named-month dates in either order with
//! optional ordinal suffix and year (`14 February`, `Feb 14th`,
//! `the 3rd of January 2018`). References that resolve before the authored
//! date are discarded.

use std::sync::OnceLock;

use chrono::{DateTime, Datelike, Days, FixedOffset, NaiveDate, Weekday};
use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionKind {
    RelativeDay,
    RelativeWeek,
    Weekday,
    ExplicitDate,
    MonthDay,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalMention {
    /// Character offsets `[start, end)` into the tweet text.
    pub span: (usize, usize),
    pub kind: MentionKind,
    pub resolved: NaiveDate,
}

const MONTHS: &str = "january|february|march|april|may|june|july|august|september|october|november|december|jan|feb|mar|apr|jun|jul|aug|sept|sep|oct|nov|dec";
const WEEKDAYS: &str = "monday|tuesday|wednesday|thursday|friday|saturday|sunday";

struct Grammar {
    iso: Regex,
    numeric: Regex,
    day_month: Regex,
    month_day: Regex,
    relative: Regex,
    next_week: Regex,
    weekday: Regex,
}

fn grammar() -> &'static Grammar {
    static GRAMMAR: OnceLock<Grammar> = OnceLock::new();
    GRAMMAR.get_or_init(|| {
        let re = |p: String| Regex::new(&p).expect("temporal grammar");
        Grammar {
            iso: re(r"\b(\d{4})-(\d{2})-(\d{2})\b".into()),
            numeric: re(r"\b(\d{1,2})/(\d{1,2})(?:/(\d{4}|\d{2}))?\b".into()),
            day_month: re(format!(
                r"\b(?:the\s+)?(\d{{1,2}})(?:st|nd|rd|th)?(?:\s+of)?\s+({MONTHS})\b\.?(?:,?\s+(\d{{4}})\b)?"
            )),
            month_day: re(format!(
                r"\b({MONTHS})\.?\s+(?:the\s+)?(\d{{1,2}})(?:st|nd|rd|th)?\b(?:,?\s+(\d{{4}})\b)?"
            )),
            relative: re(r"\b(today|tonight|tomorrow)\b".into()),
            next_week: re(r"\bnext\s+week\b".into()),
            weekday: re(format!(r"\b(?:(this|next|last)\s+)?({WEEKDAYS})\b")),
        }
    })
}

fn month_number(name: &str) -> Option<u32> {
    let n = match &name[..3] {
        "jan" => 1,
        "feb" => 2,
        "mar" => 3,
        "apr" => 4,
        "may" => 5,
        "jun" => 6,
        "jul" => 7,
        "aug" => 8,
        "sep" => 9,
        "oct" => 10,
        "nov" => 11,
        "dec" => 12,
        _ => return None,
    };
    Some(n)
}

fn weekday_from(name: &str) -> Weekday {
    match name {
        "monday" => Weekday::Mon,
        "tuesday" => Weekday::Tue,
        "wednesday" => Weekday::Wed,
        "thursday" => Weekday::Thu,
        "friday" => Weekday::Fri,
        "saturday" => Weekday::Sat,
        _ => Weekday::Sun,
    }
}

/// First occurrence of `month`/`day` on or after `from`.
fn next_month_day(from: NaiveDate, month: u32, day: u32) -> Option<NaiveDate> {
    // Eight years always contain a 29 February.
    (from.year()..from.year() + 9)
        .filter_map(|y| NaiveDate::from_ymd_opt(y, month, day))
        .find(|d| *d >= from)
}

fn explicit(year: Option<&str>, month: u32, day: u32, authored: NaiveDate) -> Option<(MentionKind, NaiveDate)> {
    match year {
        Some(y) => {
            let mut y: i32 = y.parse().ok()?;
            if y < 100 {
                y += 2000;
            }
            NaiveDate::from_ymd_opt(y, month, day).map(|d| (MentionKind::ExplicitDate, d))
        }
        None => next_month_day(authored, month, day).map(|d| (MentionKind::MonthDay, d)),
    }
}

fn strictly_after(authored: NaiveDate, target: Weekday) -> NaiveDate {
    let ahead = (target.num_days_from_monday() + 7 - authored.weekday().num_days_from_monday()) % 7;
    let ahead = if ahead == 0 { 7 } else { ahead };
    authored + Days::new(ahead as u64)
}

struct Candidate {
    start: usize,
    end: usize,
    /// `None` when the span is a recognised expression that refers to the past
    /// or to an invalid calendar date; it still claims its span.
    value: Option<(MentionKind, NaiveDate)>,
}

fn candidates(lower: &str, authored: NaiveDate) -> Vec<Candidate> {
    let g = grammar();
    let mut out = Vec::new();
    let mut push = |m: regex::Match<'_>, value: Option<(MentionKind, NaiveDate)>| {
        out.push(Candidate {
            start: m.start(),
            end: m.end(),
            value,
        })
    };

    for c in g.iso.captures_iter(lower) {
        let (y, m, d) = (&c[1], &c[2], &c[3]);
        let value = (|| {
            let date = NaiveDate::from_ymd_opt(y.parse().ok()?, m.parse().ok()?, d.parse().ok()?)?;
            Some((MentionKind::ExplicitDate, date))
        })();
        push(c.get(0).unwrap(), value);
    }
    for c in g.numeric.captures_iter(lower) {
        let value = (|| {
            let day: u32 = c[1].parse().ok()?;
            let month: u32 = c[2].parse().ok()?;
            explicit(c.get(3).map(|m| m.as_str()), month, day, authored)
        })();
        push(c.get(0).unwrap(), value);
    }
    for c in g.day_month.captures_iter(lower) {
        let value = (|| {
            let day: u32 = c[1].parse().ok()?;
            explicit(c.get(3).map(|m| m.as_str()), month_number(&c[2])?, day, authored)
        })();
        push(c.get(0).unwrap(), value);
    }
    for c in g.month_day.captures_iter(lower) {
        let value = (|| {
            let day: u32 = c[2].parse().ok()?;
            explicit(c.get(3).map(|m| m.as_str()), month_number(&c[1])?, day, authored)
        })();
        push(c.get(0).unwrap(), value);
    }
    for c in g.relative.captures_iter(lower) {
        let offset = if &c[1] == "tomorrow" { 1 } else { 0 };
        push(c.get(0).unwrap(), Some((MentionKind::RelativeDay, authored + Days::new(offset))));
    }
    for m in g.next_week.find_iter(lower) {
        push(m, Some((MentionKind::RelativeWeek, authored + Days::new(7))));
    }
    for c in g.weekday.captures_iter(lower) {
        let target = weekday_from(&c[2]);
        let value = match c.get(1).map(|m| m.as_str()) {
            Some("last") => None,
            Some("this") => {
                let monday = authored - Days::new(authored.weekday().num_days_from_monday() as u64);
                let date = monday + Days::new(target.num_days_from_monday() as u64);
                (date >= authored).then_some((MentionKind::Weekday, date))
            }
            _ => Some((MentionKind::Weekday, strictly_after(authored, target))),
        };
        push(c.get(0).unwrap(), value);
    }
    out
}

fn char_offset(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

/// Finds time references in `text` that resolve on or after the authored
/// date, in text order. Overlapping matches are resolved leftmost-longest.
pub fn resolve_temporal(text: &str, authored_at: &DateTime<FixedOffset>) -> Vec<TemporalMention> {
    let authored = authored_at.date_naive();
    // ASCII lowercasing keeps byte offsets aligned with `text`.
    let lower = text.to_ascii_lowercase();
    let mut cands = candidates(&lower, authored);
    cands.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));

    let mut mentions = Vec::new();
    let mut claimed_to = 0;
    for c in cands {
        if c.start < claimed_to {
            continue;
        }
        claimed_to = c.end;
        if let Some((kind, resolved)) = c.value {
            if resolved >= authored {
                mentions.push(TemporalMention {
                    span: (char_offset(text, c.start), char_offset(text, c.end)),
                    kind,
                    resolved,
                });
            }
        }
    }
    mentions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(s: &str) -> DateTime<FixedOffset> {
        DateTime::parse_from_rfc3339(s).unwrap()
    }

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn dates(text: &str, when: &str) -> Vec<NaiveDate> {
        resolve_temporal(text, &at(when)).into_iter().map(|m| m.resolved).collect()
    }

    #[test]
    fn tomorrow_from_second_of_january() {
        let ms = resolve_temporal(
            "Let's protest tomorrow at the University of Melbourne",
            &at("2018-01-02T09:00:00+11:00"),
        );
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].resolved, d(2018, 1, 3));
        assert_eq!(ms[0].kind, MentionKind::RelativeDay);
        assert_eq!(ms[0].span, (14, 22));
    }

    #[test]
    fn past_reference_dropped() {
        assert!(dates("we marched yesterday", "2018-01-02T09:00:00+11:00").is_empty());
        assert!(dates("we marched last friday", "2018-01-02T09:00:00+11:00").is_empty());
        assert!(dates("that was on 1 January 2018", "2018-01-02T09:00:00+11:00").is_empty());
    }

    #[test]
    fn month_day_next_occurrence() {
        assert_eq!(dates("rally on 14 February", "2018-01-10T08:00:00+11:00"), vec![d(2018, 2, 14)]);
        assert_eq!(dates("rally on 14 February", "2018-02-15T08:00:00+11:00"), vec![d(2019, 2, 14)]);
    }

    #[test]
    fn authored_date_uses_own_offset() {
        // 23:30 UTC on the 1st is already the 2nd in Melbourne.
        assert_eq!(dates("march tomorrow", "2018-01-02T10:30:00+11:00"), vec![d(2018, 1, 3)]);
        assert_eq!(dates("march tomorrow", "2018-01-01T23:30:00+00:00"), vec![d(2018, 1, 2)]);
    }

    #[test]
    fn this_weekday_within_week_only() {
        // 2018-01-03 is a Wednesday.
        assert_eq!(dates("this friday", "2018-01-03T09:00:00+11:00"), vec![d(2018, 1, 5)]);
        assert_eq!(dates("this wednesday", "2018-01-03T09:00:00+11:00"), vec![d(2018, 1, 3)]);
        assert!(dates("this monday", "2018-01-03T09:00:00+11:00").is_empty());
    }

    #[test]
    fn next_weekday_strictly_after() {
        assert_eq!(dates("next wednesday", "2018-01-03T09:00:00+11:00"), vec![d(2018, 1, 10)]);
        assert_eq!(dates("see you Wednesday", "2018-01-03T09:00:00+11:00"), vec![d(2018, 1, 10)]);
    }

    #[test]
    fn invalid_dates_ignored() {
        assert!(dates("31 February", "2018-01-03T09:00:00+11:00").is_empty());
        assert!(dates("45/13", "2018-01-03T09:00:00+11:00").is_empty());
    }

    #[test]
    fn leap_day_without_year() {
        assert_eq!(dates("29 Feb", "2018-01-03T09:00:00+11:00"), vec![d(2020, 2, 29)]);
    }

    #[test]
    fn multiple_mentions_in_order() {
        let ms = resolve_temporal("today and tomorrow, then 2018-01-20", &at("2018-01-02T09:00:00+11:00"));
        let got: Vec<_> = ms.iter().map(|m| (m.kind, m.resolved)).collect();
        assert_eq!(
            got,
            vec![
                (MentionKind::RelativeDay, d(2018, 1, 2)),
                (MentionKind::RelativeDay, d(2018, 1, 3)),
                (MentionKind::ExplicitDate, d(2018, 1, 20)),
            ]
        );
    }

    #[test]
    fn unicode_text_spans_are_char_offsets() {
        let ms = resolve_temporal("ÿ✊ tomorrow", &at("2018-01-02T09:00:00+11:00"));
        assert_eq!(ms[0].span, (3, 11));
    }

    #[test]
    fn empty_or_unparseable() {
        assert!(dates("", "2018-01-02T09:00:00+11:00").is_empty());
        assert!(dates("no dates here at all", "2018-01-02T09:00:00+11:00").is_empty());
    }
}
