#![allow(dead_code)]

use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate};
use pachinko_core::data::{CityId, GsrRecord};

/// Per-city (days, events) for the eight capitals.
pub const CITY_TABLE: [(&str, u32, u32); 8] = [
    ("Adelaide", 206, 12),
    ("Brisbane", 209, 37),
    ("Canberra", 206, 27),
    ("Darwin", 208, 5),
    ("Hobart", 207, 11),
    ("Melbourne", 209, 57),
    ("Perth", 209, 30),
    ("Sydney", 209, 47),
];

/// Per-month (month, year, city-days, events) over the study window.
pub const MONTH_TABLE: [(u32, i32, u32, u32); 8] = [
    (7, 2015, 79, 14),
    (8, 2015, 248, 41),
    (9, 2015, 240, 41),
    (10, 2015, 248, 40),
    (11, 2015, 240, 47),
    (12, 2015, 248, 20),
    (1, 2016, 248, 18),
    (2, 2016, 112, 5),
];

fn record(date: NaiveDate, city: &str, event: bool) -> GsrRecord {
    GsrRecord {
        date,
        city: CityId::from(city),
        event,
        headline: None,
        violent: None,
    }
}

/// GSR rows reproducing the per-city margins.
pub fn city_table_gsr() -> Vec<GsrRecord> {
    let start = NaiveDate::from_ymd_opt(2015, 7, 1).unwrap();
    let mut out = Vec::new();
    for (city, days, events) in CITY_TABLE {
        for i in 0..days {
            out.push(record(start + Duration::days(i as i64), city, i < events));
        }
    }
    out
}

/// GSR rows reproducing the per-month margins.
pub fn month_table_gsr() -> Vec<GsrRecord> {
    let mut out = Vec::new();
    for (month, year, cells, events) in MONTH_TABLE {
        let first = NaiveDate::from_ymd_opt(year, month, 1).unwrap();
        let mut k = 0;
        'fill: for day in 0..31 {
            let date = first + Duration::days(day);
            if chrono::Datelike::month(&date) != month {
                break;
            }
            for (city, _, _) in CITY_TABLE {
                if k == cells {
                    break 'fill;
                }
                out.push(record(date, city, k < events));
                k += 1;
            }
        }
        assert_eq!(k, cells, "month {month} cannot hold {cells} cells");
    }
    out
}

pub struct TemporalCase {
    pub text: String,
    pub authored_at: DateTime<chrono::FixedOffset>,
    pub expected: Vec<NaiveDate>,
}

pub fn temporal_corpus() -> Vec<TemporalCase> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/temporal_corpus.csv");
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            TemporalCase {
                text: r[0].to_string(),
                authored_at: DateTime::parse_from_rfc3339(&r[1]).unwrap(),
                expected: r[2]
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap())
                    .collect(),
            }
        })
        .collect()
}
