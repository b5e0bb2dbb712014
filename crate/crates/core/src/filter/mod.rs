//! Location and temporal filters applied together to raw postings.

pub mod geo;
pub mod temporal;

use serde::{Deserialize, Serialize};

use crate::data::{CityGazetteer, TweetRecord};

pub use geo::{haversine_miles, match_city, CityMatch, MatchCriterion, EARTH_RADIUS_MILES};
pub use temporal::{resolve_temporal, MentionKind, TemporalMention};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub kept: usize,
    pub no_city: usize,
    pub no_future_date: usize,
    /// Ids of kept tweets whose city assignment was a tie-break.
    pub ambiguous: Vec<String>,
}

/// Survivors of both filters, annotated with `matched_city` and
/// `resolved_target_dates`.
pub fn apply_filters(tweets: &[TweetRecord], gazetteer: &CityGazetteer) -> (Vec<TweetRecord>, FilterReport) {
    let mut report = FilterReport {
        input: tweets.len(),
        ..FilterReport::default()
    };
    let mut kept = Vec::new();
    for tweet in tweets {
        let city = match_city(tweet, gazetteer);
        let dates: std::collections::BTreeSet<_> = resolve_temporal(&tweet.text, &tweet.authored_at)
            .into_iter()
            .map(|m| m.resolved)
            .collect();
        let Some(city) = city else {
            report.no_city += 1;
            continue;
        };
        if dates.is_empty() {
            report.no_future_date += 1;
            continue;
        }
        if city.ambiguous {
            report.ambiguous.push(tweet.id.clone());
        }
        let mut t = tweet.clone();
        t.matched_city = Some(city.city);
        t.resolved_target_dates = dates;
        kept.push(t);
    }
    report.kept = kept.len();
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GeoPoint;
    use chrono::{DateTime, NaiveDate};

    fn tweet(id: &str, text: &str) -> TweetRecord {
        TweetRecord::new(id, text, DateTime::parse_from_rfc3339("2018-01-02T09:00:00+11:00").unwrap())
    }

    #[test]
    fn ten_tweet_fixture_keeps_four() {
        let gaz = CityGazetteer::australian_capitals();
        let mut with_bio = tweet("3", "rally next week");
        with_bio.bio_location = Some("Hobart, Tasmania".into());
        let mut with_geo = tweet("4", "strike on 14 February");
        with_geo.geo = Some(GeoPoint::new(-27.47, 153.03));
        let mut far_geo = tweet("9", "march tomorrow");
        far_geo.geo = Some(GeoPoint::new(-20.0, 140.0));
        let input = vec![
            tweet("1", "Let's protest tomorrow at the University of Melbourne"),
            tweet("2", "Melbourne is lovely"),
            with_bio,
            with_geo,
            tweet("5", "protest tomorrow"),
            tweet("6", "Sydney rally was yesterday"),
            tweet("7", "Canberra sit-in this Friday"),
            tweet("8", "nothing"),
            far_geo,
            tweet("10", "Perthshire march tomorrow"),
        ];
        let (kept, report) = apply_filters(&input, &gaz);
        let ids: Vec<&str> = kept.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, vec!["1", "3", "4", "7"]);
        assert_eq!(report.kept, 4);
        assert_eq!(report.no_city, 4);
        assert_eq!(report.no_future_date, 2);
        let expect = [
            ("Melbourne", NaiveDate::from_ymd_opt(2018, 1, 3)),
            ("Hobart", NaiveDate::from_ymd_opt(2018, 1, 9)),
            ("Brisbane", NaiveDate::from_ymd_opt(2018, 2, 14)),
            ("Canberra", NaiveDate::from_ymd_opt(2018, 1, 5)),
        ];
        for (t, (city, date)) in kept.iter().zip(expect) {
            assert_eq!(t.matched_city.as_ref().unwrap().as_str(), city);
            assert_eq!(t.resolved_target_dates.iter().copied().collect::<Vec<_>>(), vec![date.unwrap()]);
        }
    }

    #[test]
    fn survivors_are_subset_of_input() {
        let gaz = CityGazetteer::australian_capitals();
        let input = vec![tweet("a", "Perth rally tomorrow"), tweet("b", "x")];
        let (kept, _) = apply_filters(&input, &gaz);
        for k in &kept {
            let orig = input.iter().find(|t| t.id == k.id).unwrap();
            assert_eq!(orig.text, k.text);
            assert!(k.matched_city.is_some() && !k.resolved_target_dates.is_empty());
        }
    }
}
