//! Great-circle distance and the location filter.

use serde::{Deserialize, Serialize};

use crate::data::{CityGazetteer, CityId, GeoPoint, TweetRecord};

pub const EARTH_RADIUS_MILES: f64 = 3958.8;

/// Haversine distance between two points given in degrees.
pub fn haversine_miles(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    let h = h.clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_MILES * h.sqrt().atan2((1.0 - h).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchCriterion {
    Bio,
    Geo,
    Body,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CityMatch {
    pub city: CityId,
    pub criterion: MatchCriterion,
    /// More than one distinct city was signalled across all criteria.
    pub ambiguous: bool,
}

/// Case-insensitive search for `needle` bounded by non-alphanumeric
/// characters on both sides.
pub(crate) fn contains_word(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let hay = haystack.to_lowercase();
    let needle = needle.to_lowercase();
    hay.match_indices(&needle).any(|(start, m)| {
        let before = hay[..start].chars().next_back();
        let after = hay[start + m.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

fn cities_named_in<'g>(text: &str, gazetteer: &'g CityGazetteer) -> Vec<&'g CityId> {
    gazetteer
        .cities
        .iter()
        .filter(|c| c.names().any(|n| contains_word(text, n)))
        .map(|c| &c.name)
        .collect()
}

/// Assigns a tweet to a city by bio location, then geolocation radius, then
/// a mention in the body. Within a criterion the first city in gazetteer
/// order wins.
pub fn match_city(tweet: &TweetRecord, gazetteer: &CityGazetteer) -> Option<CityMatch> {
    let bio = tweet
        .bio_location
        .as_deref()
        .map(|b| cities_named_in(b, gazetteer))
        .unwrap_or_default();
    let geo: Vec<&CityId> = tweet
        .geo
        .map(|p| {
            gazetteer
                .cities
                .iter()
                .filter(|c| haversine_miles(p, c.centre()) <= gazetteer.radius_miles)
                .map(|c| &c.name)
                .collect()
        })
        .unwrap_or_default();
    let body = cities_named_in(&tweet.text, gazetteer);

    let mut distinct: Vec<&CityId> = bio.iter().chain(&geo).chain(&body).copied().collect();
    distinct.sort();
    distinct.dedup();
    let ambiguous = distinct.len() > 1;

    let first = [
        (MatchCriterion::Bio, bio.first()),
        (MatchCriterion::Geo, geo.first()),
        (MatchCriterion::Body, body.first()),
    ]
    .into_iter()
    .find_map(|(criterion, hit)| hit.map(|c| (criterion, (*c).clone())));
    first.map(|(criterion, city)| CityMatch {
        city,
        criterion,
        ambiguous,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::DateTime;
    use proptest::prelude::*;

    fn km_oracle(a: GeoPoint, b: GeoPoint) -> f64 {
        // Spherical law of cosines with R = 6371 km; independent of the haversine form.
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
        6371.0 * c.acos()
    }

    const SYDNEY: GeoPoint = GeoPoint { lat: -33.8688, lon: 151.2093 };
    const MELBOURNE: GeoPoint = GeoPoint { lat: -37.8136, lon: 144.9631 };

    #[test]
    fn identity_is_zero() {
        assert_eq!(haversine_miles(SYDNEY, SYDNEY), 0.0);
    }

    #[test]
    fn sydney_to_melbourne() {
        let miles = haversine_miles(SYDNEY, MELBOURNE);
        assert!((miles - 443.4).abs() < 0.5, "{miles}");
        let km = miles * 1.609344;
        assert!((km - 713.6).abs() < 1.0, "{km}");
        assert!((km_oracle(SYDNEY, MELBOURNE) - km).abs() < 1.0);
    }

    #[test]
    fn antipodal_is_half_circumference() {
        // Near the antipode 1 - h loses about half the digits, hence the 1e-3.
        let d = haversine_miles(GeoPoint::new(10.0, 20.0), GeoPoint::new(-10.0, -160.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_MILES).abs() < 1e-3, "{d}");
    }

    fn tweet(text: &str) -> TweetRecord {
        TweetRecord::new("t", text, DateTime::parse_from_rfc3339("2018-01-02T09:00:00+11:00").unwrap())
    }

    #[test]
    fn bio_match() {
        let gaz = CityGazetteer::australian_capitals();
        let mut t = tweet("hello");
        t.bio_location = Some("Melbourne, Australia".into());
        let m = match_city(&t, &gaz).unwrap();
        assert_eq!(m.city.as_str(), "Melbourne");
        assert_eq!(m.criterion, MatchCriterion::Bio);
        assert!(!m.ambiguous);
    }

    #[test]
    fn geo_point_ten_miles_from_perth() {
        let gaz = CityGazetteer::australian_capitals();
        let perth = GeoPoint::new(-31.9505, 115.8605);
        // Ten miles due north: 10 / R radians of latitude.
        let p = GeoPoint::new(perth.lat + (10.0 / EARTH_RADIUS_MILES).to_degrees(), perth.lon);
        let km = km_oracle(perth, p);
        assert!(km / 1.609344 < 25.0);
        let mut t = tweet("nothing to see here");
        t.geo = Some(p);
        let m = match_city(&t, &gaz).unwrap();
        assert_eq!((m.city.as_str(), m.criterion), ("Perth", MatchCriterion::Geo));
    }

    #[test]
    fn no_signal_no_city() {
        let gaz = CityGazetteer::australian_capitals();
        assert!(match_city(&tweet("nothing to see here"), &gaz).is_none());
    }

    #[test]
    fn word_boundary_blocks_perthshire() {
        let gaz = CityGazetteer::australian_capitals();
        assert!(match_city(&tweet("greetings from Perthshire"), &gaz).is_none());
        assert!(match_city(&tweet("rally in PERTH!"), &gaz).is_some());
        assert!(match_city(&tweet("#melb rally"), &gaz).is_some());
    }

    #[test]
    fn ambiguity_resolved_by_criterion_then_order() {
        let gaz = CityGazetteer::australian_capitals();
        let mut t = tweet("Sydney people, come to the rally");
        t.bio_location = Some("Hobart".into());
        let m = match_city(&t, &gaz).unwrap();
        assert_eq!(m.city.as_str(), "Hobart");
        assert!(m.ambiguous);
        let m = match_city(&tweet("Sydney and Brisbane marches"), &gaz).unwrap();
        assert_eq!(m.city.as_str(), "Brisbane");
        assert!(m.ambiguous);
    }

    fn point() -> impl Strategy<Value = GeoPoint> {
        (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(lat, lon)| GeoPoint::new(lat, lon))
    }

    proptest! {
        #[test]
        fn symmetric_and_non_negative(a in point(), b in point()) {
            let ab = haversine_miles(a, b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - haversine_miles(b, a)).abs() < 1e-9);
        }

        #[test]
        fn triangle_inequality(a in point(), b in point(), c in point()) {
            prop_assert!(haversine_miles(a, c) <= haversine_miles(a, b) + haversine_miles(b, c) + 1e-9);
        }
    }
}
