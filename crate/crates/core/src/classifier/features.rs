//! Word 1- and 2-gram count features.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// Lowercased maximal alphanumeric runs of at least two characters.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

/// All unigrams and adjacent bigrams of [`tokens`], with counts.
pub fn ngram_counts(text: &str) -> BTreeMap<String, u32> {
    let toks = tokens(text);
    let mut counts = BTreeMap::new();
    for t in &toks {
        *counts.entry(t.clone()).or_insert(0) += 1;
    }
    for pair in toks.windows(2) {
        *counts.entry(format!("{} {}", pair[0], pair[1])).or_insert(0) += 1;
    }
    counts
}

/// Sparse count vector, entries sorted by feature id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureVector {
    entries: Vec<(u32, u32)>,
}

impl FeatureVector {
    pub fn from_entries(mut entries: Vec<(u32, u32)>) -> Self {
        entries.retain(|&(_, c)| c > 0);
        entries.sort_unstable();
        FeatureVector { entries }
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Mapping from n-gram to feature id. Ids follow lexicographic term order so
/// a vocabulary built from the same texts is always identical.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(terms: Vec<String>) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { terms, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.terms
    }
}

impl Vocabulary {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut all = std::collections::BTreeSet::new();
        for text in texts {
            all.extend(ngram_counts(text).into_keys());
        }
        Vocabulary::from(all.into_iter().collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    /// Out-of-vocabulary n-grams are dropped.
    pub fn transform(&self, text: &str) -> FeatureVector {
        FeatureVector::from_entries(
            ngram_counts(text)
                .into_iter()
                .filter_map(|(t, c)| self.id(&t).map(|id| (id, c)))
                .collect(),
        )
    }
}
