//! Per-topic narrative lists and the class-index → narrative lookup.
//!
//! A taxonomy file is a JSON object mapping each topic to its ordered list of
//! narratives. Class indices are list positions and never change after load.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Abstention narrative present in every list.
pub const SENTINEL: &str = "No claim in the list is describing the tweet";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NarrativeSet {
    topic: String,
    narratives: Vec<String>,
    sentinel_index: usize,
}

impl NarrativeSet {
    pub fn new(topic: impl Into<String>, narratives: Vec<String>) -> Result<Self> {
        let topic = topic.into();
        if narratives.is_empty() {
            return Err(Error::Taxonomy(format!("topic `{topic}` has no narratives")));
        }
        let mut seen = HashSet::new();
        for n in &narratives {
            if n.is_empty() {
                return Err(Error::Taxonomy(format!("topic `{topic}` has an empty narrative")));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Taxonomy(format!("topic `{topic}` lists `{n}` twice")));
            }
        }
        let sentinel_index = narratives
            .iter()
            .position(|n| n == SENTINEL)
            .ok_or_else(|| Error::Taxonomy(format!("topic `{topic}` is missing the sentinel narrative")))?;
        Ok(Self {
            topic,
            narratives,
            sentinel_index,
        })
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn narratives(&self) -> &[String] {
        &self.narratives
    }

    pub fn len(&self) -> usize {
        self.narratives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.narratives.is_empty()
    }

    pub fn sentinel_index(&self) -> usize {
        self.sentinel_index
    }

    pub fn get(&self, index: usize) -> Result<&str> {
        self.narratives
            .get(index)
            .map(String::as_str)
            .ok_or_else(|| Error::IndexOutOfRange {
                topic: self.topic.clone(),
                index,
                size: self.narratives.len(),
            })
    }

    pub fn index_of(&self, narrative: &str) -> Option<usize> {
        self.narratives.iter().position(|n| n == narrative)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Taxonomy {
    sets: BTreeMap<String, NarrativeSet>,
}

impl Taxonomy {
    pub fn from_sets(sets: impl IntoIterator<Item = NarrativeSet>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for set in sets {
            let topic = set.topic.clone();
            if map.insert(topic.clone(), set).is_some() {
                return Err(Error::Taxonomy(format!("topic `{topic}` defined twice")));
            }
        }
        Ok(Self { sets: map })
    }

    pub fn get(&self, topic: &str) -> Option<&NarrativeSet> {
        self.sets.get(topic)
    }

    pub fn set(&self, topic: &str) -> Result<&NarrativeSet> {
        self.get(topic).ok_or_else(|| Error::UnknownTopic(topic.to_string()))
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.sets.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// The lookup function from a predicted class to its narrative text.
    pub fn lookup_g(&self, topic: &str, class_index: usize) -> Result<&str> {
        self.set(topic)?.get(class_index)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let entries: OrderedEntries =
            serde_json::from_str(text).map_err(|e| Error::parse(origin, e.line(), e.to_string()))?;
        let sets = entries
            .0
            .into_iter()
            .map(|(topic, list)| NarrativeSet::new(topic, list))
            .collect::<Result<Vec<_>>>()?;
        Self::from_sets(sets)
    }
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Taxonomy::parse(&text, path)
}

/// Map entries in file order, keeping duplicate keys so they can be rejected.
struct OrderedEntries(Vec<(String, Vec<String>)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedEntries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping topics to narrative lists")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Vec<String>>()? {
                    out.push((k, v));
                }
                Ok(OrderedEntries(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Taxonomy {
        let list = ["a", "b", "c", SENTINEL].iter().map(|s| s.to_string()).collect();
        Taxonomy::from_sets([NarrativeSet::new("t", list).unwrap()]).unwrap()
    }

    #[test]
    fn lookup_by_index() {
        let tax = abc();
        assert_eq!(tax.lookup_g("t", 0).unwrap(), "a");
        assert_eq!(tax.lookup_g("t", 3).unwrap(), SENTINEL);
        assert!(matches!(tax.lookup_g("t", 4), Err(Error::IndexOutOfRange { size: 4, .. })));
        assert!(matches!(tax.lookup_g("nope", 0), Err(Error::UnknownTopic(_))));
    }

    #[test]
    fn duplicate_narrative_names_topic_and_string() {
        let err = Taxonomy::parse(r#"{"t": ["x", "x", "No claim in the list is describing the tweet"]}"#, Path::new("f"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("`t`") && err.contains("`x`"), "{err}");
    }

    #[test]
    fn duplicate_topic_rejected() {
        let s = format!(r#"{{"t": ["{SENTINEL}"], "t": ["{SENTINEL}"]}}"#);
        assert!(Taxonomy::parse(&s, Path::new("f")).is_err());
    }

    #[test]
    fn missing_sentinel_rejected() {
        assert!(NarrativeSet::new("t", vec!["a".into()]).is_err());
        assert!(NarrativeSet::new("t", vec![]).is_err());
    }

    #[test]
    fn index_of_round_trips() {
        let tax = abc();
        let set = tax.get("t").unwrap();
        for n in set.narratives() {
            assert_eq!(set.get(set.index_of(n).unwrap()).unwrap(), n);
        }
    }
}
