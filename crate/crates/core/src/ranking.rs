//! Path and triple ranking, and top-n selection.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::index::{score_order, ScoredItem};
use crate::retrieval::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingScheme {
    /// Number of hops whose relation is among the retrieved relations.
    Frequency,
    /// Frequency divided by hop count.
    Normalized,
    /// Cosine similarity carried over from retrieval (triples only).
    Similarity,
}

impl std::str::FromStr for RankingScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frequency" => Ok(Self::Frequency),
            "normalized" => Ok(Self::Normalized),
            "similarity" => Ok(Self::Similarity),
            other => Err(format!(
                "unknown ranking scheme `{other}` (expected frequency|normalized|similarity)"
            )),
        }
    }
}

impl std::fmt::Display for RankingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Frequency => "frequency",
            Self::Normalized => "normalized",
            Self::Similarity => "similarity",
        })
    }
}

/// How many ranked items to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TopN {
    Count(usize),
    #[default]
    All,
}

impl std::str::FromStr for TopN {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(TopN::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(TopN::Count(n)),
            _ => Err(format!("invalid top-n `{s}` (expected a positive count or `all`)")),
        }
    }
}

impl std::fmt::Display for TopN {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TopN::Count(n) => write!(f, "{n}"),
            TopN::All => f.write_str("all"),
        }
    }
}

impl Serialize for TopN {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TopN::Count(n) => s.serialize_u64(*n as u64),
            TopN::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for TopN {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => n.to_string().parse().map_err(serde::de::Error::custom),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPath {
    pub path: Path,
    pub score: f64,
    pub scheme: RankingScheme,
}

/// Hops whose relation is in `top_relations`, each hop counted once.
pub fn score_frequency(path: &Path, top_relations: &[String]) -> u32 {
    let wanted: HashSet<&str> = top_relations.iter().map(String::as_str).collect();
    path.relations().filter(|r| wanted.contains(r)).count() as u32
}

/// `score_frequency / hop count`; 0 for an empty path.
pub fn score_normalized(path: &Path, top_relations: &[String]) -> f64 {
    if path.is_empty() {
        return 0.0;
    }
    f64::from(score_frequency(path, top_relations)) / path.len() as f64
}

/// Score descending, then fewer hops, then lexicographic hop sequence.
fn path_order(a: &RankedPath, b: &RankedPath) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.path.len().cmp(&b.path.len()))
        .then_with(|| a.path.hops.cmp(&b.path.hops))
}

/// Scores and sorts `paths`. The similarity scheme has no path score and
/// ranks every path 0, leaving the structural tie-breaks.
pub fn rank_paths(paths: Vec<Path>, top_relations: &[String], scheme: RankingScheme) -> Vec<RankedPath> {
    let mut ranked: Vec<RankedPath> = paths
        .into_iter()
        .map(|path| {
            let score = match scheme {
                RankingScheme::Frequency => f64::from(score_frequency(&path, top_relations)),
                RankingScheme::Normalized => score_normalized(&path, top_relations),
                RankingScheme::Similarity => 0.0,
            };
            RankedPath { path, score, scheme }
        })
        .collect();
    ranked.sort_by(path_order);
    ranked
}

/// Sorts triples by score descending, ties by item id.
pub fn rank_triples(mut triples: Vec<ScoredItem>) -> Vec<ScoredItem> {
    triples.sort_by(score_order);
    triples
}

/// The first `n` items, or all of them.
pub fn take_top<T>(mut ranked: Vec<T>, n: TopN) -> Vec<T> {
    if let TopN::Count(n) = n {
        ranked.truncate(n);
    }
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ItemKind;
    use crate::retrieval::{Hop, Strategy};
    use crate::store::Direction;

    fn path(rels: &[&str]) -> Path {
        Path {
            hops: rels
                .iter()
                .enumerate()
                .map(|(i, r)| Hop::new(format!("Q{i}"), *r, format!("Q{}", i + 1), Direction::Outgoing))
                .collect(),
            source: Strategy::EntityVecBfs,
        }
    }

    fn rels(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn frequency_examples() {
        assert_eq!(score_frequency(&path(&["r1", "r2"]), &rels(&["r1", "r2", "r5"])), 2);
        assert_eq!(score_frequency(&path(&["r1", "r2"]), &[]), 0);
        assert_eq!(score_frequency(&path(&["r1", "r1"]), &rels(&["r1"])), 2);
    }

    #[test]
    fn normalized_examples() {
        assert_eq!(score_normalized(&path(&["r1", "x", "r2", "y"]), &rels(&["r1", "r2"])), 0.5);
        assert_eq!(score_normalized(&path(&["r1"]), &rels(&["r1"])), 1.0);
        assert_eq!(score_normalized(&path(&["a", "b", "c"]), &rels(&["r1"])), 0.0);
    }

    #[test]
    fn rank_examples() {
        let a = path(&["r1", "r2"]);
        let b = path(&["x"]);
        let ranked = rank_paths(vec![b.clone(), a.clone()], &rels(&["r1", "r2"]), RankingScheme::Frequency);
        assert_eq!(ranked[0].path, a);
        assert_eq!(ranked[0].score, 2.0);
        assert_eq!(ranked[1].path, b);

        let long = path(&["x", "y", "z", "w"]);
        let short = path(&["q"]);
        let ranked = rank_paths(vec![long.clone(), short.clone()], &[], RankingScheme::Normalized);
        assert_eq!(ranked[0].path, short);
        assert!(rank_paths(vec![], &[], RankingScheme::Frequency).is_empty());
    }

    #[test]
    fn triple_ranking() {
        let item = |id: &str, score| ScoredItem {
            item_id: id.into(),
            kind: ItemKind::Triple,
            score,
        };
        let ranked = rank_triples(vec![item("a", 0.2), item("b", 0.9), item("c", 0.5)]);
        let scores: Vec<f32> = ranked.iter().map(|t| t.score).collect();
        assert_eq!(scores, [0.9, 0.5, 0.2]);
        let ranked = rank_triples(vec![item("z", 0.5), item("y", 0.5)]);
        assert_eq!(ranked[0].item_id, "y");
        assert_eq!(rank_triples(vec![item("a", 0.1)]), vec![item("a", 0.1)]);
    }

    #[test]
    fn top_n() {
        let v: Vec<u32> = (0..5).collect();
        assert_eq!(take_top(v.clone(), TopN::Count(2)), [0, 1]);
        assert_eq!(take_top(vec![7], TopN::Count(2)), [7]);
        assert_eq!(take_top(v.clone(), TopN::All), v);
        assert_eq!("all".parse::<TopN>(), Ok(TopN::All));
        assert_eq!("2".parse::<TopN>(), Ok(TopN::Count(2)));
        assert!("0".parse::<TopN>().is_err());
        let toml_value: TopN = serde_json::from_str("1").unwrap();
        assert_eq!(toml_value, TopN::Count(1));
        let text: TopN = serde_json::from_str("\"all\"").unwrap();
        assert_eq!(text, TopN::All);
        assert_eq!(serde_json::to_string(&TopN::Count(2)).unwrap(), "2");
        assert_eq!(serde_json::to_string(&TopN::All).unwrap(), "\"all\"");
    }
}
