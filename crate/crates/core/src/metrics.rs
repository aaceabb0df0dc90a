//! Ranking metrics with binary gains and TREC qrels handling.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::RankedList;
use crate::io::read_to_string;

/// Judgments for one query: doc id → graded relevance. Grades ≥ 1 count as relevant.
pub type Judgments = BTreeMap<String, u32>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    rows: BTreeMap<String, Judgments>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, relevance: u32) {
        self.rows
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), relevance);
    }

    pub fn get(&self, query_id: &str) -> Option<&Judgments> {
        self.rows.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Parses whitespace-separated `query_id iteration doc_id relevance` lines.
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut q = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [qid, _iter, doc, rel] = fields[..] else {
                return Err(Error::format(path, Some(i + 1), format!("expected 4 fields, found {}", fields.len())));
            };
            let rel: i64 = rel
                .parse()
                .map_err(|_| Error::format(path, Some(i + 1), format!("relevance {rel:?} is not an integer")))?;
            q.insert(qid, doc, rel.max(0) as u32);
        }
        Ok(q)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_to_string(path)?)
    }

    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (qid, row) in &self.rows {
            for (doc, rel) in row {
                out.push_str(&format!("{qid} 0 {doc} {rel}\n"));
            }
        }
        out
    }
}

pub fn relevant_set(row: &Judgments) -> HashSet<&str> {
    row.iter().filter(|(_, &r)| r >= 1).map(|(d, _)| d.as_str()).collect()
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// nDCG@k with gain 1 for relevant documents and `1/log2(rank+1)` discounting.
///
/// A query with no relevant documents scores 0.
pub fn ndcg_at_k(ranking: &RankedList, row: &Judgments, k: usize) -> f64 {
    let rel = relevant_set(row);
    if rel.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = ranking
        .ids()
        .take(k)
        .enumerate()
        .filter(|(_, id)| rel.contains(id))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let ideal: f64 = (1..=rel.len().min(k)).map(discount).sum();
    dcg / ideal
}

/// Average precision over ranks ≤ k, normalized by `min(|relevant|, k)`.
pub fn map_at_k(ranking: &RankedList, row: &Judgments, k: usize) -> f64 {
    let rel = relevant_set(row);
    if rel.is_empty() || k == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, id) in ranking.ids().take(k).enumerate() {
        if rel.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / rel.len().min(k) as f64
}

pub fn recall_at_k(ranking: &RankedList, row: &Judgments, k: usize) -> f64 {
    let rel = relevant_set(row);
    if rel.is_empty() {
        return 0.0;
    }
    let hits = ranking.ids().take(k).filter(|id| rel.contains(id)).count();
    hits as f64 / rel.len() as f64
}

/// Two queries and two documents; `doc_1` answers `query_1` and `doc_2` answers `query_2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseInstance {
    #[serde(rename = "q1")]
    pub query_1: String,
    #[serde(rename = "q2")]
    pub query_2: String,
    #[serde(rename = "d1")]
    pub doc_1: String,
    #[serde(rename = "d2")]
    pub doc_2: String,
}

impl PairwiseInstance {
    pub fn validate(&self) -> Result<()> {
        if self.doc_1 == self.doc_2 {
            return Err(Error::Mismatch(format!("pairwise instance uses doc {} twice", self.doc_1)));
        }
        Ok(())
    }
}

/// Fraction of instances where both queries score their own document strictly higher
/// than the other one. Ties count as failures.
pub fn pairwise_score<F>(instances: &[PairwiseInstance], mut scorer: F) -> f64
where
    F: FnMut(&str, &str) -> f64,
{
    if instances.is_empty() {
        return 0.0;
    }
    let correct = instances
        .iter()
        .filter(|p| {
            let first = scorer(&p.query_1, &p.doc_1) > scorer(&p.query_1, &p.doc_2);
            let second = scorer(&p.query_2, &p.doc_2) > scorer(&p.query_2, &p.doc_1);
            first && second
        })
        .count();
    correct as f64 / instances.len() as f64
}
