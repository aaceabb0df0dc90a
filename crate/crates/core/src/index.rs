//! Exact cosine top-k search and the decomposition-only fusion baselines.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::EmbeddingStore;
use crate::vector::{check_dim, dot, l2_normalize, mean, EmbeddingVector};

pub const DEFAULT_RRF_K: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Documents by descending score; equal scores ordered by ascending id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<ScoredDoc>,
}

fn ranking_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

impl RankedList {
    /// Sorts arbitrary `(id, score)` pairs into ranking order.
    pub fn from_scores(mut entries: Vec<ScoredDoc>) -> Self {
        entries.sort_by(ranking_order);
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// 1-based rank of `doc_id`, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.doc_id == doc_id).map(|i| i + 1)
    }

    pub fn truncate(&mut self, depth: usize) {
        self.entries.truncate(depth);
    }
}

/// Immutable corpus of unit-normalized vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<String>,
    unit: Vec<f64>,
    positions: HashMap<String, usize>,
}

impl FlatIndex {
    pub fn build(store: &EmbeddingStore) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::EmptyInput);
        }
        let dim = store.dim();
        let mut ids = Vec::with_capacity(store.len());
        let mut unit = Vec::with_capacity(store.len() * dim);
        let mut positions = HashMap::with_capacity(store.len());
        for (i, r) in store.records().iter().enumerate() {
            if positions.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            let u = l2_normalize(&r.vector).map_err(|e| match e {
                Error::ZeroVector(_) => Error::ZeroVector(Some(r.id.clone())),
                other => other,
            })?;
            ids.push(r.id.clone());
            unit.extend_from_slice(&u);
        }
        Ok(Self { dim, ids, unit, positions })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Unit vector of the `i`-th document.
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.unit[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.positions.get(doc_id).copied()
    }

    /// Cosine of `query` against every document, in index order.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, query.len())?;
        let q = l2_normalize(query)?;
        Ok((0..self.len()).map(|i| dot(&q, self.vector(i)).clamp(-1.0, 1.0)).collect())
    }

    /// Exact top-`k` documents by cosine similarity.
    pub fn search(&self, query: &[f64], k: usize) -> Result<RankedList> {
        let scores = self.scores(query)?;
        let mut entries: Vec<ScoredDoc> = self
            .ids
            .iter()
            .zip(scores)
            .map(|(id, score)| ScoredDoc {
                doc_id: id.clone(),
                score,
            })
            .collect();
        let k = k.min(entries.len());
        if k == 0 {
            return Ok(RankedList::default());
        }
        if k < entries.len() {
            entries.select_nth_unstable_by(k - 1, ranking_order);
            entries.truncate(k);
        }
        entries.sort_by(ranking_order);
        Ok(RankedList { entries })
    }

    /// 1-based rank `doc_id` would receive in a full ranking for `query`.
    pub fn rank_of(&self, query: &[f64], doc_id: &str) -> Result<Option<usize>> {
        let Some(pos) = self.position(doc_id) else {
            return Ok(None);
        };
        let scores = self.scores(query)?;
        let target = ScoredDoc {
            doc_id: doc_id.to_string(),
            score: scores[pos],
        };
        let ahead = self
            .ids
            .iter()
            .zip(&scores)
            .filter(|(id, &s)| {
                ranking_order(
                    &ScoredDoc {
                        doc_id: (*id).clone(),
                        score: s,
                    },
                    &target,
                ) == Ordering::Less
            })
            .count();
        Ok(Some(ahead + 1))
    }
}

/// Component-wise mean of the given embeddings.
pub fn fuse_mean<V: AsRef<[f64]>>(vectors: &[V]) -> Result<EmbeddingVector> {
    mean(vectors)
}

/// Reciprocal rank fusion: each document scores `Σ 1/(k_rrf + rank)` over the lists
/// it appears in (ranks start at 1). The result is truncated to `depth`.
pub fn rrf_fuse(lists: &[RankedList], k_rrf: usize, depth: usize) -> Result<RankedList> {
    if lists.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut terms: HashMap<&str, Vec<f64>> = HashMap::new();
    for list in lists {
        for (i, e) in list.entries.iter().enumerate() {
            terms
                .entry(e.doc_id.as_str())
                .or_default()
                .push(1.0 / (k_rrf as f64 + (i + 1) as f64));
        }
    }
    let entries = terms
        .into_iter()
        .map(|(id, mut t)| {
            // summing in sorted order makes the score independent of list order
            t.sort_by(f64::total_cmp);
            ScoredDoc {
                doc_id: id.to_string(),
                score: t.iter().sum(),
            }
        })
        .collect();
    let mut fused = RankedList::from_scores(entries);
    fused.truncate(depth);
    Ok(fused)
}

/// TREC run lines: `query_id Q0 doc_id rank score run_tag`.
pub fn format_run(query_id: &str, list: &RankedList, run_tag: &str) -> String {
    let mut out = String::new();
    for (i, e) in list.entries.iter().enumerate() {
        out.push_str(&format!("{query_id} Q0 {} {} {:.6} {run_tag}\n", e.doc_id, i + 1, e.score));
    }
    out
}
