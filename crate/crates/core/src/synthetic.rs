//! Seeded synthetic corpora with negation structure.
//!
//! Each query has an inclusion direction `a` and an exclusion direction `b`. Its
//! original embedding leans towards `b` (a negation-blind encoder), positive
//! sub-queries cluster around `a`, negative ones around `b`. The single relevant
//! document sits near `a`; distractors sit near `b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bench::{BenchmarkData, QueryInput};
use crate::error::Result;
use crate::index::FlatIndex;
use crate::metrics::Qrels;
use crate::optimizer::DecompositionEmbeddings;
use crate::store::{EmbeddingRecord, EmbeddingStore};
use crate::vector::{l2_normalize, EmbeddingVector};

#[derive(Debug, Clone, PartialEq)]
pub struct NegationCorpusSpec {
    pub queries: usize,
    pub dim: usize,
    pub distractors_per_query: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Weight of the inclusion direction in the original query embedding.
    pub inclusion_weight: f64,
    /// Weight of the exclusion direction in the original query embedding.
    pub exclusion_weight: f64,
    pub query_noise: f64,
    pub subquery_noise: f64,
    pub doc_noise: f64,
    pub seed: u64,
}

impl Default for NegationCorpusSpec {
    fn default() -> Self {
        Self {
            queries: 100,
            dim: 64,
            distractors_per_query: 4,
            positives: 3,
            negatives: 3,
            inclusion_weight: 0.5,
            exclusion_weight: 0.87,
            query_noise: 0.2,
            subquery_noise: 1.5,
            doc_noise: 0.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub store: EmbeddingStore,
    pub queries: Vec<QueryInput>,
    pub qrels: Qrels,
}

impl SyntheticCorpus {
    pub fn into_benchmark(self) -> Result<BenchmarkData> {
        let index = FlatIndex::build(&self.store)?;
        BenchmarkData::new(index, self.store.model(), self.queries, self.qrels, Vec::new())
    }
}

pub fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Uniform direction on the unit sphere.
pub fn random_unit(rng: &mut impl Rng, dim: usize) -> EmbeddingVector {
    loop {
        if let Ok(v) = l2_normalize(&gaussian(rng, dim)) {
            return v;
        }
    }
}

/// `normalize(center + σ·g/√d)` with `g` standard normal, so the noise has norm ≈ σ.
pub fn around(rng: &mut impl Rng, center: &[f64], sigma: f64) -> EmbeddingVector {
    let scale = sigma / (center.len() as f64).sqrt();
    loop {
        let v: Vec<f64> = center
            .iter()
            .zip(gaussian(rng, center.len()))
            .map(|(c, g)| c + scale * g)
            .collect();
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

pub fn negation_corpus(spec: &NegationCorpusSpec) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let docs_per_query = spec.distractors_per_query + 1;
    let mut store = EmbeddingStore::new(d, "synthetic-negation");
    let mut queries = Vec::with_capacity(spec.queries);
    let mut qrels = Qrels::new();

    for qi in 0..spec.queries {
        let a = random_unit(&mut rng, d);
        let b = random_unit(&mut rng, d);
        let mix: Vec<f64> = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| spec.inclusion_weight * x + spec.exclusion_weight * y)
            .collect();
        let original = around(&mut rng, &mix, spec.query_noise);
        let positives = (0..spec.positives).map(|_| around(&mut rng, &a, spec.subquery_noise)).collect();
        let negatives = (0..spec.negatives).map(|_| around(&mut rng, &b, spec.subquery_noise)).collect();

        let qid = format!("q{qi:03}");
        for j in 0..docs_per_query {
            let doc_id = format!("d{:04}", qi * docs_per_query + j);
            let center = if j == 0 { &a } else { &b };
            store.push(EmbeddingRecord {
                id: doc_id.clone(),
                vector: around(&mut rng, center, spec.doc_noise),
            })?;
            if j == 0 {
                qrels.insert(&qid, &doc_id, 1);
            }
        }
        queries.push(QueryInput {
            id: qid.clone(),
            text: format!("synthetic query {qi}"),
            decomposition: None,
            inputs: DecompositionEmbeddings::new(original, positives, negatives)?,
        });
    }
    Ok(SyntheticCorpus { store, queries, qrels })
}
