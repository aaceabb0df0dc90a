//! Benchmark execution: baseline, DEO and the decomposition-only ablations over a
//! shared corpus, plus λ / step-count sweeps.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{KeyValues, ToolConfig};
use crate::decompose::{CachedDecomposer, ChatBackend, DecomposedQuery, DecompositionCache};
use crate::error::{Error, Result};
use crate::index::{format_run, fuse_mean, rrf_fuse, FlatIndex, RankedList, DEFAULT_RRF_K};
use crate::io::{read_jsonl, write_atomic};
use crate::metrics::{map_at_k, ndcg_at_k, pairwise_score, recall_at_k, relevant_set, PairwiseInstance, Qrels};
use crate::optimizer::{optimize_query_embedding, DecompositionEmbeddings, OptimizationConfig};
use crate::parallel::bounded_map;
use crate::store::{embed_texts, load_texts, EmbeddingBackend, EmbeddingRecord, EmbeddingStore, TextRecord};
use crate::vector::{dot, l2_normalize, EmbeddingVector};

pub const NDCG: &str = "ndcg@10";
pub const MAP: &str = "map@100";
pub const RECALL: &str = "recall@5";
pub const PAIRWISE: &str = "pairwise";
pub const PER_QUERY_METRICS: [&str; 3] = [NDCG, MAP, RECALL];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Baseline,
    Deo,
    AvgOnly,
    RrfOnly,
}

impl System {
    pub const ALL: [System; 4] = [System::Baseline, System::Deo, System::AvgOnly, System::RrfOnly];

    pub fn name(self) -> &'static str {
        match self {
            System::Baseline => "baseline",
            System::Deo => "deo",
            System::AvgOnly => "avg_only",
            System::RrfOnly => "rrf_only",
        }
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        System::ALL
            .into_iter()
            .find(|sys| sys.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown system {s:?} (expected baseline, deo, avg_only or rrf_only)")))
    }
}

/// Retrieval depth and fusion constant shared by all systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub depth: usize,
    pub k_rrf: usize,
    pub workers: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            depth: 100,
            k_rrf: DEFAULT_RRF_K,
            workers: 4,
        }
    }
}

/// A declarative benchmark: which stores and judgments to use and how to run them.
#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub tool: ToolConfig,
    pub corpus: PathBuf,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub decompositions: PathBuf,
    pub text_embeddings: PathBuf,
    pub systems: Vec<System>,
    pub offline: bool,
    pub run: RunSettings,
    /// Sweep grid as `(λ_o, λ_p, λ_n)` triples; empty means the configured triple.
    pub sweep_lambdas: Vec<(f64, f64, f64)>,
    /// Sweep step counts; empty means the configured step count.
    pub sweep_steps: Vec<usize>,
    pub config_hash: String,
}

impl BenchmarkConfig {
    /// Loads `path`, applying `overrides` on top of the file's keys.
    pub fn load(path: &Path, overrides: &[(&str, String)]) -> Result<Self> {
        let mut kv = KeyValues::load(path)?;
        for (k, v) in overrides {
            kv.set(k, v);
        }
        Self::from_kv(kv)
    }

    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let config_hash = hex::encode(Sha256::digest(kv.canonical().as_bytes()));
        let tool = ToolConfig::take(&mut kv)?;
        let corpus = kv.require_path("corpus")?;
        let systems = match kv.take_list("systems") {
            None => System::ALL.to_vec(),
            Some(names) => names.iter().map(|n| n.parse()).collect::<Result<Vec<_>>>()?,
        };
        if systems.is_empty() {
            return Err(Error::Config("`systems` lists no system".into()));
        }
        let sweep_lambdas = kv
            .take_list("sweep_lambdas")
            .unwrap_or_default()
            .iter()
            .map(|t| parse_triple(t))
            .collect::<Result<Vec<_>>>()?;
        let sweep_steps = kv
            .take_list("sweep_steps")
            .unwrap_or_default()
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Config(format!("invalid step count {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            corpus,
            queries: kv.take_path("queries"),
            qrels: kv.take_path("qrels"),
            pairs: kv.take_path("pairs"),
            decompositions: kv.take_path("decompositions").unwrap_or_else(|| tool.decomposition_cache_path()),
            text_embeddings: kv.take_path("text_embeddings").unwrap_or_else(|| tool.text_embedding_cache_path()),
            systems,
            offline: kv.take_bool("offline")?.unwrap_or(false),
            run: RunSettings {
                depth: kv.take_parsed("depth")?.unwrap_or(100),
                k_rrf: kv.take_parsed("k_rrf")?.unwrap_or(DEFAULT_RRF_K),
                workers: tool.max_concurrency,
            },
            sweep_lambdas,
            sweep_steps,
            config_hash,
            tool,
        };
        kv.finish()?;
        if cfg.run.depth == 0 || cfg.run.k_rrf == 0 {
            return Err(Error::Config("depth and k_rrf must be positive".into()));
        }
        Ok(cfg)
    }
}

/// `λ_o:λ_p:λ_n`.
fn parse_triple(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("invalid λ triple {s:?} (expected λ_o:λ_p:λ_n)")))?;
    match parts[..] {
        [o, p, n] => Ok((o, p, n)),
        _ => Err(Error::Config(format!("invalid λ triple {s:?} (expected λ_o:λ_p:λ_n)"))),
    }
}

/// A query with its decomposition and the raw embeddings of every text involved.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryInput {
    pub id: String,
    pub text: String,
    pub decomposition: Option<DecomposedQuery>,
    pub inputs: DecompositionEmbeddings,
}

/// Turns query texts into [`QueryInput`]s through the decomposition and text-embedding caches.
pub struct QueryResolver<'a> {
    decomposer: CachedDecomposer<'a>,
    texts: EmbeddingStore,
    texts_dirty: bool,
    embed: Option<&'a dyn EmbeddingBackend>,
    batch_size: usize,
    concurrency: usize,
    decompositions_path: PathBuf,
    text_embeddings_path: PathBuf,
}

impl<'a> QueryResolver<'a> {
    /// Backends are ignored when `cfg.offline` is set.
    pub fn open(
        cfg: &BenchmarkConfig,
        corpus_dim: usize,
        chat: Option<&'a dyn ChatBackend>,
        embed: Option<&'a dyn EmbeddingBackend>,
    ) -> Result<Self> {
        let (chat, embed) = if cfg.offline { (None, None) } else { (chat, embed) };
        let cache = DecompositionCache::load(&cfg.decompositions, cfg.tool.temperature)?;
        let texts = if cfg.text_embeddings.exists() {
            let store = EmbeddingStore::load(&cfg.text_embeddings)?;
            if !store.is_empty() && store.dim() != corpus_dim {
                return Err(Error::DimensionMismatch {
                    expected: corpus_dim,
                    found: store.dim(),
                });
            }
            if store.is_empty() {
                EmbeddingStore::new(corpus_dim, store.model())
            } else {
                store
            }
        } else {
            EmbeddingStore::new(corpus_dim, embed.map(|e| e.model()).unwrap_or_default())
        };
        Ok(Self {
            decomposer: CachedDecomposer::new(chat, cfg.tool.decomposer(), cache),
            texts,
            texts_dirty: false,
            embed,
            batch_size: cfg.tool.embed_batch_size,
            concurrency: cfg.tool.max_concurrency,
            decompositions_path: cfg.decompositions.clone(),
            text_embeddings_path: cfg.text_embeddings.clone(),
        })
    }

    pub fn resolve(&mut self, queries: &[TextRecord]) -> Result<Vec<QueryInput>> {
        let pairs: Vec<(String, String)> = queries.iter().map(|q| (q.id.clone(), q.text.clone())).collect();
        let decomposed = self
            .decomposer
            .decompose_all(&pairs, self.concurrency)
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let all: Vec<&str> = decomposed
            .iter()
            .flat_map(|d| std::iter::once(&d.original).chain(&d.positives).chain(&d.negatives))
            .map(String::as_str)
            .collect();
        self.fetch_missing(&all)?;

        decomposed
            .into_iter()
            .map(|d| {
                let lookup = |t: &String| self.texts.get(t).cloned().ok_or_else(|| Error::MissingEmbedding(t.clone()));
                let inputs = DecompositionEmbeddings::new(
                    lookup(&d.original)?,
                    d.positives.iter().map(lookup).collect::<Result<_>>()?,
                    d.negatives.iter().map(lookup).collect::<Result<_>>()?,
                )?;
                Ok(QueryInput {
                    id: d.query_id.clone(),
                    text: d.original.clone(),
                    decomposition: Some(d),
                    inputs,
                })
            })
            .collect()
    }

    /// Embeddings of `texts`, served from the text store where possible.
    pub fn embeddings(&mut self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        self.fetch_missing(texts)?;
        Ok(texts.iter().map(|t| self.texts.get(t).cloned().expect("fetched")).collect())
    }

    fn fetch_missing(&mut self, texts: &[&str]) -> Result<()> {
        let mut seen = HashSet::new();
        let missing: Vec<String> = texts
            .iter()
            .filter(|t| !self.texts.contains(t) && seen.insert(**t))
            .map(|t| t.to_string())
            .collect();
        if missing.is_empty() {
            return Ok(());
        }
        let client = self.embed.ok_or_else(|| Error::MissingEmbedding(missing[0].clone()))?;
        let vectors = embed_texts(client, &missing, self.batch_size, self.concurrency)?;
        for (text, vector) in missing.into_iter().zip(vectors) {
            self.texts.push(EmbeddingRecord { id: text, vector })?;
        }
        self.texts_dirty = true;
        Ok(())
    }

    /// Writes back any cache that gained entries from the network.
    pub fn persist(self) -> Result<()> {
        if self.decomposer.network_calls() > 0 {
            self.decomposer.into_cache().save(&self.decompositions_path)?;
        }
        if self.texts_dirty {
            self.texts.save(&self.text_embeddings_path)?;
        }
        Ok(())
    }
}

/// Everything a benchmark run needs, fully resolved in memory.
#[derive(Debug, Clone)]
pub struct BenchmarkData {
    pub index: FlatIndex,
    pub corpus_model: String,
    /// Sorted by id.
    pub queries: Vec<QueryInput>,
    pub qrels: Qrels,
    pub pairs: Vec<PairwiseInstance>,
}

impl BenchmarkData {
    pub fn new(
        index: FlatIndex,
        corpus_model: &str,
        mut queries: Vec<QueryInput>,
        qrels: Qrels,
        pairs: Vec<PairwiseInstance>,
    ) -> Result<Self> {
        queries.sort_by(|a, b| a.id.cmp(&b.id));
        for w in queries.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::DuplicateId(w[0].id.clone()));
            }
        }
        for q in &queries {
            if q.inputs.dim() != index.dim() {
                return Err(Error::DimensionMismatch {
                    expected: index.dim(),
                    found: q.inputs.dim(),
                });
            }
            if let Some(row) = qrels.get(&q.id) {
                if let Some(doc) = relevant_set(row).into_iter().find(|d| index.position(d).is_none()) {
                    return Err(Error::Mismatch(format!("qrels for {} reference doc {doc} absent from the corpus", q.id)));
                }
            }
        }
        let known: HashSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
        for p in &pairs {
            p.validate()?;
            for q in [&p.query_1, &p.query_2] {
                if !known.contains(q.as_str()) {
                    return Err(Error::Mismatch(format!("pairwise instance references unknown query {q}")));
                }
            }
            for d in [&p.doc_1, &p.doc_2] {
                if index.position(d).is_none() {
                    return Err(Error::Mismatch(format!("pairwise instance references doc {d} absent from the corpus")));
                }
            }
        }
        if pairs.is_empty() && !queries.iter().any(|q| qrels.get(&q.id).is_some()) {
            return Err(Error::Mismatch("no query in the query set has relevance judgments".into()));
        }
        Ok(Self {
            index,
            corpus_model: corpus_model.to_string(),
            queries,
            qrels,
            pairs,
        })
    }

    pub fn query(&self, id: &str) -> Option<&QueryInput> {
        self.queries.binary_search_by(|q| q.id.as_str().cmp(id)).ok().map(|i| &self.queries[i])
    }
}

/// Loads stores, judgments and caches named by `cfg`, contacting the backends only for
/// cache misses (never when `cfg.offline` is set).
pub fn load_benchmark(
    cfg: &BenchmarkConfig,
    chat: Option<&dyn ChatBackend>,
    embed: Option<&dyn EmbeddingBackend>,
) -> Result<BenchmarkData> {
    let store = EmbeddingStore::load(&cfg.corpus)?;
    let index = FlatIndex::build(&store)?;
    let queries_path = cfg.queries.as_ref().ok_or_else(|| Error::Config("missing required key `queries`".into()))?;
    let texts = load_texts(queries_path)?;
    let qrels = match &cfg.qrels {
        Some(p) => Qrels::load(p)?,
        None => Qrels::new(),
    };
    let pairs = match &cfg.pairs {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let mut resolver = QueryResolver::open(cfg, index.dim(), chat, embed)?;
    let queries = resolver.resolve(&texts)?;
    resolver.persist()?;
    BenchmarkData::new(index, store.model(), queries, qrels, pairs)
}

/// What one system produced for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRun {
    pub list: RankedList,
    /// Search vector for embedding-based systems; `None` for rank fusion.
    pub vector: Option<EmbeddingVector>,
}

fn prepared(q: &QueryInput, opt: &OptimizationConfig) -> Result<DecompositionEmbeddings> {
    if opt.normalize_inputs {
        q.inputs.normalized()
    } else {
        Ok(q.inputs.clone())
    }
}

pub fn run_query(
    index: &FlatIndex,
    q: &QueryInput,
    system: System,
    opt: &OptimizationConfig,
    run: &RunSettings,
) -> Result<QueryRun> {
    let inputs = prepared(q, opt)?;
    let vector = match system {
        System::Baseline => inputs.original,
        System::Deo => optimize_query_embedding(&q.inputs, opt)?.0,
        System::AvgOnly => {
            let all: Vec<&EmbeddingVector> = std::iter::once(&inputs.original)
                .chain(&inputs.positives)
                .chain(&inputs.negatives)
                .collect();
            fuse_mean(&all)?
        }
        System::RrfOnly => {
            let subs: Vec<&EmbeddingVector> = inputs.positives.iter().chain(&inputs.negatives).collect();
            let lists = if subs.is_empty() {
                vec![index.search(&inputs.original, run.depth)?]
            } else {
                subs.iter().map(|v| index.search(v, run.depth)).collect::<Result<Vec<_>>>()?
            };
            return Ok(QueryRun {
                list: rrf_fuse(&lists, run.k_rrf, run.depth)?,
                vector: None,
            });
        }
    };
    Ok(QueryRun {
        list: index.search(&vector, run.depth)?,
        vector: Some(vector),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config_hash: String,
    pub corpus_model: String,
    pub corpus_size: usize,
    pub dim: usize,
    pub queries: usize,
    pub evaluated_queries: usize,
    pub optimizer: OptimizationConfig,
    pub depth: usize,
    pub k_rrf: usize,
    pub generated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: System,
    pub means: BTreeMap<String, f64>,
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metadata: ReportMetadata,
    pub systems: Vec<SystemReport>,
    /// Queries without any relevant document; left out of every mean.
    pub excluded_queries: Vec<String>,
}

impl MetricReport {
    pub fn system(&self, system: System) -> Option<&SystemReport> {
        self.systems.iter().find(|s| s.system == system)
    }

    pub fn mean(&self, system: System, metric: &str) -> Option<f64> {
        self.system(system)?.means.get(metric).copied()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    /// One row per (system, query) plus an `all` row per system holding the means.
    pub fn to_csv(&self) -> String {
        let with_pairs = self.systems.iter().any(|s| s.means.contains_key(PAIRWISE));
        let mut out = String::from("system,query_id");
        for m in PER_QUERY_METRICS {
            out.push(',');
            out.push_str(m);
        }
        if with_pairs {
            out.push_str(",pairwise");
        }
        out.push('\n');
        let cell = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.systems {
            let name = s.system.name();
            for (qid, values) in &s.per_query {
                let _ = write!(out, "{name},{qid}");
                for m in PER_QUERY_METRICS {
                    let _ = write!(out, ",{}", cell(values.get(m)));
                }
                if with_pairs {
                    out.push(',');
                }
                out.push('\n');
            }
            let _ = write!(out, "{name},all");
            for m in PER_QUERY_METRICS {
                let _ = write!(out, ",{}", cell(s.means.get(m)));
            }
            if with_pairs {
                let _ = write!(out, ",{}", cell(s.means.get(PAIRWISE)));
            }
            out.push('\n');
        }
        out
    }
}

/// Report plus the ranked lists behind it, per system in requested order.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub runs: Vec<(System, Vec<(String, QueryRun)>)>,
}

impl Evaluation {
    pub fn trec_run(&self, system: System) -> Option<String> {
        let (_, runs) = self.runs.iter().find(|(s, _)| *s == system)?;
        Some(runs.iter().map(|(qid, r)| format_run(qid, &r.list, system.name())).collect())
    }

    /// Writes `report.json`, `report.csv` and `runs/<system>.trec` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("report.json"), self.report.to_json().as_bytes())?;
        write_atomic(&dir.join("report.csv"), self.report.to_csv().as_bytes())?;
        for (system, _) in &self.runs {
            let run = self.trec_run(*system).expect("system present");
            write_atomic(&dir.join("runs").join(format!("{}.trec", system.name())), run.as_bytes())?;
        }
        Ok(())
    }
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set.
pub fn report_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(now)
}

#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

// no clock without a host environment
#[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
fn now() -> u64 {
    0
}

/// Runs every system on every query and assembles the report.
pub fn run_benchmark(
    data: &BenchmarkData,
    systems: &[System],
    opt: &OptimizationConfig,
    run: &RunSettings,
    config_hash: &str,
) -> Result<Evaluation> {
    opt.validate()?;
    if systems.is_empty() {
        return Err(Error::Config("no systems to run".into()));
    }
    let per_query = bounded_map(&data.queries, run.workers, |_, q| {
        systems
            .iter()
            .map(|&s| run_query(&data.index, q, s, opt, run))
            .collect::<Result<Vec<_>>>()
    });
    let per_query = per_query.into_iter().collect::<Result<Vec<_>>>()?;

    let judged: Vec<bool> = data
        .queries
        .iter()
        .map(|q| data.qrels.get(&q.id).is_some_and(|row| !relevant_set(row).is_empty()))
        .collect();
    let excluded_queries: Vec<String> = data
        .queries
        .iter()
        .zip(&judged)
        .filter(|(_, &j)| !j)
        .map(|(q, _)| q.id.clone())
        .collect();

    let mut reports = Vec::with_capacity(systems.len());
    let mut runs = Vec::with_capacity(systems.len());
    for (si, &system) in systems.iter().enumerate() {
        let mut values: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for ((q, outs), _) in data.queries.iter().zip(&per_query).zip(&judged).filter(|(_, &j)| j) {
            let row = data.qrels.get(&q.id).expect("judged query has a row");
            let list = &outs[si].list;
            let m = BTreeMap::from([
                (NDCG.to_string(), ndcg_at_k(list, row, 10)),
                (MAP.to_string(), map_at_k(list, row, 100)),
                (RECALL.to_string(), recall_at_k(list, row, 5)),
            ]);
            values.insert(q.id.clone(), m);
        }
        let mut means = BTreeMap::new();
        if !values.is_empty() {
            for metric in PER_QUERY_METRICS {
                let sum: f64 = values.values().map(|m| m[metric]).sum();
                means.insert(metric.to_string(), sum / values.len() as f64);
            }
        }
        if !data.pairs.is_empty() {
            let outcome = |qid: &str| {
                let i = data.queries.binary_search_by(|q| q.id.as_str().cmp(qid)).expect("validated query");
                &per_query[i][si]
            };
            let score = pairwise_score(&data.pairs, |qid, doc| pair_score(&data.index, outcome(qid), doc));
            means.insert(PAIRWISE.to_string(), score);
        }
        reports.push(SystemReport {
            system,
            means,
            per_query: values,
        });
        runs.push((
            system,
            data.queries
                .iter()
                .zip(&per_query)
                .map(|(q, outs)| (q.id.clone(), outs[si].clone()))
                .collect(),
        ));
    }

    let report = MetricReport {
        metadata: ReportMetadata {
            config_hash: config_hash.to_string(),
            corpus_model: data.corpus_model.clone(),
            corpus_size: data.index.len(),
            dim: data.index.dim(),
            queries: data.queries.len(),
            evaluated_queries: judged.iter().filter(|&&j| j).count(),
            optimizer: *opt,
            depth: run.depth,
            k_rrf: run.k_rrf,
            generated_at: report_timestamp(),
        },
        systems: reports,
        excluded_queries,
    };
    Ok(Evaluation { report, runs })
}

/// Cosine for embedding systems; fused score (0 when unranked) for rank fusion.
fn pair_score(index: &FlatIndex, run: &QueryRun, doc: &str) -> f64 {
    match &run.vector {
        Some(v) => {
            let i = index.position(doc).expect("validated doc");
            match l2_normalize(v) {
                Ok(u) => dot(&u, index.vector(i)),
                Err(_) => 0.0,
            }
        }
        None => run.list.entries.iter().find(|e| e.doc_id == doc).map_or(0.0, |e| e.score),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub lambda_o: f64,
    pub lambda_p: f64,
    pub lambda_n: f64,
    pub steps: usize,
    pub report: MetricReport,
}

/// Runs DEO at every `(λ_o, λ_p, λ_n) × steps` grid point on the same resolved data.
pub fn sweep(
    data: &BenchmarkData,
    base: &OptimizationConfig,
    lambdas: &[(f64, f64, f64)],
    steps: &[usize],
    run: &RunSettings,
    config_hash: &str,
) -> Result<Vec<SweepPoint>> {
    let lambdas = if lambdas.is_empty() {
        vec![(base.lambda_o, base.lambda_p, base.lambda_n)]
    } else {
        lambdas.to_vec()
    };
    let steps = if steps.is_empty() { vec![base.steps] } else { steps.to_vec() };
    let mut points = Vec::with_capacity(lambdas.len() * steps.len());
    for &(o, p, n) in &lambdas {
        for &s in &steps {
            let cfg = base.with_lambdas(p, n, o).with_steps(s);
            let report = run_benchmark(data, &[System::Deo], &cfg, run, config_hash)?.report;
            points.push(SweepPoint {
                lambda_o: o,
                lambda_p: p,
                lambda_n: n,
                steps: s,
                report,
            });
        }
    }
    Ok(points)
}

/// `lambda_o,lambda_p,lambda_n,steps,<metrics>` with one row per grid point.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let with_pairs = points.iter().any(|p| p.report.mean(System::Deo, PAIRWISE).is_some());
    let mut out = String::from("lambda_o,lambda_p,lambda_n,steps");
    for m in PER_QUERY_METRICS {
        out.push(',');
        out.push_str(m);
    }
    if with_pairs {
        out.push_str(",pairwise");
    }
    out.push('\n');
    for p in points {
        let _ = write!(out, "{},{},{},{}", p.lambda_o, p.lambda_p, p.lambda_n, p.steps);
        for m in PER_QUERY_METRICS {
            let v = p.report.mean(System::Deo, m).map(|x| x.to_string()).unwrap_or_default();
            let _ = write!(out, ",{v}");
        }
        if with_pairs {
            let v = p.report.mean(System::Deo, PAIRWISE).map(|x| x.to_string()).unwrap_or_default();
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}
