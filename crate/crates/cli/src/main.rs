use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use deo_core::bench::{
    load_benchmark, run_benchmark, run_query, sweep, sweep_csv, BenchmarkConfig, QueryInput, QueryResolver, RunSettings,
    System, PER_QUERY_METRICS,
};
use deo_core::config::{KeyValues, ToolConfig};
use deo_core::decompose::{CachedDecomposer, ChatBackend, DecompositionCache};
use deo_core::http::{HttpChatClient, HttpEmbeddingClient};
use deo_core::index::{format_run, FlatIndex};
use deo_core::io::write_atomic;
use deo_core::optimizer::{optimize_query_embedding, DecompositionEmbeddings};
use deo_core::store::{ingest_corpus, load_texts, EmbeddingBackend, EmbeddingStore, IngestOptions, StoreFormat, TextRecord};
use deo_core::trajectory::{corpus_basis, export_trajectory, render_svg, SvgStyle};
use deo_core::Error;

#[derive(Parser)]
#[command(name = "deo", version, about = "Negation-aware retrieval by optimizing query embeddings")]
struct Cli {
    /// Never contact the chat or embedding endpoints; cache misses are errors
    #[arg(long, global = true)]
    offline: bool,
    /// Optimizer weights preset
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Text,
    Multimodal,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose queries into positive and negative sub-queries
    Decompose {
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSONL of {"id", "text"}
        #[arg(long)]
        queries: PathBuf,
        /// Decomposition cache to read and extend
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Embed a documents file into an embedding store
    Ingest {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        docs: PathBuf,
        /// Output store; `.bin` selects the binary format
        #[arg(long)]
        out: PathBuf,
        /// Keep embeddings already present in the output store
        #[arg(long)]
        resume: bool,
    },
    /// Validate a store and report its shape
    Index {
        #[arg(long)]
        store: PathBuf,
        /// Also write a copy in another format
        #[arg(long)]
        convert: Option<PathBuf>,
    },
    /// Rank the corpus for a query and print TREC run lines
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "queries", required_unless_present = "queries")]
        query: Option<String>,
        /// JSONL of {"id", "text"}
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value = "q0")]
        query_id: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Decompose and optimize the query embedding before searching
        #[arg(long)]
        deo: bool,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Optimize one query embedding and write it with its trace
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value = "q0")]
        query_id: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a benchmark config and write the report and run files
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "eval-out")]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run DEO over a λ / step-count grid and write one CSV row per point
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// CSV destination; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for one JSON report per grid point
        #[arg(long)]
        reports: Option<PathBuf>,
    },
    /// Export a query's optimization path in PCA space as CSV, JSON and SVG
    Trajectory {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        query_id: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

const USAGE: u8 = 2;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Transport(_) => 3,
        Error::Config(_) => USAGE,
        _ => 1,
    }
}

fn report_error(kind: &str, code: u8, message: &str) {
    let line = json!({ "error": kind, "exit": code, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            report_error("UsageError", USAGE, &e.kind().to_string());
            return ExitCode::from(USAGE);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            report_error(e.kind(), code, &e.to_string());
            ExitCode::from(code)
        }
    }
}

impl Cli {
    fn overrides(&self, steps: Option<usize>) -> Vec<(&'static str, String)> {
        let mut o = Vec::new();
        if self.offline {
            o.push(("offline", "true".to_string()));
        }
        if let Some(p) = self.preset {
            o.push(("preset", preset_name(p).to_string()));
        }
        if let Some(s) = steps {
            o.push(("steps", s.to_string()));
        }
        o
    }

    fn tool_config(&self, path: Option<&Path>) -> deo_core::Result<ToolConfig> {
        let mut kv = match path {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::empty(),
        };
        if let Some(p) = self.preset {
            kv.set("preset", preset_name(p));
        }
        ToolConfig::from_kv(kv)
    }

    fn bench_config(&self, path: &Path, steps: Option<usize>) -> deo_core::Result<BenchmarkConfig> {
        BenchmarkConfig::load(path, &self.overrides(steps))
    }
}

fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Text => "text",
        Preset::Multimodal => "multimodal",
    }
}

/// HTTP backends unless running offline.
struct Backends {
    chat: Option<HttpChatClient>,
    embed: Option<HttpEmbeddingClient>,
}

impl Backends {
    fn new(tool: &ToolConfig, offline: bool) -> Self {
        if offline {
            return Self { chat: None, embed: None };
        }
        Self {
            chat: Some(HttpChatClient::from_config(tool)),
            embed: Some(HttpEmbeddingClient::from_config(tool)),
        }
    }

    fn chat(&self) -> Option<&dyn ChatBackend> {
        self.chat.as_ref().map(|c| c as &dyn ChatBackend)
    }

    fn embed(&self) -> Option<&dyn EmbeddingBackend> {
        self.embed.as_ref().map(|c| c as &dyn EmbeddingBackend)
    }
}

fn print(text: &str) -> deo_core::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        })
}

fn run(cli: &Cli) -> deo_core::Result<()> {
    match &cli.command {
        Command::Decompose { config, queries, cache } => {
            let tool = cli.tool_config(config.as_deref())?;
            let backends = Backends::new(&tool, cli.offline);
            let cache_path = cache.clone().unwrap_or_else(|| tool.decomposition_cache_path());
            let loaded = DecompositionCache::load(&cache_path, tool.temperature)?;
            let decomposer = CachedDecomposer::new(backends.chat(), tool.decomposer(), loaded);
            let pairs: Vec<(String, String)> = load_texts(queries)?.into_iter().map(|q| (q.id, q.text)).collect();
            let results = decomposer
                .decompose_all(&pairs, tool.max_concurrency)
                .into_iter()
                .collect::<deo_core::Result<Vec<_>>>()?;
            let fetched = decomposer.network_calls();
            if fetched > 0 {
                decomposer.into_cache().save(&cache_path)?;
            }
            let fallbacks = results.iter().filter(|d| d.provenance.fallback).count();
            print(&format!(
                "{}\n",
                json!({
                    "queries": results.len(),
                    "cached": results.len() - fetched,
                    "fetched": fetched,
                    "fallbacks": fallbacks,
                    "cache": cache_path,
                })
            ))
        }
        Command::Ingest { config, docs, out, resume } => {
            let tool = cli.tool_config(config.as_deref())?;
            if cli.offline {
                return Err(Error::Config("ingest needs the embeddings endpoint and cannot run with --offline".into()));
            }
            let client = HttpEmbeddingClient::from_config(&tool);
            let opts = IngestOptions {
                batch_size: tool.embed_batch_size,
                concurrency: tool.max_concurrency,
                resume: *resume,
            };
            let report = ingest_corpus(docs, &client, out, &opts)?;
            print(&format!("{}\n", serde_json::to_string(&report).expect("report serializes")))
        }
        Command::Index { store, convert } => {
            let s = EmbeddingStore::load(store)?;
            let index = FlatIndex::build(&s)?;
            if let Some(dest) = convert {
                s.save_as(dest, StoreFormat::from_path(dest))?;
            }
            print(&format!(
                "{}\n",
                json!({ "records": index.len(), "dim": index.dim(), "model": s.model(), "path": store })
            ))
        }
        Command::Search {
            config,
            query,
            queries,
            query_id,
            k,
            deo,
            steps,
        } => {
            let cfg = cli.bench_config(config, *steps)?;
            let texts = match (query, queries) {
                (Some(text), _) => vec![TextRecord {
                    id: query_id.clone(),
                    text: text.clone(),
                }],
                (None, Some(path)) => load_texts(path)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            if *k == 0 {
                return Err(Error::Config("--k must be at least 1".into()));
            }
            let store = EmbeddingStore::load(&cfg.corpus)?;
            let index = FlatIndex::build(&store)?;
            let backends = Backends::new(&cfg.tool, cfg.offline);
            let mut resolver = QueryResolver::open(&cfg, index.dim(), backends.chat(), backends.embed())?;
            let (system, inputs) = if *deo {
                (System::Deo, resolver.resolve(&texts)?)
            } else {
                let originals: Vec<&str> = texts.iter().map(|t| t.text.as_str()).collect();
                let vectors = resolver.embeddings(&originals)?;
                let inputs = texts
                    .iter()
                    .zip(vectors)
                    .map(|(t, v)| {
                        Ok(QueryInput {
                            id: t.id.clone(),
                            text: t.text.clone(),
                            decomposition: None,
                            inputs: DecompositionEmbeddings::new(v, Vec::new(), Vec::new())?,
                        })
                    })
                    .collect::<deo_core::Result<Vec<_>>>()?;
                (System::Baseline, inputs)
            };
            resolver.persist()?;
            let run = RunSettings { depth: *k, ..cfg.run };
            let mut out = String::new();
            for q in &inputs {
                let result = run_query(&index, q, system, &cfg.tool.optimizer, &run)?;
                out.push_str(&format_run(&q.id, &result.list, system.name()));
            }
            print(&out)
        }
        Command::Optimize {
            config,
            query,
            query_id,
            steps,
            out,
        } => {
            let cfg = cli.bench_config(config, *steps)?;
            let store = EmbeddingStore::load(&cfg.corpus)?;
            let backends = Backends::new(&cfg.tool, cfg.offline);
            let mut resolver = QueryResolver::open(&cfg, store.dim(), backends.chat(), backends.embed())?;
            let q = resolver
                .resolve(&[TextRecord {
                    id: query_id.clone(),
                    text: query.clone(),
                }])?
                .remove(0);
            resolver.persist()?;
            let opt = cfg.tool.optimizer;
            let (e_u, trace) = optimize_query_embedding(&q.inputs, &opt)?;
            let decomposition = q.decomposition.as_ref().expect("resolved queries carry a decomposition");
            let doc = json!({
                "query_id": q.id,
                "query": q.text,
                "positives": decomposition.positives,
                "negatives": decomposition.negatives,
                "optimizer": opt,
                "original": trace.initial(),
                "optimized": e_u,
                "initial_loss": trace.losses[0],
                "final_loss": trace.losses[trace.losses.len() - 1],
            });
            let mut body = serde_json::to_string_pretty(&doc).expect("json");
            body.push('\n');
            write_atomic(&out.join("embedding.json"), body.as_bytes())?;
            let mut csv = String::from("step,loss,norm\n");
            for (i, (s, l)) in trace.snapshots.iter().zip(&trace.losses).enumerate() {
                csv.push_str(&format!("{i},{l},{}\n", deo_core::vector::norm(s)));
            }
            write_atomic(&out.join("trace.csv"), csv.as_bytes())?;
            print(&format!(
                "{}\n",
                json!({ "query_id": q.id, "steps": opt.steps, "initial_loss": trace.losses[0], "final_loss": trace.losses[trace.losses.len() - 1], "out": out })
            ))
        }
        Command::Eval { config, out, steps } => {
            let cfg = cli.bench_config(config, *steps)?;
            let backends = Backends::new(&cfg.tool, cfg.offline);
            let data = load_benchmark(&cfg, backends.chat(), backends.embed())?;
            let eval = run_benchmark(&data, &cfg.systems, &cfg.tool.optimizer, &cfg.run, &cfg.config_hash)?;
            eval.write(out)?;
            let mut table = format!("{:<10}", "system");
            for m in PER_QUERY_METRICS {
                table.push_str(&format!(" {m:>9}"));
            }
            table.push('\n');
            for s in &eval.report.systems {
                table.push_str(&format!("{:<10}", s.system.name()));
                for m in PER_QUERY_METRICS {
                    match s.means.get(m) {
                        Some(v) => table.push_str(&format!(" {v:>9.4}")),
                        None => table.push_str(&format!(" {:>9}", "-")),
                    }
                }
                table.push('\n');
            }
            print(&table)
        }
        Command::Sweep { config, out, reports } => {
            let cfg = cli.bench_config(config, None)?;
            let backends = Backends::new(&cfg.tool, cfg.offline);
            let data = load_benchmark(&cfg, backends.chat(), backends.embed())?;
            let points = sweep(
                &data,
                &cfg.tool.optimizer,
                &cfg.sweep_lambdas,
                &cfg.sweep_steps,
                &cfg.run,
                &cfg.config_hash,
            )?;
            if let Some(dir) = reports {
                for (i, p) in points.iter().enumerate() {
                    write_atomic(&dir.join(format!("point_{i:03}.json")), p.report.to_json().as_bytes())?;
                }
            }
            let csv = sweep_csv(&points);
            match out {
                Some(path) => write_atomic(path, csv.as_bytes()),
                None => print(&csv),
            }
        }
        Command::Trajectory {
            config,
            query_id,
            steps,
            out,
        } => {
            let cfg = cli.bench_config(config, *steps)?;
            let backends = Backends::new(&cfg.tool, cfg.offline);
            let data = load_benchmark(&cfg, backends.chat(), backends.embed())?;
            let q = data
                .query(query_id)
                .ok_or_else(|| Error::Mismatch(format!("query {query_id} is not in the query set")))?;
            let row = data.qrels.get(query_id).ok_or_else(|| Error::MissingGold(query_id.clone()))?;
            let opt = cfg.tool.optimizer;
            let (_, trace) = optimize_query_embedding(&q.inputs, &opt)?;
            let inputs = if opt.normalize_inputs { q.inputs.normalized()? } else { q.inputs.clone() };
            let basis = corpus_basis(&data.index)?;
            let export = export_trajectory(query_id, &trace, &inputs, &data.index, row, &basis)?;
            write_atomic(&out.join(format!("{query_id}.csv")), export.to_csv().as_bytes())?;
            write_atomic(&out.join(format!("{query_id}.json")), export.to_json().as_bytes())?;
            write_atomic(
                &out.join(format!("{query_id}.svg")),
                render_svg(&export, &SvgStyle::default()).as_bytes(),
            )?;
            let ranks: Vec<_> = export
                .gold
                .iter()
                .map(|g| json!({ "doc_id": g.doc_id, "baseline_rank": g.baseline_rank, "final_rank": g.final_rank }))
                .collect();
            print(&format!(
                "{}\n",
                json!({ "query_id": query_id, "steps": opt.steps, "gold": ranks, "ndcg@10": [export.baseline_ndcg, export.final_ndcg] })
            ))
        }
    }
}
