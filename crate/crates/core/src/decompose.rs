//! Query decomposition into positive and negative sub-queries via a chat model.
//!
//! Model output is parsed leniently (prose and code fences are tolerated). A response
//! that cannot be parsed triggers one retry with a format reminder; if that fails too
//! the query decomposes to itself with no negatives.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::parallel::bounded_map;

pub const DEFAULT_MODEL: &str = "gpt-4.1-nano";
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_MAX_SUBQUERIES: usize = 8;

const FORMAT_REMINDER: &str = "Your previous reply could not be parsed. Reply with exactly one JSON object of the form \
{\"positives\": [\"...\"], \"negatives\": [\"...\"]} and no other text.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// Body of a chat-completion request, serialized as-is onto the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

/// Anything that can answer a chat-completion request with the assistant's text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposerSettings {
    pub model: String,
    pub temperature: f64,
    pub max_subqueries: usize,
}

impl Default for DecomposerSettings {
    fn default() -> Self {
        Self {
            model: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_subqueries: DEFAULT_MAX_SUBQUERIES,
        }
    }
}

/// Positive and negative sub-query texts as returned by the model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQueries {
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

impl SubQueries {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("string lists always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub latency_ms: u64,
    pub retries: u32,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedQuery {
    pub query_id: String,
    pub original: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub provenance: Provenance,
}

impl DecomposedQuery {
    /// Identity decomposition used when the model output is unusable.
    pub fn fallback(query_id: &str, query: &str, model: &str) -> Self {
        Self {
            query_id: query_id.to_string(),
            original: query.to_string(),
            positives: vec![query.to_string()],
            negatives: Vec::new(),
            provenance: Provenance {
                model: model.to_string(),
                latency_ms: 0,
                retries: 0,
                fallback: true,
            },
        }
    }
}

pub fn build_decomposition_prompt(query: &str) -> Result<String> {
    if query.trim().is_empty() {
        return Err(Error::EmptyQuery);
    }
    Ok(format!(
        r#"You rewrite search queries for a dense retrieval system that must respect negation and exclusion.

Given a user query:
1. Identify what the user wants to find (inclusion intent). Expand it into specific, self-contained positive sub-queries that describe the wanted content in more detail.
2. Identify what the user wants to avoid, signalled by words such as "not", "without", "except", "excluding" or "do not mention" (exclusion intent). Expand it into negative sub-queries describing the unwanted content. Use an empty list if nothing is excluded.
3. Write at most {max} sub-queries per list. Each sub-query is a short descriptive phrase, not a question.
4. Respond with a single JSON object {{"positives": [...], "negatives": [...]}} and nothing else.

Example
Query: What are the characteristics and influences of the cultural center Bayreuth (excluding its identity as Bayreuth) and the art form Photomontage (excluding examples of photomontage)?
Answer: {{"positives": ["cultural significance and role of Bayreuth as a cultural hub", "historical and social influences of Bayreuth on regional culture", "architectural and infrastructural features of Bayreuth's cultural institutions"], "negatives": ["specific examples of photomontage artworks", "biographical details of artists involved in photomontage", "specific events or exhibitions featuring photomontage", "any mention of Bayreuth's identity or geographic location"]}}

Query: {query}
Answer:"#,
        max = DEFAULT_MAX_SUBQUERIES,
        query = query
    ))
}

/// Finds the first balanced `{...}` span that parses as JSON.
fn first_json_object(text: &str) -> Option<Value> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        if let Ok(v @ Value::Object(_)) = serde_json::from_str(&text[open..=i]) {
                            return Some(v);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}

fn clean_list(value: Option<&Value>, key: &str, max: usize) -> Result<Vec<String>> {
    let items = match value {
        None | Some(Value::Null) => return Ok(Vec::new()),
        Some(Value::Array(items)) => items,
        Some(_) => return Err(Error::Parse(format!("\"{key}\" is not a list"))),
    };
    let mut out: Vec<String> = Vec::new();
    for item in items {
        let s = item
            .as_str()
            .ok_or_else(|| Error::Parse(format!("\"{key}\" contains a non-string entry")))?
            .trim();
        if !s.is_empty() && !out.iter().any(|x| x == s) {
            out.push(s.to_string());
        }
    }
    out.truncate(max);
    Ok(out)
}

pub fn parse_decomposition_response(text: &str, max_subqueries: usize) -> Result<SubQueries> {
    let obj = first_json_object(text).ok_or_else(|| Error::Parse("no JSON object found".into()))?;
    if obj.get("positives").is_none() && obj.get("negatives").is_none() {
        return Err(Error::Parse("object has neither \"positives\" nor \"negatives\"".into()));
    }
    let parsed = SubQueries {
        positives: clean_list(obj.get("positives"), "positives", max_subqueries)?,
        negatives: clean_list(obj.get("negatives"), "negatives", max_subqueries)?,
    };
    if parsed.positives.is_empty() && parsed.negatives.is_empty() {
        return Err(Error::Parse("both sub-query lists are empty".into()));
    }
    Ok(parsed)
}

/// Asks the model once, retries once on unparseable output, then falls back.
///
/// Only transport failures surface as errors.
pub fn decompose(query_id: &str, query: &str, client: &dyn ChatBackend, settings: &DecomposerSettings) -> Result<DecomposedQuery> {
    let prompt = build_decomposition_prompt(query)?;
    let mut request = ChatRequest {
        model: settings.model.clone(),
        temperature: settings.temperature,
        messages: vec![ChatMessage {
            role: Role::User,
            content: prompt,
        }],
    };
    let started = Instant::now();
    let mut retries = 0;
    loop {
        let reply = client.complete(&request)?;
        match parse_decomposition_response(&reply, settings.max_subqueries) {
            Ok(sub) => {
                return Ok(DecomposedQuery {
                    query_id: query_id.to_string(),
                    original: query.to_string(),
                    positives: sub.positives,
                    negatives: sub.negatives,
                    provenance: Provenance {
                        model: settings.model.clone(),
                        latency_ms: started.elapsed().as_millis() as u64,
                        retries,
                        fallback: false,
                    },
                })
            }
            Err(e) if retries == 0 => {
                log::debug!("query {query_id}: {e}; retrying with a format reminder");
                retries = 1;
                request.messages.push(ChatMessage {
                    role: Role::Assistant,
                    content: reply,
                });
                request.messages.push(ChatMessage {
                    role: Role::User,
                    content: FORMAT_REMINDER.to_string(),
                });
            }
            Err(e) => {
                log::warn!("query {query_id}: {e}; falling back to the original query");
                let mut fb = DecomposedQuery::fallback(query_id, query, &settings.model);
                fb.provenance.retries = retries;
                fb.provenance.latency_ms = started.elapsed().as_millis() as u64;
                return Ok(fb);
            }
        }
    }
}

pub fn cache_key(query: &str, model: &str, temperature: f64) -> String {
    let mut h = Sha256::new();
    h.update(query.as_bytes());
    h.update([0x1f]);
    h.update(model.as_bytes());
    h.update([0x1f]);
    h.update(format!("{temperature}").as_bytes());
    hex::encode(h.finalize())
}

/// One line of the decomposition cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub query_id: String,
    pub query: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl CacheRecord {
    pub fn from_decomposition(d: &DecomposedQuery, temperature: f64) -> Self {
        Self {
            query_id: d.query_id.clone(),
            query: d.original.clone(),
            positives: d.positives.clone(),
            negatives: d.negatives.clone(),
            model: d.provenance.model.clone(),
            temperature: Some(temperature),
        }
    }

    fn into_decomposition(self, query_id: &str) -> DecomposedQuery {
        DecomposedQuery {
            query_id: query_id.to_string(),
            original: self.query,
            positives: self.positives,
            negatives: self.negatives,
            provenance: Provenance {
                model: self.model,
                latency_ms: 0,
                retries: 0,
                fallback: false,
            },
        }
    }
}

/// JSON Lines cache keyed by `(query, model, temperature)`.
///
/// Records without a temperature are keyed under the temperature given at load time.
#[derive(Debug, Default)]
pub struct DecompositionCache {
    records: Vec<CacheRecord>,
    by_key: HashMap<String, usize>,
    default_temperature: f64,
}

impl DecompositionCache {
    pub fn new(default_temperature: f64) -> Self {
        Self {
            default_temperature,
            ..Self::default()
        }
    }

    pub fn load(path: &Path, default_temperature: f64) -> Result<Self> {
        let mut cache = Self::new(default_temperature);
        if !path.exists() {
            return Ok(cache);
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheRecord =
                serde_json::from_str(line).map_err(|e| Error::format(path, Some(i + 1), e.to_string()))?;
            cache.insert(rec);
        }
        Ok(cache)
    }

    fn key_of(&self, rec: &CacheRecord) -> String {
        cache_key(&rec.query, &rec.model, rec.temperature.unwrap_or(self.default_temperature))
    }

    /// Later records replace earlier ones with the same key.
    pub fn insert(&mut self, rec: CacheRecord) {
        let key = self.key_of(&rec);
        match self.by_key.get(&key) {
            Some(&i) => self.records[i] = rec,
            None => {
                self.by_key.insert(key, self.records.len());
                self.records.push(rec);
            }
        }
    }

    pub fn get(&self, query: &str, model: &str, temperature: f64) -> Option<&CacheRecord> {
        self.by_key.get(&cache_key(query, model, temperature)).map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[CacheRecord] {
        &self.records
    }

    /// Writes the whole cache to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for rec in &self.records {
            serde_json::to_writer(&mut buf, rec).expect("cache records serialize");
            buf.push(b'\n');
        }
        write_atomic(path, &buf)
    }
}

/// Decomposer with a cache in front of the chat endpoint.
pub struct CachedDecomposer<'a> {
    client: Option<&'a dyn ChatBackend>,
    settings: DecomposerSettings,
    cache: Mutex<DecompositionCache>,
    calls: AtomicUsize,
}

impl<'a> CachedDecomposer<'a> {
    /// `client = None` is offline mode: cache misses become `MissingDecomposition`.
    pub fn new(client: Option<&'a dyn ChatBackend>, settings: DecomposerSettings, cache: DecompositionCache) -> Self {
        Self {
            client,
            settings,
            cache: Mutex::new(cache),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn settings(&self) -> &DecomposerSettings {
        &self.settings
    }

    /// Number of decompositions that went to the model.
    pub fn network_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn decompose(&self, query_id: &str, query: &str) -> Result<DecomposedQuery> {
        let (model, temp) = (&self.settings.model, self.settings.temperature);
        if let Some(rec) = self.cache.lock().expect("cache lock").get(query, model, temp) {
            return Ok(rec.clone().into_decomposition(query_id));
        }
        let client = self.client.ok_or_else(|| Error::MissingDecomposition(query_id.to_string()))?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let d = decompose(query_id, query, client, &self.settings)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(CacheRecord::from_decomposition(&d, temp));
        Ok(d)
    }

    /// Decomposes `(id, text)` pairs with at most `concurrency` requests in flight.
    pub fn decompose_all(&self, queries: &[(String, String)], concurrency: usize) -> Vec<Result<DecomposedQuery>> {
        bounded_map(queries, concurrency, |_, (id, text)| self.decompose(id, text))
    }

    pub fn into_cache(self) -> DecompositionCache {
        self.cache.into_inner().expect("cache lock")
    }
}
