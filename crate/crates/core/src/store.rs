//! Embedding stores (JSON Lines and binary) and corpus ingestion.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! b"DEOEMB1\0" | dim: u32 | count: u64 | count × (id_len: u16 | id: utf-8 | dim × f32)
//! ```

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, read_to_string, write_atomic};
use crate::parallel::bounded_map;
use crate::vector::EmbeddingVector;

pub const BINARY_MAGIC: &[u8; 8] = b"DEOEMB1\0";
pub const JSONL_FORMAT: &str = "deo-emb";
pub const DEFAULT_BATCH_SIZE: usize = 64;

/// Anything that maps texts to embeddings, one per input, in order.
pub trait EmbeddingBackend: Send + Sync {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    fn model(&self) -> &str {
        ""
    }
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for &B {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        (**self).embed_batch(texts)
    }

    fn model(&self) -> &str {
        (**self).model()
    }
}

/// Embeds `texts` in batches of `batch_size`, with up to `concurrency` batches in flight.
pub fn embed_texts(
    client: &dyn EmbeddingBackend,
    texts: &[String],
    batch_size: usize,
    concurrency: usize,
) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let batches: Vec<&[String]> = texts.chunks(batch_size.max(1)).collect();
    let results = bounded_map(&batches, concurrency, |_, batch| client.embed_batch(batch));

    let mut out = Vec::with_capacity(texts.len());
    let mut dim = None;
    for (batch, result) in batches.iter().zip(results) {
        let vectors = result?;
        if vectors.len() != batch.len() {
            return Err(Error::Transport(format!(
                "endpoint returned {} embeddings for {} inputs",
                vectors.len(),
                batch.len()
            )));
        }
        for v in vectors {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: v.len() });
            }
            out.push(EmbeddingVector::new(v)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreFormat {
    Jsonl,
    Binary,
}

impl StoreFormat {
    /// `.bin` selects the binary layout, anything else JSON Lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => StoreFormat::Binary,
            _ => StoreFormat::Jsonl,
        }
    }
}

/// An ordered, id-unique set of same-dimension embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    model: String,
    records: Vec<EmbeddingRecord>,
    by_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    format: String,
    version: u32,
    dim: usize,
    #[serde(default)]
    model: String,
}

impl EmbeddingStore {
    pub fn new(dim: usize, model: impl Into<String>) -> Self {
        Self {
            dim,
            model: model.into(),
            records: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    pub fn from_records(dim: usize, model: impl Into<String>, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut store = Self::new(dim, model);
        for r in records {
            store.push(r)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, record: EmbeddingRecord) -> Result<()> {
        if record.vector.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: record.vector.dim(),
            });
        }
        if self.by_id.contains_key(&record.id) {
            return Err(Error::DuplicateId(record.id));
        }
        self.by_id.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.by_id.get(id).map(|&i| &self.records[i].vector)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::decode_binary(path, &bytes)
        } else {
            Self::decode_jsonl(path, &read_to_string(path)?)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_as(path, StoreFormat::from_path(path))
    }

    pub fn save_as(&self, path: &Path, format: StoreFormat) -> Result<()> {
        let bytes = match format {
            StoreFormat::Jsonl => self.encode_jsonl().into_bytes(),
            StoreFormat::Binary => self.encode_binary(),
        };
        write_atomic(path, &bytes)
    }

    pub fn encode_jsonl(&self) -> String {
        let header = JsonlHeader {
            format: JSONL_FORMAT.into(),
            version: 1,
            dim: self.dim,
            model: self.model.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            let values: Vec<String> = r.vector.iter().map(|&x| format!("{}", x as f32)).collect();
            out.push_str(&format!(
                "{{\"id\":{},\"vector\":[{}]}}\n",
                serde_json::to_string(&r.id).expect("string serializes"),
                values.join(",")
            ));
        }
        out
    }

    fn decode_jsonl(path: &Path, text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            id: String,
            vector: Vec<f64>,
        }

        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::format(path, Some(1), "missing header line"))?;
        let header: JsonlHeader =
            serde_json::from_str(first).map_err(|e| Error::format(path, Some(1), format!("bad header: {e}")))?;
        if header.format != JSONL_FORMAT || header.version != 1 {
            return Err(Error::format(
                path,
                Some(1),
                format!("unsupported store format {} v{}", header.format, header.version),
            ));
        }
        let mut store = Self::new(header.dim, header.model);
        for (i, line) in lines {
            let lineno = i + 1;
            let rec: Line = serde_json::from_str(line).map_err(|e| Error::format(path, Some(lineno), e.to_string()))?;
            if rec.vector.len() != header.dim {
                return Err(Error::format(
                    path,
                    Some(lineno),
                    format!("vector has {} components, header says {}", rec.vector.len(), header.dim),
                ));
            }
            let values = rec.vector.iter().map(|&x| f64::from(x as f32)).collect();
            let vector = EmbeddingVector::new(values).map_err(|e| Error::format(path, Some(lineno), e.to_string()))?;
            store.push(EmbeddingRecord { id: rec.id, vector })?;
        }
        Ok(store)
    }

    pub fn encode_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.records.len() * (8 + 4 * self.dim));
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.id.len() as u16).to_le_bytes());
            out.extend_from_slice(r.id.as_bytes());
            for &x in r.vector.iter() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    fn decode_binary(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: BINARY_MAGIC.len(), path };
        let dim = u32::from_le_bytes(cur.take::<4>()?) as usize;
        let count = u64::from_le_bytes(cur.take::<8>()?);
        let mut store = Self::new(dim, "");
        for _ in 0..count {
            let id_len = u16::from_le_bytes(cur.take::<2>()?) as usize;
            let at = cur.pos;
            let id = std::str::from_utf8(cur.slice(id_len)?)
                .map_err(|_| cur.error(at, "id is not valid UTF-8"))?
                .to_string();
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(f64::from(f32::from_le_bytes(cur.take::<4>()?)));
            }
            let vector = EmbeddingVector::new(values).map_err(|e| cur.error(at, &e.to_string()))?;
            store.push(EmbeddingRecord { id, vector })?;
        }
        if cur.pos != bytes.len() {
            return Err(cur.error(cur.pos, "trailing bytes after last record"));
        }
        Ok(store)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn error(&self, offset: usize, msg: &str) -> Error {
        Error::format(self.path, None, format!("byte offset {offset}: {msg}"))
    }

    fn slice(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s: &'a [u8] = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error(self.pos, &format!("truncated: need {n} more bytes"))),
        }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.slice(N)?.try_into().expect("slice has length N"))
    }
}

/// One line of a documents file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

pub fn load_texts(path: &Path) -> Result<Vec<TextRecord>> {
    read_jsonl(path)
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub batch_size: usize,
    pub concurrency: usize,
    pub resume: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            concurrency: 4,
            resume: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub embedded: usize,
    pub reused: usize,
    pub skipped_duplicates: usize,
    pub dim: usize,
    pub elapsed_ms: u64,
}

/// Embeds a documents file into a store at `out_path`.
///
/// Repeated lines with identical id and text are skipped; an id reused with different
/// text is a `DuplicateId` error. With `resume`, ids already present in an existing
/// store at `out_path` are not re-embedded.
pub fn ingest_corpus(
    docs_path: &Path,
    client: &dyn EmbeddingBackend,
    out_path: &Path,
    opts: &IngestOptions,
) -> Result<IngestReport> {
    let started = Instant::now();
    let docs = load_texts(docs_path)?;

    let mut seen: HashMap<&str, &str> = HashMap::new();
    let mut unique: Vec<&TextRecord> = Vec::new();
    let mut skipped = 0;
    for d in &docs {
        match seen.get(d.id.as_str()) {
            Some(&text) if text == d.text => skipped += 1,
            Some(_) => return Err(Error::DuplicateId(d.id.clone())),
            None => {
                seen.insert(&d.id, &d.text);
                unique.push(d);
            }
        }
    }

    let existing = if opts.resume && out_path.exists() {
        Some(EmbeddingStore::load(out_path)?)
    } else {
        None
    };
    let missing: Vec<String> = unique
        .iter()
        .filter(|d| !existing.as_ref().is_some_and(|s| s.contains(&d.id)))
        .map(|d| d.text.clone())
        .collect();
    let fresh = if missing.is_empty() {
        Vec::new()
    } else {
        embed_texts(client, &missing, opts.batch_size, opts.concurrency)?
    };

    let dim = existing
        .as_ref()
        .filter(|s| !s.is_empty())
        .map(EmbeddingStore::dim)
        .or_else(|| fresh.first().map(EmbeddingVector::dim))
        .unwrap_or(0);
    let model = existing
        .as_ref()
        .map(|s| s.model().to_string())
        .filter(|m| !m.is_empty())
        .unwrap_or_else(|| client.model().to_string());
    let mut store = EmbeddingStore::new(dim, model);
    let mut fresh = fresh.into_iter();
    let mut reused = 0;
    for d in &unique {
        let vector = match existing.as_ref().and_then(|s| s.get(&d.id)) {
            Some(v) => {
                reused += 1;
                v.clone()
            }
            None => fresh.next().expect("one fresh embedding per missing doc"),
        };
        store.push(EmbeddingRecord { id: d.id.clone(), vector })?;
    }
    if let Some(old) = &existing {
        let kept: HashSet<&str> = unique.iter().map(|d| d.id.as_str()).collect();
        for r in old.records().iter().filter(|r| !kept.contains(r.id.as_str())) {
            store.push(r.clone())?;
        }
    }
    store.save(out_path)?;

    Ok(IngestReport {
        embedded: missing.len(),
        reused,
        skipped_duplicates: skipped,
        dim,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    /// Deterministic fake encoder: vector derived from the text bytes.
    struct FakeEncoder {
        dim: usize,
        calls: AtomicUsize,
        batch_sizes: Mutex<Vec<usize>>,
    }

    impl FakeEncoder {
        fn new(dim: usize) -> Self {
            Self {
                dim,
                calls: AtomicUsize::new(0),
                batch_sizes: Mutex::new(Vec::new()),
            }
        }
    }

    impl EmbeddingBackend for FakeEncoder {
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.batch_sizes.lock().unwrap().push(texts.len());
            Ok(texts
                .iter()
                .map(|t| (0..self.dim).map(|k| (t.len() + k) as f64 + 0.5).collect())
                .collect())
        }

        fn model(&self) -> &str {
            "fake"
        }
    }

    fn texts(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("text number {i}")).collect()
    }

    #[test]
    fn embed_empty_is_an_error() {
        assert!(matches!(embed_texts(&FakeEncoder::new(3), &[], 64, 1), Err(Error::EmptyBatch)));
    }

    #[test]
    fn embed_batches_and_preserves_order() {
        let enc = FakeEncoder::new(4);
        let input = texts(130);
        let out = embed_texts(&enc, &input, 64, 4).unwrap();
        assert_eq!(enc.calls.load(Ordering::SeqCst), 3);
        let mut sizes = enc.batch_sizes.lock().unwrap().clone();
        sizes.sort();
        assert_eq!(sizes, vec![2, 64, 64]);
        for (t, v) in input.iter().zip(&out) {
            assert_eq!(v[0], t.len() as f64 + 0.5);
        }
    }

    #[test]
    fn embed_detects_inconsistent_dimensions() {
        struct Ragged;
        impl EmbeddingBackend for Ragged {
            fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
                Ok(texts.iter().enumerate().map(|(i, _)| vec![1.0; 2 + i]).collect())
            }
        }
        assert!(matches!(
            embed_texts(&Ragged, &texts(2), 8, 1),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    fn rec(id: &str, v: &[f64]) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            vector: EmbeddingVector::new(v.to_vec()).unwrap(),
        }
    }

    #[test]
    fn store_rejects_duplicates_and_bad_dims() {
        let mut s = EmbeddingStore::new(2, "m");
        s.push(rec("a", &[1.0, 2.0])).unwrap();
        assert!(matches!(s.push(rec("a", &[1.0, 2.0])), Err(Error::DuplicateId(id)) if id == "a"));
        assert!(matches!(s.push(rec("b", &[1.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn empty_store_roundtrips_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let s = EmbeddingStore::new(3, "m");
        for name in ["e.jsonl", "e.bin"] {
            let p = dir.path().join(name);
            s.save(&p).unwrap();
            let back = EmbeddingStore::load(&p).unwrap();
            assert!(back.is_empty());
            assert_eq!(back.dim(), 3);
        }
        let text = std::fs::read_to_string(dir.path().join("e.jsonl")).unwrap();
        assert_eq!(text, "{\"format\":\"deo-emb\",\"version\":1,\"dim\":3,\"model\":\"m\"}\n");
        assert_eq!(std::fs::read(dir.path().join("e.bin")).unwrap().len(), 8 + 4 + 8);
    }

    #[test]
    fn jsonl_wrong_length_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(
            &p,
            "{\"format\":\"deo-emb\",\"version\":1,\"dim\":2,\"model\":\"m\"}\n{\"id\":\"a\",\"vector\":[1,2]}\n{\"id\":\"b\",\"vector\":[1,2,3]}\n",
        )
        .unwrap();
        let err = EmbeddingStore::load(&p).unwrap_err();
        assert!(matches!(err, Error::Format { line: Some(3), .. }), "{err}");
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn binary_truncation_reports_offset() {
        let s = EmbeddingStore::from_records(2, "", vec![rec("a", &[1.0, 2.0])]).unwrap();
        let bytes = s.encode_binary();
        let err = EmbeddingStore::decode_binary(Path::new("x.bin"), &bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.to_string().contains("byte offset"), "{err}");
    }

    #[test]
    fn text_and_binary_hold_identical_values() {
        let dir = tempfile::tempdir().unwrap();
        let s = EmbeddingStore::from_records(3, "m", vec![rec("a", &[0.1, -1.0 / 3.0, 1e-7]), rec("b", &[2.5, 1e20, -0.0])]).unwrap();
        s.save(&dir.path().join("s.jsonl")).unwrap();
        s.save(&dir.path().join("s.bin")).unwrap();
        let t = EmbeddingStore::load(&dir.path().join("s.jsonl")).unwrap();
        let b = EmbeddingStore::load(&dir.path().join("s.bin")).unwrap();
        assert_eq!(t.records(), b.records());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn binary_roundtrip_is_bit_exact(
            dim in 1usize..16,
            rows in prop::collection::vec(("[a-z0-9_é]{1,12}", prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 16)), 0..20)
        ) {
            let mut s = EmbeddingStore::new(dim, "");
            for (id, vals) in rows {
                if s.contains(&id) { continue; }
                let v = EmbeddingVector::from_f32(&vals[..dim]).unwrap();
                s.push(EmbeddingRecord { id, vector: v }).unwrap();
            }
            let back = EmbeddingStore::decode_binary(Path::new("p.bin"), &s.encode_binary()).unwrap();
            prop_assert_eq!(back.len(), s.len());
            for (a, b) in s.records().iter().zip(back.records()) {
                prop_assert_eq!(&a.id, &b.id);
                for (x, y) in a.vector.iter().zip(b.vector.iter()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
            let text = EmbeddingStore::decode_jsonl(Path::new("p.jsonl"), &s.encode_jsonl()).unwrap();
            prop_assert_eq!(text.records(), back.records());
        }
    }

    fn write_docs(path: &Path, docs: &[(&str, &str)]) {
        let body: String = docs
            .iter()
            .map(|(id, t)| serde_json::to_string(&TextRecord { id: id.to_string(), text: t.to_string() }).unwrap() + "\n")
            .collect();
        std::fs::write(path, body).unwrap();
    }

    #[test]
    fn ingest_happy_path() {
        let dir = tempfile::tempdir().unwrap();
        let docs = dir.path().join("docs.jsonl");
        write_docs(&docs, &[("d1", "alpha"), ("d2", "beta beta"), ("d3", "gamma")]);
        let out = dir.path().join("store.jsonl");
        let enc = FakeEncoder::new(5);
        let report = ingest_corpus(&docs, &enc, &out, &IngestOptions::default()).unwrap();
        assert_eq!(report.embedded, 3);
        assert_eq!(report.dim, 5);
        let store = EmbeddingStore::load(&out).unwrap();
        assert_eq!(store.ids().collect::<Vec<_>>(), vec!["d1", "d2", "d3"]);
        assert_eq!(store.model(), "fake");
    }

    #[test]
    fn ingest_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let docs = dir.path().join("docs.jsonl");
        let out = dir.path().join("store.jsonl");
        write_docs(&docs, &[("d1", "alpha"), ("d1", "alpha"), ("d2", "beta")]);
        let report = ingest_corpus(&docs, &FakeEncoder::new(2), &out, &IngestOptions::default()).unwrap();
        assert_eq!((report.embedded, report.skipped_duplicates), (2, 1));

        write_docs(&docs, &[("d1", "alpha"), ("d1", "something else")]);
        let err = ingest_corpus(&docs, &FakeEncoder::new(2), &out, &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "d1"));
    }

    #[test]
    fn ingest_resume_embeds_only_missing() {
        let dir = tempfile::tempdir().unwrap();
        let docs = dir.path().join("docs.jsonl");
        let out = dir.path().join("store.bin");
        write_docs(&docs, &[("d1", "a"), ("d2", "bb")]);
        let opts = IngestOptions {
            resume: true,
            batch_size: 1,
            ..IngestOptions::default()
        };
        ingest_corpus(&docs, &FakeEncoder::new(3), &out, &opts).unwrap();

        write_docs(&docs, &[("d1", "a"), ("d2", "bb"), ("d3", "ccc"), ("d4", "dddd")]);
        let enc = FakeEncoder::new(3);
        let report = ingest_corpus(&docs, &enc, &out, &opts).unwrap();
        assert_eq!(enc.calls.load(Ordering::SeqCst), 2);
        assert_eq!((report.embedded, report.reused), (2, 2));

        let enc = FakeEncoder::new(3);
        let report = ingest_corpus(&docs, &enc, &out, &opts).unwrap();
        assert_eq!(enc.calls.load(Ordering::SeqCst), 0);
        assert_eq!(report.embedded, 0);
        assert_eq!(EmbeddingStore::load(&out).unwrap().len(), 4);
    }
}
