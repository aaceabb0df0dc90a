//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Values may be wrapped in double quotes.
//! Unknown keys are rejected so typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::decompose::{DecomposerSettings, DEFAULT_MAX_SUBQUERIES, DEFAULT_MODEL, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};
use crate::io::read_to_string;
use crate::optimizer::OptimizationConfig;
use crate::store::DEFAULT_BATCH_SIZE;

#[derive(Debug, Clone)]
pub struct KeyValues {
    source: PathBuf,
    base_dir: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(source: &Path, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(source, Some(i + 1), "expected `key = value`"))?;
            let key = key.trim().to_string();
            let mut value = value.trim();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = &value[1..value.len() - 1];
            }
            if entries.insert(key.clone(), (value.to_string(), i + 1)).is_some() {
                return Err(Error::format(source, Some(i + 1), format!("duplicate key `{key}`")));
            }
        }
        let base_dir = source.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self {
            source: source.to_path_buf(),
            base_dir,
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_to_string(path)?)
    }

    pub fn empty() -> Self {
        Self {
            source: PathBuf::from("<defaults>"),
            base_dir: PathBuf::new(),
            entries: BTreeMap::new(),
        }
    }

    pub fn source(&self) -> &Path {
        &self.source
    }

    /// Sorted `key = value` lines of the current entries.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, (v, _))| format!("{k} = {v}\n")).collect()
    }

    /// Sets a value unless the file already provides one.
    pub fn set_default(&mut self, key: &str, value: &str) {
        self.entries.entry(key.to_string()).or_insert((value.to_string(), 0));
    }

    /// Overrides a value, e.g. from a command-line flag.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    fn bad(&self, line: usize, msg: String) -> Error {
        Error::format(&self.source, (line > 0).then_some(line), msg)
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    pub fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| self.bad(line, format!("invalid value {v:?} for `{key}`"))),
        }
    }

    pub fn take_bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" | "on" => Ok(Some(true)),
                "false" | "no" | "0" | "off" => Ok(Some(false)),
                _ => Err(self.bad(line, format!("invalid boolean {v:?} for `{key}`"))),
            },
        }
    }

    /// Resolves a path value relative to the directory of the config file.
    pub fn take_path(&mut self, key: &str) -> Option<PathBuf> {
        self.take_str(key).map(|v| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                self.base_dir.join(p)
            }
        })
    }

    pub fn require_path(&mut self, key: &str) -> Result<PathBuf> {
        self.take_path(key)
            .ok_or_else(|| Error::Config(format!("{}: missing required key `{key}`", self.source.display())))
    }

    /// Comma- or semicolon-separated list.
    pub fn take_list(&mut self, key: &str) -> Option<Vec<String>> {
        self.take_str(key).map(|v| {
            v.split([',', ';'])
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
    }

    /// Fails if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (_, line))) => Err(Error::format(&self.source, (line > 0).then_some(line), format!("unknown key `{key}`"))),
        }
    }
}

/// Reads `preset` plus any explicit optimizer keys.
pub fn take_optimizer(kv: &mut KeyValues) -> Result<OptimizationConfig> {
    let mut cfg = match kv.take_str("preset").as_deref() {
        None | Some("text") => OptimizationConfig::text(),
        Some("multimodal") => OptimizationConfig::multimodal(),
        Some(other) => return Err(Error::Config(format!("unknown preset {other:?} (expected text or multimodal)"))),
    };
    if let Some(v) = kv.take_parsed("lambda_p")? {
        cfg.lambda_p = v;
    }
    if let Some(v) = kv.take_parsed("lambda_n")? {
        cfg.lambda_n = v;
    }
    if let Some(v) = kv.take_parsed("lambda_o")? {
        cfg.lambda_o = v;
    }
    if let Some(v) = kv.take_parsed("steps")? {
        cfg.steps = v;
    }
    if let Some(v) = kv.take_parsed("learning_rate")? {
        cfg.learning_rate = v;
    }
    if let Some(v) = kv.take_parsed("beta1")? {
        cfg.beta1 = v;
    }
    if let Some(v) = kv.take_parsed("beta2")? {
        cfg.beta2 = v;
    }
    if let Some(v) = kv.take_parsed("epsilon")? {
        cfg.epsilon = v;
    }
    if let Some(v) = kv.take_bool("normalize_inputs")? {
        cfg.normalize_inputs = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
}

impl EndpointConfig {
    pub fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty())
    }
}

/// Tool-wide settings: endpoints, optimizer defaults, limits.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolConfig {
    pub chat: EndpointConfig,
    pub temperature: f64,
    pub max_subqueries: usize,
    pub embeddings: EndpointConfig,
    pub embed_batch_size: usize,
    pub max_concurrency: usize,
    pub max_retries: u32,
    pub retry_base: Duration,
    pub timeout: Duration,
    pub cache_dir: PathBuf,
    pub optimizer: OptimizationConfig,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self::from_kv(KeyValues::empty()).expect("defaults are valid")
    }
}

impl ToolConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(KeyValues::load(path)?)
    }

    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let cfg = Self::take(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    /// Consumes the tool keys from `kv`, leaving anything else in place.
    pub fn take(kv: &mut KeyValues) -> Result<Self> {
        let chat = EndpointConfig {
            base_url: kv.take_str("chat_base_url").unwrap_or_else(|| "https://api.openai.com".into()),
            model: kv.take_str("chat_model").unwrap_or_else(|| DEFAULT_MODEL.into()),
            api_key_env: kv.take_str("chat_api_key_env").unwrap_or_else(|| "OPENAI_API_KEY".into()),
        };
        let embeddings = EndpointConfig {
            base_url: kv.take_str("embed_base_url").unwrap_or_else(|| "https://api.openai.com".into()),
            model: kv.take_str("embed_model").unwrap_or_else(|| "text-embedding-3-small".into()),
            api_key_env: kv.take_str("embed_api_key_env").unwrap_or_else(|| "OPENAI_API_KEY".into()),
        };
        let cfg = Self {
            chat,
            temperature: kv.take_parsed("temperature")?.unwrap_or(DEFAULT_TEMPERATURE),
            max_subqueries: kv.take_parsed("max_subqueries")?.unwrap_or(DEFAULT_MAX_SUBQUERIES),
            embeddings,
            embed_batch_size: kv.take_parsed("embed_batch_size")?.unwrap_or(DEFAULT_BATCH_SIZE),
            max_concurrency: kv.take_parsed("max_concurrency")?.unwrap_or(4),
            max_retries: kv.take_parsed("max_retries")?.unwrap_or(3),
            retry_base: Duration::from_millis(kv.take_parsed("retry_base_ms")?.unwrap_or(500)),
            timeout: Duration::from_secs(kv.take_parsed("timeout_secs")?.unwrap_or(60)),
            cache_dir: kv.take_path("cache_dir").unwrap_or_else(|| PathBuf::from(".deo-cache")),
            optimizer: take_optimizer(kv)?,
        };
        if cfg.embed_batch_size == 0 || cfg.max_concurrency == 0 || cfg.max_subqueries == 0 {
            return Err(Error::Config("batch size, concurrency and max_subqueries must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn decomposer(&self) -> DecomposerSettings {
        DecomposerSettings {
            model: self.chat.model.clone(),
            temperature: self.temperature,
            max_subqueries: self.max_subqueries,
        }
    }

    pub fn decomposition_cache_path(&self) -> PathBuf {
        self.cache_dir.join("decompositions.jsonl")
    }

    pub fn text_embedding_cache_path(&self) -> PathBuf {
        self.cache_dir.join("text_embeddings.jsonl")
    }
}
