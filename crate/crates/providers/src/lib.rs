//! Embedding and captioning providers behind a persistent cache.
//!
//! Every request goes through [`Providers`], which looks inputs up in the
//! content-addressed [`Cache`] first and only sends the misses, in batches,
//! with at most `concurrency` requests in flight. In offline mode a miss is
//! an error and no request is ever made.
//!
//! Wire format (both embedding kinds):
//! request `{"model": id, "input": [base64 image | text, ...]}`,
//! response `{"data": [{"embedding": [f64, ...]}, ...]}`.
//! Captioning adds `"prompt"` to the request and expects
//! `{"data": [{"text": "..."}, ...]}`; an entry with a `refusal` field or
//! no text is a refusal.

mod cache;
#[cfg(feature = "mock")]
pub mod mock;
mod transport;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use creadraw_core::content::{CaptionRecord, ContentError, EmbeddingSource, EmbeddingVector, Validation};

pub use cache::{content_hash, Cache, CacheEntry, CacheKind, Payload};
pub use transport::{HttpTransport, Transport, TransportError};

/// Instruction sent with every captioning request. Reconstructed from the
/// constraints of the original study: content only, under 15 words, and a
/// fixed marker for drawings that cannot be read.
pub const CAPTION_PROMPT: &str = "Describe what this drawing depicts in one short caption of fewer than 15 words. \
Describe only the content, not the drawing style or technique. \
If you cannot tell what it depicts, answer exactly: hard to interpret.";

/// Captions at or above this many words draw a warning.
pub const CAPTION_WORD_LIMIT: usize = 15;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("batch {batch} ({size} items) failed after {attempts} attempts: {source}")]
    Http {
        batch: usize,
        size: usize,
        attempts: u32,
        source: TransportError,
    },
    #[error("offline mode: {kind:?} for {hash} under model {model} is not cached")]
    Offline { kind: CacheKind, model: String, hash: String },
    #[error("empty caption")]
    EmptyCaption,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("cache I/O at {0}: {1}")]
    Cache(String, #[source] std::io::Error),
    #[error(transparent)]
    Content(#[from] ContentError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is never stored or serialised.
    pub api_key_env: Option<String>,
    pub batch_size: usize,
    pub max_retries: u32,
    pub timeout_secs: u64,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
    pub concurrency: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model_id: String::new(),
            api_key_env: None,
            batch_size: 16,
            max_retries: 3,
            timeout_secs: 60,
            backoff_ms: 500,
            concurrency: 4,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.batch_size == 0 {
            return Err(ProviderError::Config("batch_size must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(ProviderError::Config("concurrency must be at least 1".into()));
        }
        if self.model_id.is_empty() {
            return Err(ProviderError::Config("model_id is empty".into()));
        }
        Ok(())
    }

    fn api_key(&self) -> Option<String> {
        self.api_key_env.as_ref().and_then(|v| std::env::var(v).ok())
    }
}

pub struct Providers {
    cache: Cache,
    offline: bool,
    transport: Box<dyn Transport>,
    requests: AtomicUsize,
    warnings: Mutex<Vec<String>>,
}

/// One unit of work: its cache key and its wire form.
struct Item {
    hash: String,
    wire: String,
}

impl Providers {
    pub fn new(cache: Cache, offline: bool) -> Self {
        Self::with_transport(cache, offline, Box::new(HttpTransport))
    }

    pub fn with_transport(cache: Cache, offline: bool, transport: Box<dyn Transport>) -> Self {
        Self {
            cache,
            offline,
            transport,
            requests: AtomicUsize::new(0),
            warnings: Mutex::new(Vec::new()),
        }
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    /// Requests sent so far (retries included).
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Drains the warnings collected so far.
    pub fn take_warnings(&self) -> Vec<String> {
        std::mem::take(&mut *self.warnings.lock().unwrap_or_else(|p| p.into_inner()))
    }

    fn warn(&self, msg: String) {
        log::warn!("{msg}");
        self.warnings.lock().unwrap_or_else(|p| p.into_inner()).push(msg);
    }

    pub fn embed_images(&self, images: &[Vec<u8>], cfg: &ProviderConfig) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let items = images
            .iter()
            .map(|bytes| Item {
                hash: content_hash(bytes),
                wire: b64.encode(bytes),
            })
            .collect::<Vec<_>>();
        self.embed(items, CacheKind::ImageEmbedding, EmbeddingSource::Image, cfg)
    }

    pub fn embed_texts(&self, texts: &[String], cfg: &ProviderConfig) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(ProviderError::EmptyCaption);
        }
        let items = texts
            .iter()
            .map(|t| Item {
                hash: content_hash(t.as_bytes()),
                wire: t.clone(),
            })
            .collect::<Vec<_>>();
        self.embed(items, CacheKind::TextEmbedding, EmbeddingSource::Text, cfg)
    }

    /// Captions for `(drawing_id, image bytes)` pairs, in input order.
    pub fn caption_images(&self, images: &[(String, Vec<u8>)], cfg: &ProviderConfig) -> Result<Vec<CaptionRecord>, ProviderError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let items = images
            .iter()
            .map(|(_, bytes)| Item {
                hash: content_hash(bytes),
                wire: b64.encode(bytes),
            })
            .collect::<Vec<_>>();
        let texts = self.resolve(&items, CacheKind::Caption, cfg, |data, n| {
            let mut out = Vec::with_capacity(n);
            for d in data {
                let refused = d.get("refusal").is_some_and(|r| !r.is_null());
                let text = d.get("text").and_then(Value::as_str).filter(|t| !t.trim().is_empty());
                out.push(match (refused, text) {
                    (false, Some(t)) => Some(Payload::Caption(t.trim().to_string())),
                    _ => None,
                });
            }
            Ok(out)
        })?;
        Ok(images
            .iter()
            .zip(texts)
            .map(|((id, _), payload)| match payload {
                Some(Payload::Caption(text)) => {
                    let words = text.split_whitespace().count();
                    if words >= CAPTION_WORD_LIMIT {
                        self.warn(format!("caption for {id} has {words} words (limit {CAPTION_WORD_LIMIT}): {text:?}"));
                    }
                    CaptionRecord::new(id.clone(), text)
                }
                _ => {
                    self.warn(format!("captioning refused for {id}"));
                    let mut rec = CaptionRecord::new(id.clone(), "");
                    rec.validated = Some(Validation::Incorrect);
                    rec
                }
            })
            .collect())
    }

    fn embed(
        &self,
        items: Vec<Item>,
        kind: CacheKind,
        source: EmbeddingSource,
        cfg: &ProviderConfig,
    ) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let payloads = self.resolve(&items, kind, cfg, |data, n| {
            let mut out = Vec::with_capacity(n);
            for d in data {
                let v = d
                    .get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| ProviderError::BadResponse("entry without an embedding array".into()))?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| ProviderError::BadResponse("non-numeric embedding value".into())))
                    .collect::<Result<Vec<f64>, _>>()?;
                out.push(Some(Payload::Embedding(v)));
            }
            Ok(out)
        })?;
        let mut dim = None;
        payloads
            .into_iter()
            .map(|p| {
                let Some(Payload::Embedding(v)) = p else {
                    return Err(ProviderError::BadResponse(format!("{kind:?} entry holds no embedding")));
                };
                match dim {
                    None => dim = Some(v.len()),
                    Some(d) if d != v.len() => return Err(ProviderError::DimMismatch { expected: d, got: v.len() }),
                    _ => {}
                }
                Ok(EmbeddingVector::new(v, source, cfg.model_id.clone())?)
            })
            .collect()
    }

    /// Cache-first lookup. Misses (deduplicated by hash) are fetched in
    /// batches; `parse` turns a response's `data` array into payloads, with
    /// `None` for entries that must not be cached (refusals).
    fn resolve<F>(&self, items: &[Item], kind: CacheKind, cfg: &ProviderConfig, parse: F) -> Result<Vec<Option<Payload>>, ProviderError>
    where
        F: Fn(&[Value], usize) -> Result<Vec<Option<Payload>>, ProviderError> + Sync,
    {
        cfg.validate()?;
        let mut found: Vec<Option<Payload>> = Vec::with_capacity(items.len());
        let mut misses: Vec<usize> = Vec::new();
        for (i, item) in items.iter().enumerate() {
            match self.cache.get(kind, &cfg.model_id, &item.hash)? {
                Some(e) => found.push(Some(e.payload)),
                None => {
                    found.push(None);
                    if !misses.iter().any(|&m| items[m].hash == item.hash) {
                        misses.push(i);
                    }
                }
            }
        }
        if misses.is_empty() {
            return Ok(found);
        }
        if self.offline {
            return Err(ProviderError::Offline {
                kind,
                model: cfg.model_id.clone(),
                hash: items[misses[0]].hash.clone(),
            });
        }

        let batches: Vec<&[usize]> = misses.chunks(cfg.batch_size).collect();
        let results: Vec<Mutex<Option<Result<Vec<Option<Payload>>, ProviderError>>>> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = cfg.concurrency.min(batches.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let b = next.fetch_add(1, Ordering::SeqCst);
                    if b >= batches.len() {
                        break;
                    }
                    let r = self.fetch_batch(b, batches[b], items, kind, cfg, &parse);
                    *results[b].lock().unwrap_or_else(|p| p.into_inner()) = Some(r);
                });
            }
        });

        for (b, slot) in batches.iter().zip(results) {
            let payloads = slot
                .into_inner()
                .unwrap_or_else(|p| p.into_inner())
                .expect("every batch is processed")?;
            for (&i, p) in b.iter().zip(payloads) {
                let hash = &items[i].hash;
                for (j, other) in items.iter().enumerate() {
                    if &other.hash == hash {
                        found[j] = p.clone();
                    }
                }
            }
        }
        Ok(found)
    }

    fn fetch_batch<F>(
        &self,
        index: usize,
        batch: &[usize],
        items: &[Item],
        kind: CacheKind,
        cfg: &ProviderConfig,
        parse: &F,
    ) -> Result<Vec<Option<Payload>>, ProviderError>
    where
        F: Fn(&[Value], usize) -> Result<Vec<Option<Payload>>, ProviderError>,
    {
        let mut body = json!({
            "model": cfg.model_id,
            "input": batch.iter().map(|&i| items[i].wire.as_str()).collect::<Vec<_>>(),
        });
        if kind == CacheKind::Caption {
            body["prompt"] = Value::from(CAPTION_PROMPT);
        }
        let key = cfg.api_key();
        let timeout = Duration::from_secs(cfg.timeout_secs);
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            self.requests.fetch_add(1, Ordering::SeqCst);
            match self.transport.post_json(&cfg.endpoint, &body, key.as_deref(), timeout) {
                Ok(v) => break v,
                Err(e) if e.is_transient() && attempt <= cfg.max_retries => {
                    let delay = cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::info!("batch {index}: attempt {attempt} failed ({e}); retrying in {delay} ms");
                    std::thread::sleep(Duration::from_millis(delay));
                }
                Err(e) => {
                    return Err(ProviderError::Http {
                        batch: index,
                        size: batch.len(),
                        attempts: attempt,
                        source: e,
                    })
                }
            }
        };
        let data = response
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::BadResponse("response has no data array".into()))?;
        if data.len() != batch.len() {
            return Err(ProviderError::BadResponse(format!(
                "batch {index}: sent {} inputs, got {} results",
                batch.len(),
                data.len()
            )));
        }
        let payloads = parse(data, batch.len())?;
        for (&i, p) in batch.iter().zip(&payloads) {
            if let Some(p) = p {
                self.cache.put(&CacheEntry {
                    content_hash: items[i].hash.clone(),
                    model_id: cfg.model_id.clone(),
                    kind,
                    payload: p.clone(),
                })?;
            }
        }
        Ok(payloads)
    }
}
