//! Content-addressed, write-once cache of provider results.
//!
//! Layout: `<root>/<kind>/<model>/<hash[..2]>/<hash>.json`, where `hash` is
//! the hex SHA-256 of the input bytes (image) or UTF-8 text. An entry is
//! never rewritten once present. Writes go through one mutex and land via
//! temp file + rename, so readers never see partial entries.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ProviderError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheKind {
    ImageEmbedding,
    TextEmbedding,
    Caption,
}

impl CacheKind {
    fn dir(self) -> &'static str {
        match self {
            CacheKind::ImageEmbedding => "image",
            CacheKind::TextEmbedding => "text",
            CacheKind::Caption => "caption",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Embedding(Vec<f64>),
    Caption(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub content_hash: String,
    pub model_id: String,
    pub kind: CacheKind,
    pub payload: Payload,
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Model ids become directory names; anything outside [A-Za-z0-9._-] maps to '_'.
fn model_dir(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

#[derive(Debug)]
pub struct Cache {
    root: PathBuf,
    writer: Mutex<()>,
}

impl Cache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| ProviderError::Cache(root.display().to_string(), e))?;
        Ok(Self {
            root,
            writer: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, kind: CacheKind, model_id: &str, hash: &str) -> PathBuf {
        self.root
            .join(kind.dir())
            .join(model_dir(model_id))
            .join(&hash[..2])
            .join(format!("{hash}.json"))
    }

    pub fn get(&self, kind: CacheKind, model_id: &str, hash: &str) -> Result<Option<CacheEntry>, ProviderError> {
        let path = self.entry_path(kind, model_id, hash);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(ProviderError::Cache(path.display().to_string(), e)),
        };
        let entry: CacheEntry = serde_json::from_str(&text)
            .map_err(|e| ProviderError::BadResponse(format!("corrupt cache entry {}: {e}", path.display())))?;
        if entry.content_hash != hash || entry.model_id != model_id || entry.kind != kind {
            return Err(ProviderError::BadResponse(format!("cache entry {} does not match its key", path.display())));
        }
        Ok(Some(entry))
    }

    /// Stores `entry` unless its key is already present.
    pub fn put(&self, entry: &CacheEntry) -> Result<(), ProviderError> {
        let path = self.entry_path(entry.kind, &entry.model_id, &entry.content_hash);
        let io = |e| ProviderError::Cache(path.display().to_string(), e);
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        if path.exists() {
            return Ok(());
        }
        let dir = path.parent().expect("entry path has a parent");
        fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        let json = serde_json::to_vec(entry).expect("cache entries serialise");
        tmp.write_all(&json).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(())
    }
}
