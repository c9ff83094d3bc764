//! Content-addressed on-disk cache.
//!
//! Layout: `<root>/<model-hash>/<op>/<key>.bin` with a `<key>.sha256`
//! sidecar holding the hex digest of the payload. Both files are written
//! through temp-file-and-rename, payload first, so a reader that finds a
//! sidecar also finds the complete payload it describes.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fsutil::{sha256_hex, write_atomic};

/// The parts a cache key is derived from.
#[derive(Debug, Clone, Serialize)]
pub struct CacheKey {
    pub model_id: String,
    pub operation: String,
    pub params: serde_json::Value,
    pub inputs: Vec<String>,
}

impl CacheKey {
    pub fn new(
        model_id: impl Into<String>,
        operation: impl Into<String>,
        params: serde_json::Value,
        inputs: Vec<String>,
    ) -> Self {
        CacheKey {
            model_id: model_id.into(),
            operation: operation.into(),
            params,
            inputs,
        }
    }

    /// Hex SHA-256 of the key parts.
    pub fn digest(&self) -> String {
        crate::fsutil::hash_json(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub key: String,
    pub payload_path: PathBuf,
    pub created_at: u64,
}

#[derive(Debug, Default)]
pub struct CacheStats {
    pub hits: AtomicUsize,
    pub misses: AtomicUsize,
}

#[derive(Debug)]
pub struct Cache {
    root: Option<PathBuf>,
    stats: CacheStats,
}

fn sanitize(part: &str) -> String {
    part.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Cache {
            root: Some(root.into()),
            stats: CacheStats::default(),
        }
    }

    /// A cache that never stores anything.
    pub fn disabled() -> Self {
        Cache {
            root: None,
            stats: CacheStats::default(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.root.is_some()
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn hits(&self) -> usize {
        self.stats.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.stats.misses.load(Ordering::Relaxed)
    }

    fn paths(&self, key: &CacheKey) -> Option<(PathBuf, PathBuf, String)> {
        let root = self.root.as_ref()?;
        let digest = key.digest();
        let dir = root
            .join(sanitize(&key.model_id))
            .join(sanitize(&key.operation));
        Some((
            dir.join(format!("{digest}.bin")),
            dir.join(format!("{digest}.sha256")),
            digest,
        ))
    }

    /// Returns the stored payload, `None` when absent, or
    /// [`Error::CacheCorrupt`] when the payload fails its checksum.
    pub fn get(&self, key: &CacheKey) -> Result<Option<Vec<u8>>> {
        let Some((payload, sidecar, digest)) = self.paths(key) else {
            return Ok(None);
        };
        let Ok(expected) = std::fs::read_to_string(&sidecar) else {
            return Ok(None);
        };
        let bytes = match std::fs::read(&payload) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&payload, e)),
        };
        if sha256_hex(&bytes) != expected.trim() {
            return Err(Error::CacheCorrupt { key: digest });
        }
        Ok(Some(bytes))
    }

    /// Like [`Cache::get`] but reports corruption as a warning and a miss.
    pub fn fetch(&self, key: &CacheKey) -> Option<Vec<u8>> {
        let found = match self.get(key) {
            Ok(found) => found,
            Err(e) => {
                log::warn!("{e}; treating as cache miss");
                None
            }
        };
        if self.is_enabled() {
            let counter = if found.is_some() { &self.stats.hits } else { &self.stats.misses };
            counter.fetch_add(1, Ordering::Relaxed);
        }
        found
    }

    /// Stores `payload`. Concurrent puts of the same key write identical
    /// bytes, so the last rename wins harmlessly.
    pub fn put(&self, key: &CacheKey, payload: &[u8]) -> Result<Option<CacheEntry>> {
        let Some((payload_path, sidecar, digest)) = self.paths(key) else {
            return Ok(None);
        };
        write_atomic(&payload_path, payload)?;
        write_atomic(&sidecar, sha256_hex(payload).as_bytes())?;
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(Some(CacheEntry {
            key: digest,
            payload_path,
            created_at,
        }))
    }

    pub fn fetch_json<T: DeserializeOwned>(&self, key: &CacheKey) -> Option<T> {
        let bytes = self.fetch(key)?;
        match serde_json::from_slice(&bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("undecodable cache payload {}: {e}", key.digest());
                None
            }
        }
    }

    pub fn put_json<T: Serialize + ?Sized>(&self, key: &CacheKey, value: &T) -> Result<()> {
        if self.is_enabled() {
            self.put(key, &serde_json::to_vec(value)?)?;
        }
        Ok(())
    }
}
