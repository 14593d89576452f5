use std::io::Write;
use std::path::{Path, PathBuf};

use super::Teacher;
use crate::digest::FieldHasher;
use crate::error::{Error, Result};

/// Content hash of (prompt, model, temperature, sample).
///
/// The sample index only participates when temperature > 0: greedy decoding
/// returns the same text for every draw, so all draws share one entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(prompt: &str, model: &str, temperature: f64, sample: u32) -> Self {
        let sample = if temperature > 0.0 { sample as u64 } else { 0 };
        CacheKey(
            FieldHasher::new()
                .str("chat-completion/v1")
                .str(prompt)
                .str(model)
                .f64(temperature)
                .u64(sample)
                .finish_hex(),
        )
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Directory of response files named by cache key, sharded by the first two
/// hex digits. Writes go through a temp file and an atomic rename, so readers
/// never observe a partial entry.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(ResponseCache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root.join(&key.0[..2]).join(format!("{}.txt", key.0))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<String>> {
        let p = self.path_for(key);
        match std::fs::read_to_string(&p) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(p, e)),
        }
    }

    pub fn put(&self, key: &CacheKey, response: &str) -> Result<()> {
        let p = self.path_for(key);
        let dir = p.parent().expect("sharded path has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(response.as_bytes())
            .map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&p).map_err(|e| Error::io(&p, e.error))?;
        Ok(())
    }
}

/// Serves repeated prompts from a [`ResponseCache`] before asking `inner`.
pub struct CachedTeacher<T> {
    inner: T,
    cache: ResponseCache,
}

impl<T: Teacher> CachedTeacher<T> {
    pub fn new(inner: T, cache: ResponseCache) -> Self {
        CachedTeacher { inner, cache }
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: Teacher> Teacher for CachedTeacher<T> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }

    fn complete(&self, prompt: &str, sample: u32) -> Result<String> {
        let key = CacheKey::new(prompt, self.inner.name(), self.inner.temperature(), sample);
        if let Some(hit) = self.cache.get(&key)? {
            log::debug!("cache hit {}", key.as_str());
            return Ok(hit);
        }
        let response = self.inner.complete(prompt, sample)?;
        self.cache.put(&key, &response)?;
        Ok(response)
    }
}
