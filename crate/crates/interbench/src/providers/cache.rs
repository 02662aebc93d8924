//! Persistent completion cache: one checksummed JSON file per cache key.
//!
//! The cache makes experiment runs resumable: a re-run replays cached
//! responses instead of calling the provider again. A corrupt entry is
//! treated as a miss with a warning, never a crash, so a damaged cache can
//! only cost time.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CacheKey, CallTag, CompletionRequest, CompletionResponse, Provider, ProviderError};

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    checksum: String,
    response: CompletionResponse,
}

fn response_checksum(response: &CompletionResponse) -> String {
    let bytes = serde_json::to_vec(response).expect("response serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Content-addressed response store under a cache directory.
#[derive(Debug, Clone)]
pub struct TranscriptCache {
    dir: PathBuf,
}

impl TranscriptCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<TranscriptCache> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(TranscriptCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.as_hex()))
    }

    pub fn get(&self, key: &CacheKey) -> Option<CompletionResponse> {
        let path = self.entry_path(key);
        let bytes = fs::read(&path).ok()?;
        let record: CacheRecord = match serde_json::from_slice(&bytes) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("cache entry {} unreadable ({e}); treating as miss", path.display());
                return None;
            }
        };
        if record.key != key.as_hex() || record.checksum != response_checksum(&record.response) {
            log::warn!(
                "cache entry {} failed checksum; treating as miss",
                path.display()
            );
            return None;
        }
        Some(record.response)
    }

    pub fn put(&self, key: &CacheKey, response: &CompletionResponse) -> std::io::Result<()> {
        let record = CacheRecord {
            key: key.as_hex().to_string(),
            checksum: response_checksum(response),
            response: response.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&record)?;
        // Write-then-rename keeps readers from ever seeing a half entry.
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&bytes)?;
        tmp.persist(self.entry_path(key)).map_err(|e| e.error)?;
        Ok(())
    }
}

/// Wraps a provider with get-before/put-after caching.
pub struct CachingProvider<P> {
    inner: P,
    cache: TranscriptCache,
}

impl<P: Provider> CachingProvider<P> {
    pub fn new(inner: P, cache: TranscriptCache) -> Self {
        CachingProvider { inner, cache }
    }
}

impl<P: Provider> Provider for CachingProvider<P> {
    fn complete(
        &self,
        req: &CompletionRequest,
        tag: &CallTag,
    ) -> Result<CompletionResponse, ProviderError> {
        let key = CacheKey::compute(req, tag);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let response = self.inner.complete(req, tag)?;
        if let Err(e) = self.cache.put(&key, &response) {
            log::warn!("cache write for {key} failed: {e}");
        }
        Ok(response)
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{ChatMessage, FinishReason, ScriptedProvider};
    use std::sync::atomic::{AtomicU32, Ordering};

    fn response(content: &str) -> CompletionResponse {
        CompletionResponse {
            content: content.into(),
            finish_reason: FinishReason::Stop,
            latency_ms: 12,
            token_usage: None,
            attempts: 1,
        }
    }

    fn key(n: u32) -> CacheKey {
        let req = CompletionRequest {
            model_id: "m".into(),
            messages: vec![ChatMessage::user(format!("q{n}"))],
            temperature: 0.2,
            max_output_tokens: 16,
            random_seed: None,
        };
        CacheKey::compute(&req, &CallTag::new("target", 1))
    }

    #[test]
    fn put_then_get_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TranscriptCache::open(dir.path()).unwrap();
        let resp = response("cached body");
        cache.put(&key(1), &resp).unwrap();
        assert_eq!(cache.get(&key(1)), Some(resp));
    }

    #[test]
    fn cold_cache_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TranscriptCache::open(dir.path()).unwrap();
        assert_eq!(cache.get(&key(2)), None);
    }

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let cache = TranscriptCache::open(dir.path()).unwrap();
            cache.put(&key(3), &response("persisted")).unwrap();
        }
        let cache = TranscriptCache::open(dir.path()).unwrap();
        assert_eq!(cache.get(&key(3)).unwrap().content, "persisted");
    }

    #[test]
    fn corrupt_entry_is_a_miss_not_a_crash() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TranscriptCache::open(dir.path()).unwrap();
        let k = key(4);
        cache.put(&k, &response("will corrupt")).unwrap();

        // flip one byte inside the stored response content
        let path = dir.path().join(format!("{}.json", k.as_hex()));
        let mut bytes = std::fs::read(&path).unwrap();
        let pos = bytes.windows(7).position(|w| w == b"corrupt").unwrap();
        bytes[pos] = b'X';
        std::fs::write(&path, bytes).unwrap();

        assert_eq!(cache.get(&k), None);
    }

    struct CountingProvider {
        inner: ScriptedProvider,
        calls: AtomicU32,
    }

    impl Provider for CountingProvider {
        fn complete(
            &self,
            req: &CompletionRequest,
            tag: &CallTag,
        ) -> Result<CompletionResponse, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.complete(req, tag)
        }

        fn model_id(&self) -> &str {
            self.inner.model_id()
        }
    }

    #[test]
    fn caching_provider_hits_skip_inner() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TranscriptCache::open(dir.path()).unwrap();
        let counting = CountingProvider {
            inner: ScriptedProvider::new("m").with_default("answer"),
            calls: AtomicU32::new(0),
        };
        let provider = CachingProvider::new(counting, cache);

        let req = CompletionRequest {
            model_id: "m".into(),
            messages: vec![ChatMessage::user("q")],
            temperature: 0.2,
            max_output_tokens: 16,
            random_seed: None,
        };
        let tag = CallTag::new("target", 1);
        let first = provider.complete(&req, &tag).unwrap();
        let second = provider.complete(&req, &tag).unwrap();
        assert_eq!(first, second);
        assert_eq!(provider.inner.calls.load(Ordering::SeqCst), 1);
    }
}
