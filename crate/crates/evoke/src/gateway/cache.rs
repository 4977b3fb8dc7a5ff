//! Content-addressed on-disk cache for chat responses and embeddings.
//!
//! One file per cache key under `<root>/chat/` or `<root>/embed/`, each
//! holding the verbatim response plus the request metadata it answered.
//! Writes go through a temp file and an atomic rename, so a retried call can
//! never leave more than one entry per key.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::backend::{ChatRequest, GatewayError, Modality, TokenUsage};

/// Digest over everything that determines a backend answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn chat(backend_kind: &str, request: &ChatRequest, image_digests: &[String]) -> CacheKey {
        let canonical = json!([
            "chat",
            backend_kind,
            request.model_id,
            request.system_text,
            request.user_text,
            image_digests,
            request.temperature,
            request.max_output_tokens,
        ]);
        CacheKey(digest_json(&canonical))
    }

    pub fn embed_text(backend_kind: &str, model_id: &str, text: &str) -> CacheKey {
        CacheKey(digest_json(&json!([
            "embed_text",
            backend_kind,
            model_id,
            text
        ])))
    }

    pub fn embed_image(backend_kind: &str, model_id: &str, image_digest: &str) -> CacheKey {
        CacheKey(digest_json(&json!([
            "embed_image",
            backend_kind,
            model_id,
            image_digest
        ])))
    }
}

fn digest_json(value: &serde_json::Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(value.to_string().as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatCacheRecord {
    pub digest: String,
    pub backend_id: String,
    pub model_id: String,
    pub request_text: String,
    pub image_digests: Vec<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub response_text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedCacheRecord {
    pub digest: String,
    pub backend_id: String,
    pub model_id: String,
    pub modality: Modality,
    pub values: Vec<f64>,
}

/// Disk-backed cache. With no root directory the cache is inert and every
/// lookup misses (useful for throwaway gateways in tests).
#[derive(Debug, Clone, Default)]
pub struct ResponseCache {
    root: Option<PathBuf>,
}

impl ResponseCache {
    pub fn at(root: &Path) -> ResponseCache {
        ResponseCache {
            root: Some(root.to_path_buf()),
        }
    }

    pub fn disabled() -> ResponseCache {
        ResponseCache { root: None }
    }

    fn entry_path(&self, section: &str, key: &CacheKey) -> Option<PathBuf> {
        self.root
            .as_ref()
            .map(|root| root.join(section).join(format!("{}.json", key.0)))
    }

    pub fn get_chat(&self, key: &CacheKey) -> Option<ChatCacheRecord> {
        let path = self.entry_path("chat", key)?;
        let text = fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put_chat(&self, key: &CacheKey, record: &ChatCacheRecord) -> Result<(), GatewayError> {
        if let Some(path) = self.entry_path("chat", key) {
            write_atomic(
                &path,
                &serde_json::to_vec_pretty(record).expect("serializable"),
            )?;
        }
        Ok(())
    }

    pub fn get_embed(&self, key: &CacheKey) -> Option<EmbedCacheRecord> {
        let path = self.entry_path("embed", key)?;
        let text = fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put_embed(&self, key: &CacheKey, record: &EmbedCacheRecord) -> Result<(), GatewayError> {
        if let Some(path) = self.entry_path("embed", key) {
            write_atomic(
                &path,
                &serde_json::to_vec_pretty(record).expect("serializable"),
            )?;
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let parent = path.parent().expect("cache entries have a parent dir");
    fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        path.file_name().and_then(|n| n.to_str()).unwrap_or("entry")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
