//! Wire-level types shared by all model backends.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::transcript::CallPurpose;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("backend refused the request (status {status}): {message}")]
    Refusal { status: u16, message: String },
    #[error("per-run call budget of {cap} exhausted")]
    BudgetExceeded { cap: u64 },
    #[error("empty input")]
    EmptyInput,
    #[error("backend returned a degenerate (all-zero) vector")]
    ZeroVector,
    #[error("failed to load image '{path}': {message}")]
    ImageLoad { path: String, message: String },
    #[error("unresolved placeholder '{{{name}}}' in template '{template}'")]
    MissingBinding { template: String, name: String },
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
    #[error("mock script: {0}")]
    Script(String),
}

/// A chat call to a vision-language backend.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model_id: String,
    pub system_text: Option<String>,
    pub user_text: String,
    pub images: Vec<PathBuf>,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub purpose: CallPurpose,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub backend_id: String,
    pub cached: bool,
}

/// Raw backend output before caching and bookkeeping.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
}

/// A fixed-length real vector from an embedding backend.
///
/// Vectors handed to callers by the gateway are unit-normalized; raw
/// construction is available for similarity math over arbitrary vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub modality: Modality,
}

impl Embedding {
    pub fn raw(values: Vec<f64>, modality: Modality) -> Embedding {
        Embedding { values, modality }
    }

    /// Builds a unit-normalized embedding; rejects all-zero input.
    pub fn unit(values: Vec<f64>, modality: Modality) -> Result<Embedding, GatewayError> {
        Ok(Embedding {
            values: unit_normalize(values)?,
            modality,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Scales a vector to unit L2 norm. All-zero (or non-finite) vectors are
/// rejected with `ZeroVector`.
pub fn unit_normalize(mut values: Vec<f64>) -> Result<Vec<f64>, GatewayError> {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(GatewayError::ZeroVector);
    }
    for v in &mut values {
        *v /= norm;
    }
    Ok(values)
}

/// An image read into memory, addressed by its content digest.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub path: PathBuf,
    pub digest: String,
    pub bytes: Vec<u8>,
}

impl LoadedImage {
    pub fn load(path: &Path) -> Result<LoadedImage, GatewayError> {
        let bytes = std::fs::read(path).map_err(|e| GatewayError::ImageLoad {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(LoadedImage {
            path: path.to_path_buf(),
            digest: content_digest(&bytes),
            bytes,
        })
    }
}

/// Hex SHA-256 of arbitrary bytes.
pub fn content_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Transport-agnostic backend interface. Implementations must be pure
/// functions of their inputs for the evaluation pipeline to be reproducible.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    /// Backend family, part of every cache key.
    fn kind(&self) -> &'static str;
    fn chat(
        &self,
        request: &ChatRequest,
        images: &[LoadedImage],
        request_digest: &str,
    ) -> Result<BackendReply, GatewayError>;
    fn embed_text(&self, model_id: &str, text: &str) -> Result<Vec<f64>, GatewayError>;
    fn embed_image(&self, model_id: &str, image: &LoadedImage) -> Result<Vec<f64>, GatewayError>;
}
