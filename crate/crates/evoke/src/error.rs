//! Shared error type for the reasoning, prompting, retrieval, and judgment
//! stages.

use thiserror::Error;

use crate::gateway::GatewayError;
use crate::taxonomy::TaxonomyError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("unparseable model reply in {stage}: {detail}")]
    ParseFailure { stage: &'static str, detail: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no cues extracted for image {image_digest}")]
    EmptyExtraction { image_digest: String },
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("all-zero vector")]
    ZeroVector,
    #[error("empty input")]
    EmptyInput,
    #[error("concept corpus parse error at line {line}: {detail}")]
    CorpusParse { line: usize, detail: String },
    #[error("invalid fusion weight {0}: must lie in [0, 1]")]
    InvalidFusionWeight(f64),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
