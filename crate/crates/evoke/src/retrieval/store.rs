//! Emotion concept store: ingestion of a line-delimited concept corpus into
//! an immutable, checksummed collection of unit-norm embeddings.
//!
//! Corpus records may carry precomputed embeddings; records without one are
//! embedded from their gloss through the gateway. The persisted store is a
//! JSON header line (dim, count, source id, checksum), one metadata line per
//! record, then a fixed-width block of little-endian f64 vectors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::PipelineError;
use crate::gateway::{Embedding, GatewayError, Modality, ModelGateway};

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptRecord {
    pub concept_id: String,
    pub gloss: String,
    pub emotion_tags: Vec<String>,
    pub embedding: Embedding,
}

/// Immutable store of concepts, sorted by concept id.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptStore {
    records: Vec<ConceptRecord>,
    dim: usize,
    source_id: String,
    checksum: String,
}

#[derive(Debug, Clone, Deserialize)]
struct CorpusRecord {
    id: String,
    gloss: String,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreHeader {
    dim: usize,
    count: usize,
    source_id: String,
    checksum: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredMeta {
    id: String,
    gloss: String,
    tags: Vec<String>,
}

impl ConceptStore {
    pub fn records(&self) -> &[ConceptRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Content checksum over ids, glosses, tags, and vector bits.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Builds a store from already-validated records (sorts, checksums).
    pub fn from_records(
        mut records: Vec<ConceptRecord>,
        source_id: &str,
    ) -> Result<ConceptStore, PipelineError> {
        if records.is_empty() {
            return Err(PipelineError::InsufficientData(
                "empty concept corpus".into(),
            ));
        }
        records.sort_by(|a, b| a.concept_id.cmp(&b.concept_id));
        let dim = records[0].embedding.dim();
        for record in &records {
            if record.embedding.dim() != dim {
                return Err(PipelineError::DimensionMismatch {
                    left: dim,
                    right: record.embedding.dim(),
                });
            }
        }
        let checksum = content_checksum(&records, dim);
        Ok(ConceptStore {
            records,
            dim,
            source_id: source_id.to_string(),
            checksum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let mut out: Vec<u8> = Vec::new();
        let header = StoreHeader {
            dim: self.dim,
            count: self.records.len(),
            source_id: self.source_id.clone(),
            checksum: self.checksum.clone(),
        };
        out.extend_from_slice(
            serde_json::to_string(&header)
                .expect("serializable")
                .as_bytes(),
        );
        out.push(b'\n');
        for record in &self.records {
            let meta = StoredMeta {
                id: record.concept_id.clone(),
                gloss: record.gloss.clone(),
                tags: record.emotion_tags.clone(),
            };
            out.extend_from_slice(
                serde_json::to_string(&meta)
                    .expect("serializable")
                    .as_bytes(),
            );
            out.push(b'\n');
        }
        for record in &self.records {
            for value in &record.embedding.values {
                out.extend_from_slice(&value.to_le_bytes());
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ConceptStore, PipelineError> {
        let bytes = std::fs::read(path)?;
        let corrupt = |detail: String| PipelineError::CorpusParse { line: 0, detail };

        let mut offset = 0usize;
        let mut next_line = |bytes: &[u8]| -> Result<String, PipelineError> {
            let rest = &bytes[offset..];
            let end = rest
                .iter()
                .position(|b| *b == b'\n')
                .ok_or_else(|| corrupt("truncated store file".into()))?;
            let line = String::from_utf8(rest[..end].to_vec())
                .map_err(|e| corrupt(format!("bad utf-8 in store header: {e}")))?;
            offset += end + 1;
            Ok(line)
        };

        let header: StoreHeader = serde_json::from_str(&next_line(&bytes)?)
            .map_err(|e| corrupt(format!("bad store header: {e}")))?;
        let mut metas = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let meta: StoredMeta = serde_json::from_str(&next_line(&bytes)?)
                .map_err(|e| corrupt(format!("bad store record: {e}")))?;
            metas.push(meta);
        }
        let vector_bytes = &bytes[offset..];
        let expected = header
            .count
            .checked_mul(header.dim)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| corrupt("store counts overflow".into()))?;
        if vector_bytes.len() != expected {
            return Err(corrupt(format!(
                "vector block is {} bytes, expected {expected}",
                vector_bytes.len()
            )));
        }
        let mut records = Vec::with_capacity(header.count);
        for (i, meta) in metas.into_iter().enumerate() {
            let start = i * header.dim * 8;
            let values: Vec<f64> = (0..header.dim)
                .map(|j| {
                    let at = start + j * 8;
                    let mut buf = [0u8; 8];
                    buf.copy_from_slice(&vector_bytes[at..at + 8]);
                    f64::from_le_bytes(buf)
                })
                .collect();
            records.push(ConceptRecord {
                concept_id: meta.id,
                gloss: meta.gloss,
                emotion_tags: meta.tags,
                embedding: Embedding::raw(values, Modality::Text),
            });
        }
        let store = ConceptStore {
            records,
            dim: header.dim,
            source_id: header.source_id,
            checksum: header.checksum.clone(),
        };
        let recomputed = content_checksum(&store.records, store.dim);
        if recomputed != header.checksum {
            return Err(corrupt(format!(
                "store checksum mismatch: header {} vs content {recomputed}",
                header.checksum
            )));
        }
        Ok(store)
    }
}

fn content_checksum(records: &[ConceptRecord], dim: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update((dim as u64).to_le_bytes());
    for record in records {
        hasher.update(record.concept_id.as_bytes());
        hasher.update([0x1f]);
        hasher.update(record.gloss.as_bytes());
        hasher.update([0x1f]);
        hasher.update(record.emotion_tags.join(",").as_bytes());
        hasher.update([0x1e]);
        for value in &record.embedding.values {
            hasher.update(value.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

/// Parses the corpus and embeds glosses where no embedding is given. Every
/// vector is unit-normalized; re-ingesting the same corpus yields the same
/// checksum.
pub fn ingest_concepts(
    gateway: &ModelGateway,
    corpus_path: &Path,
) -> Result<ConceptStore, PipelineError> {
    let text = std::fs::read_to_string(corpus_path)?;
    let source_id = corpus_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_string();

    let mut records: Vec<ConceptRecord> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |detail: String| PipelineError::CorpusParse {
            line: line_no,
            detail,
        };
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let raw: CorpusRecord =
            serde_json::from_str(line).map_err(|e| err(format!("bad record: {e}")))?;
        let concept_id = raw.id.trim().to_string();
        if concept_id.is_empty() {
            return Err(err("empty concept id".into()));
        }
        if records.iter().any(|r| r.concept_id == concept_id) {
            return Err(err(format!("duplicate concept id '{concept_id}'")));
        }
        let gloss = raw.gloss.trim().to_string();
        if gloss.is_empty() {
            return Err(err(format!("concept '{concept_id}' has an empty gloss")));
        }
        let embedding = match raw.embedding {
            Some(values) => {
                if values.is_empty() {
                    return Err(err(format!(
                        "concept '{concept_id}' has an empty embedding"
                    )));
                }
                Embedding::unit(values, Modality::Text).map_err(|e| match e {
                    GatewayError::ZeroVector => PipelineError::ZeroVector,
                    other => PipelineError::Gateway(other),
                })?
            }
            None => gateway.embed_text(&gloss)?,
        };
        records.push(ConceptRecord {
            concept_id,
            gloss,
            emotion_tags: raw.tags.iter().map(|t| t.trim().to_lowercase()).collect(),
            embedding,
        });
    }
    ConceptStore::from_records(records, &source_id)
}
