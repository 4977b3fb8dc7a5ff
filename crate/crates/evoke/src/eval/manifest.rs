//! Dataset manifests: line-delimited records binding image files to
//! ground-truth emotions, a dataset id, and a split.
//!
//! Splits must be pairwise disjoint by image content digest; any overlap is
//! data leakage and rejected outright.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalError;
use crate::taxonomy::{EmotionSet, ProfileRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Labeled images consumed by contrastive reverse reasoning.
    Reasoning,
    /// Labeled images consumed by prompt refinement.
    Fewshot,
    /// Held-out evaluation images.
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Split::Reasoning => "reasoning",
            Split::Fewshot => "fewshot",
            Split::Test => "test",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct RawEntry {
    image: String,
    labels: Vec<String>,
    dataset_id: String,
    split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub digest: String,
    pub ground_truth: EmotionSet,
    pub dataset_id: String,
    pub split: Split,
}

/// Loads and validates a manifest. Image paths are resolved relative to the
/// manifest file; every image is read and content-digested so leakage checks
/// see through renames and copies.
pub fn load_manifest(
    path: &Path,
    registry: &ProfileRegistry,
) -> Result<Vec<ManifestEntry>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::ManifestParse {
        path: path.display().to_string(),
        line: 0,
        detail: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    let mut split_by_digest: BTreeMap<String, Split> = BTreeMap::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let parse_err = |detail: String| EvalError::ManifestParse {
            path: path.display().to_string(),
            line: line_no,
            detail,
        };
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let raw: RawEntry =
            serde_json::from_str(line).map_err(|e| parse_err(format!("bad record: {e}")))?;
        if raw.labels.is_empty() {
            return Err(parse_err("entry has no labels".into()));
        }
        let dataset_id = raw.dataset_id.trim().to_lowercase();
        let profile = registry
            .get(&dataset_id)
            .map_err(|e| parse_err(e.to_string()))?;
        for label in &raw.labels {
            let candidate = crate::taxonomy::EmotionLabel::new(label);
            if !profile.vocabulary.contains(&candidate) {
                return Err(parse_err(format!(
                    "label '{label}' not in vocabulary of '{dataset_id}'"
                )));
            }
        }
        let ground_truth = EmotionSet::from_labels(profile, raw.labels.iter());
        let image = base.join(&raw.image);
        let bytes = std::fs::read(&image)
            .map_err(|e| parse_err(format!("cannot read image '{}': {e}", image.display())))?;
        let digest = hex::encode(Sha256::digest(&bytes));

        if let Some(existing) = split_by_digest.get(&digest) {
            if *existing != raw.split {
                return Err(EvalError::SplitLeakage {
                    digest,
                    a: existing.to_string(),
                    b: raw.split.to_string(),
                });
            }
        } else {
            split_by_digest.insert(digest.clone(), raw.split);
        }

        entries.push(ManifestEntry {
            image,
            digest,
            ground_truth,
            dataset_id,
            split: raw.split,
        });
    }
    Ok(entries)
}

/// Seed-controlled selection of `per_emotion` images per emotion per dataset
/// from one split. An image may satisfy the quota of several emotions; the
/// returned corpus is digest-deduplicated, in deterministic order.
pub fn select_per_emotion(
    entries: &[ManifestEntry],
    split: Split,
    registry: &ProfileRegistry,
    per_emotion: usize,
    seed: u64,
) -> Result<Vec<ManifestEntry>, EvalError> {
    if per_emotion == 0 {
        return Err(EvalError::DegenerateSelection);
    }
    let pool: Vec<&ManifestEntry> = entries.iter().filter(|e| e.split == split).collect();
    let mut dataset_ids: Vec<String> = pool.iter().map(|e| e.dataset_id.clone()).collect();
    dataset_ids.sort();
    dataset_ids.dedup();

    let mut chosen: Vec<ManifestEntry> = Vec::new();
    let mut chosen_digests: Vec<String> = Vec::new();

    for dataset_id in &dataset_ids {
        let profile = registry.get(dataset_id).map_err(EvalError::Taxonomy)?;
        for emotion in profile.vocabulary.iter() {
            let mut candidates: Vec<&ManifestEntry> = pool
                .iter()
                .copied()
                .filter(|e| &e.dataset_id == dataset_id && e.ground_truth.contains(emotion))
                .collect();
            candidates.sort_by(|a, b| a.digest.cmp(&b.digest));
            candidates.dedup_by(|a, b| a.digest == b.digest);
            if candidates.len() < per_emotion {
                return Err(EvalError::InsufficientData {
                    detail: format!(
                        "split '{split}' of '{dataset_id}' has {} image(s) labeled '{emotion}', {per_emotion} required",
                        candidates.len()
                    ),
                });
            }
            let mut rng = ChaCha20Rng::seed_from_u64(subseed(seed, dataset_id, emotion.as_str()));
            // Prefer images not yet in the corpus so the selection stays as
            // spread out as the split allows.
            let picks = rand::seq::index::sample(&mut rng, candidates.len(), candidates.len());
            let mut taken = 0;
            let mut reuse: Vec<&ManifestEntry> = Vec::new();
            for i in picks.iter() {
                if taken >= per_emotion {
                    break;
                }
                let entry = candidates[i];
                if chosen_digests.contains(&entry.digest) {
                    reuse.push(entry);
                    continue;
                }
                chosen_digests.push(entry.digest.clone());
                chosen.push(entry.clone());
                taken += 1;
            }
            // Quota not reachable with fresh images: fall back to reuse.
            taken += reuse.len().min(per_emotion - taken);
            debug_assert!(taken >= per_emotion.min(candidates.len()));
        }
    }
    Ok(chosen)
}

fn subseed(base: u64, dataset_id: &str, emotion: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(b"corpus");
    hasher.update(dataset_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(emotion.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
