//! Multimodal emotion retrieval: cue extraction from the test image, cosine
//! similarity against the concept store, weighted fusion of the text and
//! image modalities, and exact top-k selection.

pub mod store;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use store::{ingest_concepts, ConceptRecord, ConceptStore};

use crate::error::PipelineError;
use crate::gateway::{Embedding, GatewayError, Modality, ModelGateway};
use crate::prompts::{run_prompt_extraction, PromptExtraction, PromptSet};

// ---------------------------------------------------------------------------
// Cue extraction
// ---------------------------------------------------------------------------

/// The flat, ordered cue phrase list extracted from one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueExtraction {
    pub phrases: Vec<String>,
    pub image_digest: String,
}

impl CueExtraction {
    /// Flattens a structured extraction in prompt order (descriptive first,
    /// then per-emotion elicitive), deduplicating case-insensitively.
    pub fn from_prompt_extraction(extraction: &PromptExtraction) -> CueExtraction {
        let mut phrases = Vec::new();
        let mut seen: Vec<String> = Vec::new();
        let mut push = |phrase: &str| {
            let folded = phrase.to_lowercase();
            if !seen.contains(&folded) {
                seen.push(folded);
                phrases.push(phrase.to_string());
            }
        };
        for phrase in &extraction.descriptive {
            push(phrase);
        }
        for list in extraction.elicitive.values() {
            for phrase in list {
                push(phrase);
            }
        }
        CueExtraction {
            phrases,
            image_digest: extraction.image_digest.clone(),
        }
    }
}

/// Runs the frozen prompt set over an image and flattens the result.
/// An image where every prompt came back empty is an `EmptyExtraction`;
/// callers continue with image-only retrieval.
pub fn extract_vecs(
    gateway: &ModelGateway,
    prompts: &PromptSet,
    image: &Path,
    image_digest: &str,
    parallelism: usize,
) -> Result<CueExtraction, PipelineError> {
    let extraction = run_prompt_extraction(gateway, prompts, image, image_digest, parallelism)?;
    if extraction.is_empty() {
        return Err(PipelineError::EmptyExtraction {
            image_digest: image_digest.to_string(),
        });
    }
    Ok(CueExtraction::from_prompt_extraction(&extraction))
}

// ---------------------------------------------------------------------------
// Similarity and fusion
// ---------------------------------------------------------------------------

/// Cosine similarity, clamped to [-1, 1] against rounding drift.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, PipelineError> {
    if a.dim() != b.dim() {
        return Err(PipelineError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(PipelineError::ZeroVector);
    }
    Ok((dot / (norm_a.sqrt() * norm_b.sqrt())).clamp(-1.0, 1.0))
}

/// Componentwise mean of phrase embeddings, renormalized to unit norm.
pub fn pool_text_embeddings(embeddings: &[Embedding]) -> Result<Embedding, PipelineError> {
    let Some(first) = embeddings.first() else {
        return Err(PipelineError::EmptyInput);
    };
    let dim = first.dim();
    let mut mean = vec![0.0f64; dim];
    for embedding in embeddings {
        if embedding.dim() != dim {
            return Err(PipelineError::DimensionMismatch {
                left: dim,
                right: embedding.dim(),
            });
        }
        for (acc, value) in mean.iter_mut().zip(&embedding.values) {
            *acc += value;
        }
    }
    let count = embeddings.len() as f64;
    for value in &mut mean {
        *value /= count;
    }
    match Embedding::unit(mean, Modality::Text) {
        Ok(embedding) => Ok(embedding),
        Err(GatewayError::ZeroVector) => Err(PipelineError::ZeroVector),
        Err(other) => Err(PipelineError::Gateway(other)),
    }
}

/// Balance between the text and image modalities, in [0, 1]; 1 is text-only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FusionWeight(f64);

impl FusionWeight {
    pub const TEXT_ONLY: FusionWeight = FusionWeight(1.0);
    pub const IMAGE_ONLY: FusionWeight = FusionWeight(0.0);

    pub fn new(alpha: f64) -> Result<FusionWeight, PipelineError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(PipelineError::InvalidFusionWeight(alpha));
        }
        Ok(FusionWeight(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Weighted fusion of the two modality similarities:
/// `alpha * lambda_t + (1 - alpha) * lambda_v`.
///
/// ```
/// use evoke::retrieval::{fuse, FusionWeight};
///
/// let alpha = FusionWeight::new(0.6).unwrap();
/// assert!((fuse(0.8, 0.5, alpha) - 0.68).abs() <= 1e-12);
/// assert_eq!(fuse(0.8, 0.5, FusionWeight::TEXT_ONLY), 0.8);
/// ```
pub fn fuse(lambda_t: f64, lambda_v: f64, alpha: FusionWeight) -> f64 {
    alpha.0 * lambda_t + (1.0 - alpha.0) * lambda_v
}

// ---------------------------------------------------------------------------
// Top-k retrieval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredConcept {
    pub concept_id: String,
    pub gloss: String,
    pub lambda_t: f64,
    pub lambda_v: f64,
    pub lambda_m: f64,
}

/// Retrieval result: `min(k, store size)` concepts sorted by fused score
/// descending, concept id ascending on exact ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedConcepts {
    pub items: Vec<ScoredConcept>,
    pub k: usize,
}

impl RetrievedConcepts {
    /// Placeholder for ablations that skip retrieval entirely.
    pub fn empty(k: usize) -> RetrievedConcepts {
        RetrievedConcepts {
            items: Vec::new(),
            k,
        }
    }
}

fn rank_order(a: &ScoredConcept, b: &ScoredConcept) -> std::cmp::Ordering {
    b.lambda_m
        .partial_cmp(&a.lambda_m)
        .expect("fused scores are finite")
        .then_with(|| a.concept_id.cmp(&b.concept_id))
}

/// Exact top-k over a full linear scan of the store: every record is scored
/// on both modalities, fused, then partially selected and sorted.
pub fn retrieve_topk(
    store: &ConceptStore,
    text: &Embedding,
    image: &Embedding,
    alpha: FusionWeight,
    k: usize,
) -> Result<RetrievedConcepts, PipelineError> {
    assert!(k >= 1, "retrieval k must be at least 1");
    assert!(!store.is_empty(), "retrieval requires a non-empty store");
    let mut scored: Vec<ScoredConcept> = store
        .records()
        .iter()
        .map(|record| {
            let lambda_t = cosine(text, &record.embedding)?;
            let lambda_v = cosine(image, &record.embedding)?;
            Ok(ScoredConcept {
                concept_id: record.concept_id.clone(),
                gloss: record.gloss.clone(),
                lambda_t,
                lambda_v,
                lambda_m: fuse(lambda_t, lambda_v, alpha),
            })
        })
        .collect::<Result<_, PipelineError>>()?;

    let take = k.min(scored.len());
    if take < scored.len() {
        scored.select_nth_unstable_by(take - 1, rank_order);
        scored.truncate(take);
    }
    scored.sort_by(rank_order);
    Ok(RetrievedConcepts { items: scored, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Modality;

    fn text_vec(values: &[f64]) -> Embedding {
        Embedding::raw(values.to_vec(), Modality::Text)
    }

    fn image_vec(values: &[f64]) -> Embedding {
        Embedding::raw(values.to_vec(), Modality::Image)
    }

    #[test]
    fn cosine_hand_cases() {
        let v = text_vec(&[0.6, 0.8]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() <= 1e-12);

        let x = text_vec(&[1.0, 0.0]);
        let y = text_vec(&[0.0, 1.0]);
        assert_eq!(cosine(&x, &y).unwrap(), 0.0);

        let a = text_vec(&[1.0, 2.0, 2.0]);
        let b = text_vec(&[2.0, 1.0, 2.0]);
        let expected = 8.0 / 9.0;
        assert!((cosine(&a, &b).unwrap() - expected).abs() <= 1e-12);
        // Symmetry to full precision.
        assert_eq!(cosine(&a, &b).unwrap(), cosine(&b, &a).unwrap());
    }

    #[test]
    fn cosine_error_cases() {
        let a = text_vec(&[1.0, 0.0]);
        let b = text_vec(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            cosine(&a, &b),
            Err(PipelineError::DimensionMismatch { left: 2, right: 3 })
        ));
        let zero = text_vec(&[0.0, 0.0]);
        assert!(matches!(cosine(&a, &zero), Err(PipelineError::ZeroVector)));
    }

    #[test]
    fn pooling_cases() {
        let single = text_vec(&[0.0, 1.0]);
        let pooled = pool_text_embeddings(std::slice::from_ref(&single)).unwrap();
        assert_eq!(pooled.values, vec![0.0, 1.0]);

        let v = text_vec(&[0.5, -0.25]);
        let neg = text_vec(&[-0.5, 0.25]);
        assert!(matches!(
            pool_text_embeddings(&[v, neg]),
            Err(PipelineError::ZeroVector)
        ));

        let x = text_vec(&[1.0, 0.0]);
        let y = text_vec(&[0.0, 1.0]);
        let pooled = pool_text_embeddings(&[x, y]).unwrap();
        let expected = 1.0 / 2.0f64.sqrt();
        assert!((pooled.values[0] - expected).abs() <= 1e-12);
        assert!((pooled.values[1] - expected).abs() <= 1e-12);

        assert!(matches!(
            pool_text_embeddings(&[]),
            Err(PipelineError::EmptyInput)
        ));
    }

    #[test]
    fn fusion_boundaries_and_hand_case() {
        let mid = FusionWeight::new(0.6).unwrap();
        assert_eq!(fuse(0.3, 0.9, FusionWeight::TEXT_ONLY), 0.3);
        assert_eq!(fuse(0.3, 0.9, FusionWeight::IMAGE_ONLY), 0.9);
        assert!((fuse(0.8, 0.5, mid) - 0.68).abs() <= 1e-12);

        assert!(FusionWeight::new(-0.1).is_err());
        assert!(FusionWeight::new(1.1).is_err());
    }

    fn store_of(entries: &[(&str, &[f64])]) -> ConceptStore {
        let records = entries
            .iter()
            .map(|(id, values)| ConceptRecord {
                concept_id: id.to_string(),
                gloss: format!("gloss of {id}"),
                emotion_tags: vec![],
                embedding: Embedding::unit(values.to_vec(), Modality::Text).unwrap(),
            })
            .collect();
        ConceptStore::from_records(records, "test").unwrap()
    }

    #[test]
    fn topk_orders_by_fused_score() {
        // Axis-aligned concepts: lambda_t equals the matching text component.
        let store = store_of(&[
            ("a", &[1.0, 0.0, 0.0]),
            ("b", &[0.0, 1.0, 0.0]),
            ("c", &[0.0, 0.0, 1.0]),
        ]);
        let text = text_vec(&[0.9, 0.5, 0.7]);
        let image = image_vec(&[0.9, 0.5, 0.7]);
        let result = retrieve_topk(&store, &text, &image, FusionWeight::TEXT_ONLY, 2).unwrap();
        assert_eq!(
            result
                .items
                .iter()
                .map(|s| s.concept_id.as_str())
                .collect::<Vec<_>>(),
            vec!["a", "c"]
        );
    }

    #[test]
    fn topk_exhaustive_when_k_exceeds_store() {
        let store = store_of(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let text = text_vec(&[1.0, 0.5]);
        let image = image_vec(&[1.0, 0.5]);
        let result = retrieve_topk(&store, &text, &image, FusionWeight::TEXT_ONLY, 10).unwrap();
        assert_eq!(result.items.len(), 2);
        assert_eq!(result.k, 10);
        assert!(result.items[0].lambda_m >= result.items[1].lambda_m);
    }

    #[test]
    fn exact_ties_break_by_ascending_id() {
        // Identical embeddings: identical scores, x1 must precede x2.
        let store = store_of(&[("x2", &[1.0, 0.0]), ("x1", &[1.0, 0.0]), ("y", &[0.0, 1.0])]);
        let text = text_vec(&[1.0, 0.0]);
        let image = image_vec(&[1.0, 0.0]);
        let result =
            retrieve_topk(&store, &text, &image, FusionWeight::new(0.5).unwrap(), 2).unwrap();
        assert_eq!(
            result
                .items
                .iter()
                .map(|s| s.concept_id.as_str())
                .collect::<Vec<_>>(),
            vec!["x1", "x2"]
        );
    }

    #[test]
    fn boundary_alphas_ignore_the_unused_modality() {
        let store = store_of(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let text = text_vec(&[1.0, 0.2]);
        let image_one = image_vec(&[0.1, 1.0]);
        let image_two = image_vec(&[1.0, -0.4]);

        let with_one =
            retrieve_topk(&store, &text, &image_one, FusionWeight::TEXT_ONLY, 2).unwrap();
        let with_two =
            retrieve_topk(&store, &text, &image_two, FusionWeight::TEXT_ONLY, 2).unwrap();
        assert_eq!(
            with_one
                .items
                .iter()
                .map(|s| (s.concept_id.clone(), s.lambda_m))
                .collect::<Vec<_>>(),
            with_two
                .items
                .iter()
                .map(|s| (s.concept_id.clone(), s.lambda_m))
                .collect::<Vec<_>>()
        );

        let text_one = text_vec(&[1.0, 0.2]);
        let text_two = text_vec(&[-0.3, 0.9]);
        let img = image_vec(&[0.1, 1.0]);
        let a = retrieve_topk(&store, &text_one, &img, FusionWeight::IMAGE_ONLY, 2).unwrap();
        let b = retrieve_topk(&store, &text_two, &img, FusionWeight::IMAGE_ONLY, 2).unwrap();
        assert_eq!(
            a.items
                .iter()
                .map(|s| (s.concept_id.clone(), s.lambda_m))
                .collect::<Vec<_>>(),
            b.items
                .iter()
                .map(|s| (s.concept_id.clone(), s.lambda_m))
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn dimension_mismatch_detected() {
        let store = store_of(&[("a", &[1.0, 0.0])]);
        let text = text_vec(&[1.0, 0.0, 0.0]);
        let image = image_vec(&[1.0, 0.0]);
        assert!(matches!(
            retrieve_topk(&store, &text, &image, FusionWeight::TEXT_ONLY, 1),
            Err(PipelineError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn topk_matches_full_sort_on_a_large_store() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(424242);
        let unit = |rng: &mut rand_chacha::ChaCha20Rng| loop {
            let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                return v.iter().map(|x| x / n).collect::<Vec<f64>>();
            }
        };
        let records: Vec<ConceptRecord> = (0..10_000)
            .map(|i| ConceptRecord {
                concept_id: format!("c{i:05}"),
                gloss: String::new(),
                emotion_tags: vec![],
                embedding: Embedding::raw(unit(&mut rng), Modality::Text),
            })
            .collect();
        let store = ConceptStore::from_records(records, "large").unwrap();
        let text = Embedding::raw(unit(&mut rng), Modality::Text);
        let image = Embedding::raw(unit(&mut rng), Modality::Image);
        let alpha = FusionWeight::new(0.6).unwrap();
        let got = retrieve_topk(&store, &text, &image, alpha, 25).unwrap();

        let mut oracle: Vec<(f64, String)> = store
            .records()
            .iter()
            .map(|r| {
                let lt = cosine(&text, &r.embedding).unwrap();
                let lv = cosine(&image, &r.embedding).unwrap();
                (fuse(lt, lv, alpha), r.concept_id.clone())
            })
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        for (g, o) in got.items.iter().zip(oracle.iter().take(25)) {
            assert_eq!(g.concept_id, o.1);
            assert_eq!(g.lambda_m, o.0);
        }
    }

    #[test]
    fn all_empty_replies_flag_empty_extraction() {
        use crate::gateway::mock::FnBackend;
        use crate::gateway::ModelGateway;
        use crate::prompts::PromptSet;
        use crate::taxonomy::dataset_profile;

        let dir = tempfile::tempdir().unwrap();
        let image = dir.path().join("img.bin");
        std::fs::write(&image, b"img").unwrap();
        let profile = dataset_profile("emotion6").unwrap();
        let mut prompts = PromptSet::new(&profile, 1, 1);
        prompts.add_objective("Describe the scene.");
        let gateway = ModelGateway::for_tests(Box::new(FnBackend::new(|_, _| Ok("".into()))));
        let result = extract_vecs(&gateway, &prompts, &image, "digest-x", 1);
        assert!(matches!(
            result,
            Err(PipelineError::EmptyExtraction { ref image_digest }) if image_digest == "digest-x"
        ));
    }

    #[test]
    fn flatten_orders_descriptive_then_elicitive() {
        use std::collections::BTreeMap;
        let mut elicitive = BTreeMap::new();
        elicitive.insert(
            crate::taxonomy::EmotionLabel::new("fear"),
            vec!["Dark Corner".to_string(), "warm light".to_string()],
        );
        let extraction = PromptExtraction {
            image_digest: "d".into(),
            descriptive: vec!["warm light".to_string(), "kite".to_string()],
            elicitive,
            per_prompt: BTreeMap::new(),
        };
        let flat = CueExtraction::from_prompt_extraction(&extraction);
        // "warm light" from the elicitive list is a case-insensitive duplicate.
        assert_eq!(flat.phrases, vec!["warm light", "kite", "Dark Corner"]);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn unit(values: Vec<f64>) -> Option<Vec<f64>> {
        let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-6 {
            return None;
        }
        Some(values.iter().map(|v| v / norm).collect())
    }

    proptest! {
        /// Partial-selection retrieval agrees with a full stable sort,
        /// item for item, for any store of up to a few hundred records.
        #[test]
        fn topk_equals_sort_all_then_truncate(
            seeds in proptest::collection::vec(
                proptest::collection::vec(-1.0f64..1.0, 4), 2..60),
            query in proptest::collection::vec(-1.0f64..1.0, 8),
            k in 1usize..20,
            alpha in 0.0f64..=1.0,
        ) {
            let records: Vec<ConceptRecord> = seeds
                .iter()
                .filter_map(|values| unit(values.clone()))
                .enumerate()
                .map(|(i, values)| ConceptRecord {
                    concept_id: format!("c{i:03}"),
                    gloss: format!("g{i}"),
                    emotion_tags: vec![],
                    embedding: Embedding::raw(values, Modality::Text),
                })
                .collect();
            prop_assume!(!records.is_empty());
            let store = ConceptStore::from_records(records, "prop").unwrap();

            let Some(text_values) = unit(query[..4].to_vec()) else { return Ok(()) };
            let Some(image_values) = unit(query[4..].to_vec()) else { return Ok(()) };
            let text = Embedding::raw(text_values, Modality::Text);
            let image = Embedding::raw(image_values, Modality::Image);
            let alpha = FusionWeight::new(alpha).unwrap();

            let got = retrieve_topk(&store, &text, &image, alpha, k).unwrap();

            let mut oracle: Vec<ScoredConcept> = store
                .records()
                .iter()
                .map(|r| {
                    let lt = cosine(&text, &r.embedding).unwrap();
                    let lv = cosine(&image, &r.embedding).unwrap();
                    ScoredConcept {
                        concept_id: r.concept_id.clone(),
                        gloss: r.gloss.clone(),
                        lambda_t: lt,
                        lambda_v: lv,
                        lambda_m: fuse(lt, lv, alpha),
                    }
                })
                .collect();
            oracle.sort_by(|a, b| {
                b.lambda_m
                    .partial_cmp(&a.lambda_m)
                    .unwrap()
                    .then_with(|| a.concept_id.cmp(&b.concept_id))
            });
            oracle.truncate(k);

            prop_assert_eq!(got.items.len(), k.min(store.len()));
            for (g, o) in got.items.iter().zip(&oracle) {
                prop_assert_eq!(&g.concept_id, &o.concept_id);
                prop_assert_eq!(g.lambda_m, o.lambda_m);
            }
        }

        /// Every fused score stays within [-1, 1] for in-range inputs.
        #[test]
        fn fusion_is_bounded(
            lt in -1.0f64..=1.0,
            lv in -1.0f64..=1.0,
            alpha in 0.0f64..=1.0,
        ) {
            let fused = fuse(lt, lv, FusionWeight::new(alpha).unwrap());
            prop_assert!((-1.0..=1.0).contains(&fused));
        }
    }
}
