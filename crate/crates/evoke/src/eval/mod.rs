//! Evaluation protocol: per-emotion accuracy, balanced F1 with three rounds
//! of seeded negative resampling, and the unweighted average F1.
//!
//! Accuracy for an emotion is the share of its annotated images whose
//! prediction contains it. F1 pairs the n positives of an emotion with n
//! sampled negatives and scores `2·TP / (2·TP + FP + FN)` over the balanced
//! set, repeated for three rounds with different samples.

pub mod manifest;
pub mod report;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{EmotionLabel, EmotionSet, TaxonomyError};
use manifest::ManifestEntry;

pub const F1_ROUNDS: usize = 3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("manifest parse error at {path}:{line}: {detail}")]
    ManifestParse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("split leakage: image digest {digest} appears in splits '{a}' and '{b}'")]
    SplitLeakage {
        digest: String,
        a: String,
        b: String,
    },
    #[error("missing prediction for image digest {0}")]
    MissingPrediction(String),
    #[error("emotion '{emotion}' needs {needed} negatives but only {available} exist")]
    InsufficientNegatives {
        emotion: String,
        needed: usize,
        available: usize,
    },
    #[error("no positive test examples for emotion '{0}'")]
    NoPositives(String),
    #[error("empty test split")]
    EmptyTestSplit,
    #[error("degenerate selection: per-emotion count must be at least 1")]
    DegenerateSelection,
    #[error("insufficient data: {detail}")]
    InsufficientData { detail: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad prediction file at line {line}: {detail}")]
    PredictionParse { line: usize, detail: String },
}

/// Predictions keyed by image content digest.
pub type Predictions = BTreeMap<String, EmotionSet>;

/// One prediction as persisted in the run's prediction file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_digest: String,
    pub predicted: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub prompt_version: u32,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_checksum: Option<String>,
    pub config_hash: String,
}

fn lookup<'a>(
    predictions: &'a Predictions,
    entry: &ManifestEntry,
) -> Result<&'a EmotionSet, EvalError> {
    predictions
        .get(&entry.digest)
        .ok_or_else(|| EvalError::MissingPrediction(entry.digest.clone()))
}

/// `#TP_e / #Total_e` over the test entries annotated with `e`;
/// `None` when no entry carries the emotion (rendered as `--`).
pub fn accuracy_per_emotion(
    predictions: &Predictions,
    test: &[ManifestEntry],
    emotion: &EmotionLabel,
) -> Result<Option<f64>, EvalError> {
    let mut total = 0usize;
    let mut tp = 0usize;
    for entry in test.iter().filter(|e| e.ground_truth.contains(emotion)) {
        total += 1;
        if lookup(predictions, entry)?.contains(emotion) {
            tp += 1;
        }
    }
    if total == 0 {
        return Ok(None);
    }
    Ok(Some(tp as f64 / total as f64))
}

/// Confusion counts for one balanced round, with the exact membership that
/// produced them so independent checks can recompute the score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalancedRound {
    pub seed: u64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub f1: f64,
    pub positive_digests: Vec<String>,
    pub negative_digests: Vec<String>,
}

/// The balanced F1 formula over raw confusion counts.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denominator = 2 * tp + fp + fn_;
    if denominator == 0 {
        return 0.0;
    }
    (2 * tp) as f64 / denominator as f64
}

/// Derives the seed for one resampling round from the run's base seed.
pub fn round_seed(base_seed: u64, round_index: u64) -> u64 {
    base_seed.wrapping_mul(1000).wrapping_add(round_index)
}

/// Three rounds of balanced F1 for one emotion: each round pairs the n
/// positives with n seeded, replacement-free negative samples.
pub fn balanced_f1(
    predictions: &Predictions,
    test: &[ManifestEntry],
    emotion: &EmotionLabel,
    base_seed: u64,
) -> Result<(Vec<BalancedRound>, f64), EvalError> {
    let positives: Vec<&ManifestEntry> = test
        .iter()
        .filter(|e| e.ground_truth.contains(emotion))
        .collect();
    let mut negatives: Vec<&ManifestEntry> = test
        .iter()
        .filter(|e| !e.ground_truth.contains(emotion))
        .collect();
    negatives.sort_by(|a, b| a.digest.cmp(&b.digest));

    let n = positives.len();
    if n == 0 {
        return Err(EvalError::NoPositives(emotion.to_string()));
    }
    if negatives.len() < n {
        return Err(EvalError::InsufficientNegatives {
            emotion: emotion.to_string(),
            needed: n,
            available: negatives.len(),
        });
    }

    let mut rounds = Vec::with_capacity(F1_ROUNDS);
    for round in 1..=F1_ROUNDS as u64 {
        let seed = round_seed(base_seed, round);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let sampled = rand::seq::index::sample(&mut rng, negatives.len(), n);

        let mut tp = 0usize;
        for entry in &positives {
            if lookup(predictions, entry)?.contains(emotion) {
                tp += 1;
            }
        }
        let fn_ = n - tp;
        let mut fp = 0usize;
        let mut negative_digests = Vec::with_capacity(n);
        for i in sampled.iter() {
            let entry = negatives[i];
            if lookup(predictions, entry)?.contains(emotion) {
                fp += 1;
            }
            negative_digests.push(entry.digest.clone());
        }
        negative_digests.sort();
        let mut positive_digests: Vec<String> =
            positives.iter().map(|e| e.digest.clone()).collect();
        positive_digests.sort();

        rounds.push(BalancedRound {
            seed,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            f1: f1_from_counts(tp, fp, fn_),
            positive_digests,
            negative_digests,
        });
    }
    let mean = rounds.iter().map(|r| r.f1).sum::<f64>() / rounds.len() as f64;
    Ok((rounds, mean))
}

/// Unweighted mean over emotions with a defined F1.
pub fn avg_f1<I: IntoIterator<Item = Option<f64>>>(means: I) -> Option<f64> {
    let defined: Vec<f64> = means.into_iter().flatten().collect();
    if defined.is_empty() {
        return None;
    }
    Some(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OverallMode {
    /// Emotion-instance totals pooled across emotions.
    #[default]
    Micro,
    /// Mean of the defined per-emotion accuracies.
    Macro,
}

/// Overall accuracy across the vocabulary.
pub fn overall_accuracy(
    predictions: &Predictions,
    test: &[ManifestEntry],
    vocabulary: &EmotionSet,
    mode: OverallMode,
) -> Result<f64, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSplit);
    }
    match mode {
        OverallMode::Micro => {
            let mut tp_sum = 0usize;
            let mut total_sum = 0usize;
            for emotion in vocabulary.iter() {
                for entry in test.iter().filter(|e| e.ground_truth.contains(emotion)) {
                    total_sum += 1;
                    if lookup(predictions, entry)?.contains(emotion) {
                        tp_sum += 1;
                    }
                }
            }
            if total_sum == 0 {
                return Err(EvalError::EmptyTestSplit);
            }
            Ok(tp_sum as f64 / total_sum as f64)
        }
        OverallMode::Macro => {
            let mut accs = Vec::new();
            for emotion in vocabulary.iter() {
                if let Some(acc) = accuracy_per_emotion(predictions, test, emotion)? {
                    accs.push(acc);
                }
            }
            if accs.is_empty() {
                return Err(EvalError::EmptyTestSplit);
            }
            Ok(accs.iter().sum::<f64>() / accs.len() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::dataset_profile;
    use std::path::PathBuf;

    fn entry(digest: &str, labels: &[&str]) -> ManifestEntry {
        let profile = dataset_profile("emotion6").unwrap();
        ManifestEntry {
            image: PathBuf::from(format!("{digest}.img")),
            digest: digest.to_string(),
            ground_truth: EmotionSet::from_labels(&profile, labels.iter().copied()),
            dataset_id: "emotion6".into(),
            split: manifest::Split::Test,
        }
    }

    fn predict(entries: &[(&str, &[&str])]) -> Predictions {
        let profile = dataset_profile("emotion6").unwrap();
        entries
            .iter()
            .map(|(digest, labels)| {
                (
                    digest.to_string(),
                    EmotionSet::from_labels(&profile, labels.iter().copied()),
                )
            })
            .collect()
    }

    fn sadness() -> EmotionLabel {
        EmotionLabel::new("sadness")
    }

    #[test]
    fn accuracy_counts_true_positives() {
        // 4 positives, 3 predicted correctly.
        let test = vec![
            entry("a", &["sadness"]),
            entry("b", &["sadness"]),
            entry("c", &["sadness", "fear"]),
            entry("d", &["sadness"]),
            entry("e", &["joy"]),
        ];
        let predictions = predict(&[
            ("a", &["sadness"]),
            ("b", &["sadness", "joy"]),
            ("c", &["fear"]),
            ("d", &["sadness"]),
            ("e", &["joy"]),
        ]);
        let acc = accuracy_per_emotion(&predictions, &test, &sadness()).unwrap();
        assert_eq!(acc, Some(0.75));
    }

    #[test]
    fn accuracy_perfect_and_undefined() {
        let test = vec![entry("a", &["sadness"]), entry("b", &["joy"])];
        let predictions = predict(&[("a", &["sadness"]), ("b", &["joy"])]);
        assert_eq!(
            accuracy_per_emotion(&predictions, &test, &sadness()).unwrap(),
            Some(1.0)
        );
        // No entry is annotated "fear": undefined.
        assert_eq!(
            accuracy_per_emotion(&predictions, &test, &EmotionLabel::new("fear")).unwrap(),
            None
        );
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let test = vec![entry("a", &["sadness"])];
        let predictions = Predictions::new();
        assert!(matches!(
            accuracy_per_emotion(&predictions, &test, &sadness()),
            Err(EvalError::MissingPrediction(_))
        ));
    }

    #[test]
    fn f1_formula_hand_cases() {
        assert_eq!(f1_from_counts(3, 1, 1), 0.75); // 6/8
        assert_eq!(f1_from_counts(0, 2, 3), 0.0);
        assert_eq!(f1_from_counts(5, 0, 0), 1.0);
        assert_eq!(f1_from_counts(0, 0, 0), 0.0);
    }

    #[test]
    fn balanced_rounds_are_balanced_and_leak_free() {
        let test = vec![
            entry("p1", &["sadness"]),
            entry("p2", &["sadness"]),
            entry("p3", &["sadness"]),
            entry("n1", &["joy"]),
            entry("n2", &["fear"]),
            entry("n3", &["anger"]),
            entry("n4", &["surprise"]),
        ];
        let predictions = predict(&[
            ("p1", &["sadness"]),
            ("p2", &["sadness"]),
            ("p3", &["joy"]),
            ("n1", &["sadness"]),
            ("n2", &["fear"]),
            ("n3", &["anger"]),
            ("n4", &["sadness"]),
        ]);
        let (rounds, mean) = balanced_f1(&predictions, &test, &sadness(), 42).unwrap();
        assert_eq!(rounds.len(), 3);
        for round in &rounds {
            assert_eq!(round.positive_digests.len(), 3);
            assert_eq!(round.negative_digests.len(), 3);
            for digest in &round.negative_digests {
                let negative = test.iter().find(|e| &e.digest == digest).unwrap();
                assert!(!negative.ground_truth.contains(&sadness()));
            }
            assert_eq!(round.true_positives + round.false_negatives, 3);
            assert_eq!(
                round.f1,
                f1_from_counts(
                    round.true_positives,
                    round.false_positives,
                    round.false_negatives
                )
            );
        }
        let expected = rounds.iter().map(|r| r.f1).sum::<f64>() / 3.0;
        assert!((mean - expected).abs() <= 1e-12);

        // Same seed reproduces byte-identical rounds.
        let (again, _) = balanced_f1(&predictions, &test, &sadness(), 42).unwrap();
        for (a, b) in rounds.iter().zip(&again) {
            assert_eq!(a.negative_digests, b.negative_digests);
            assert_eq!(a.f1, b.f1);
        }
    }

    #[test]
    fn balanced_f1_boundary_predictors() {
        let test = vec![
            entry("p1", &["sadness"]),
            entry("p2", &["sadness"]),
            entry("n1", &["joy"]),
            entry("n2", &["fear"]),
        ];
        let perfect = predict(&[
            ("p1", &["sadness"]),
            ("p2", &["sadness"]),
            ("n1", &["joy"]),
            ("n2", &["fear"]),
        ]);
        let (rounds, mean) = balanced_f1(&perfect, &test, &sadness(), 1).unwrap();
        assert!(rounds.iter().all(|r| r.f1 == 1.0));
        assert_eq!(mean, 1.0);

        let never = predict(&[
            ("p1", &["joy"]),
            ("p2", &["fear"]),
            ("n1", &["joy"]),
            ("n2", &["fear"]),
        ]);
        let (rounds, mean) = balanced_f1(&never, &test, &sadness(), 1).unwrap();
        assert!(rounds.iter().all(|r| r.f1 == 0.0));
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn insufficient_negatives_detected() {
        let test = vec![
            entry("p1", &["sadness"]),
            entry("p2", &["sadness"]),
            entry("n1", &["joy"]),
        ];
        let predictions = predict(&[("p1", &["sadness"]), ("p2", &["sadness"]), ("n1", &["joy"])]);
        assert!(matches!(
            balanced_f1(&predictions, &test, &sadness(), 1),
            Err(EvalError::InsufficientNegatives {
                needed: 2,
                available: 1,
                ..
            })
        ));
    }

    #[test]
    fn avg_f1_cases() {
        assert_eq!(avg_f1([Some(0.5), Some(0.5)]), Some(0.5));
        let mean = avg_f1([Some(0.2), Some(0.4), Some(0.6)]).unwrap();
        assert!((mean - 0.4).abs() <= 1e-12);
        assert_eq!(avg_f1([Some(0.2), None, Some(0.6)]), Some(0.4));
        assert_eq!(avg_f1([None, None]), None);
    }

    #[test]
    fn overall_micro_pools_instances() {
        let profile = dataset_profile("emotion6").unwrap();
        // Two emotions with (TP, Total) = (3, 4) and (1, 4) -> 4/8.
        let test = vec![
            entry("a", &["sadness"]),
            entry("b", &["sadness"]),
            entry("c", &["sadness"]),
            entry("d", &["sadness"]),
            entry("e", &["joy"]),
            entry("f", &["joy"]),
            entry("g", &["joy"]),
            entry("h", &["joy"]),
        ];
        let predictions = predict(&[
            ("a", &["sadness"]),
            ("b", &["sadness"]),
            ("c", &["sadness"]),
            ("d", &["fear"]),
            ("e", &["joy"]),
            ("f", &["fear"]),
            ("g", &["fear"]),
            ("h", &["fear"]),
        ]);
        let overall =
            overall_accuracy(&predictions, &test, &profile.vocabulary, OverallMode::Micro).unwrap();
        assert!((overall - 0.5).abs() <= 1e-12);

        let single = vec![entry("a", &["sadness"]), entry("b", &["sadness"])];
        let single_pred = predict(&[("a", &["sadness"]), ("b", &["joy"])]);
        let overall = overall_accuracy(
            &single_pred,
            &single,
            &profile.vocabulary,
            OverallMode::Micro,
        )
        .unwrap();
        let acc = accuracy_per_emotion(&single_pred, &single, &sadness())
            .unwrap()
            .unwrap();
        assert_eq!(overall, acc);

        assert!(matches!(
            overall_accuracy(&predictions, &[], &profile.vocabulary, OverallMode::Micro),
            Err(EvalError::EmptyTestSplit)
        ));
    }

    #[test]
    fn overall_lies_between_per_emotion_extremes() {
        let profile = dataset_profile("emotion6").unwrap();
        let test = vec![
            entry("a", &["sadness"]),
            entry("b", &["sadness"]),
            entry("c", &["joy"]),
            entry("d", &["fear"]),
        ];
        let predictions = predict(&[
            ("a", &["sadness"]),
            ("b", &["joy"]),
            ("c", &["joy"]),
            ("d", &["sadness"]),
        ]);
        let mut accs = Vec::new();
        for emotion in profile.vocabulary.iter() {
            if let Some(acc) = accuracy_per_emotion(&predictions, &test, emotion).unwrap() {
                accs.push(acc);
            }
        }
        let overall =
            overall_accuracy(&predictions, &test, &profile.vocabulary, OverallMode::Micro).unwrap();
        let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(overall >= min && overall <= max);
    }
}
