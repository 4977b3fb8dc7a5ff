//! Evaluation reports: structured metrics plus a rendered fixed-width table
//! with per-emotion accuracy/F1 columns, an overall column, and `--` cells
//! for emotions a profile does not define.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{ManifestEntry, Split};
use super::{
    accuracy_per_emotion, avg_f1, balanced_f1, overall_accuracy, EvalError, OverallMode,
    PredictionRecord, Predictions,
};
use crate::taxonomy::{EmotionSet, ProfileRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionMetrics {
    /// Per-emotion accuracy; `None` when the emotion has no test positives.
    pub accuracy: Option<f64>,
    pub f1_rounds: Option<Vec<f64>>,
    pub f1_mean: Option<f64>,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundCounts {
    pub seed: u64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_ids: Vec<String>,
    /// Display column order, including vocabulary-absent slots rendered `--`.
    pub columns: Vec<String>,
    pub per_emotion: BTreeMap<String, EmotionMetrics>,
    pub counts: BTreeMap<String, Vec<RoundCounts>>,
    pub overall_accuracy: f64,
    pub avg_f1: Option<f64>,
    pub overall_mode: OverallMode,
    pub base_seed: u64,
    pub test_entries: usize,
}

/// Scores a prediction set over the manifest's test split.
pub fn build_report(
    predictions: &Predictions,
    entries: &[ManifestEntry],
    registry: &ProfileRegistry,
    base_seed: u64,
    mode: OverallMode,
) -> Result<EvalReport, EvalError> {
    let test: Vec<ManifestEntry> = entries
        .iter()
        .filter(|e| e.split == Split::Test)
        .cloned()
        .collect();
    if test.is_empty() {
        return Err(EvalError::EmptyTestSplit);
    }
    for entry in &test {
        if !predictions.contains_key(&entry.digest) {
            return Err(EvalError::MissingPrediction(entry.digest.clone()));
        }
    }

    let mut dataset_ids: Vec<String> = test.iter().map(|e| e.dataset_id.clone()).collect();
    dataset_ids.sort();
    dataset_ids.dedup();

    let vocabulary = registry.union_profile(&dataset_ids)?.vocabulary;
    let columns = display_columns(&dataset_ids, registry)?;

    let mut per_emotion = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for emotion in vocabulary.iter() {
        let accuracy = accuracy_per_emotion(predictions, &test, emotion)?;
        let positives = test
            .iter()
            .filter(|e| e.ground_truth.contains(emotion))
            .count();
        let (f1_rounds, f1_mean) = if positives == 0 {
            (None, None)
        } else {
            let (rounds, mean) = balanced_f1(predictions, &test, emotion, base_seed)?;
            counts.insert(
                emotion.to_string(),
                rounds
                    .iter()
                    .map(|r| RoundCounts {
                        seed: r.seed,
                        true_positives: r.true_positives,
                        false_positives: r.false_positives,
                        false_negatives: r.false_negatives,
                        total: r.positive_digests.len() + r.negative_digests.len(),
                    })
                    .collect(),
            );
            (
                Some(rounds.iter().map(|r| r.f1).collect::<Vec<f64>>()),
                Some(mean),
            )
        };
        per_emotion.insert(
            emotion.to_string(),
            EmotionMetrics {
                accuracy,
                f1_rounds,
                f1_mean,
                positives,
            },
        );
    }

    let overall = overall_accuracy(predictions, &test, &vocabulary, mode)?;
    let avg = avg_f1(per_emotion.values().map(|m| m.f1_mean));

    Ok(EvalReport {
        dataset_ids,
        columns,
        per_emotion,
        counts,
        overall_accuracy: overall,
        avg_f1: avg,
        overall_mode: mode,
        base_seed,
        test_entries: test.len(),
    })
}

/// The table's emotion columns: each dataset's vocabulary in order, plus a
/// trailing `neutral` slot for profiles that deliberately exclude it.
fn display_columns(
    dataset_ids: &[String],
    registry: &ProfileRegistry,
) -> Result<Vec<String>, EvalError> {
    let mut columns: Vec<String> = Vec::new();
    let mut needs_neutral_slot = false;
    for id in dataset_ids {
        let profile = registry.get(id)?;
        for label in profile.vocabulary.iter() {
            if !columns.iter().any(|c| c == label.as_str()) {
                columns.push(label.as_str().to_string());
            }
        }
        needs_neutral_slot |= !profile.includes_neutral;
    }
    if needs_neutral_slot && !columns.iter().any(|c| c == "neutral") {
        columns.push("neutral".to_string());
    }
    Ok(columns)
}

fn cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.2}"),
        None => "--".to_string(),
    }
}

/// Renders the report as a fixed-width table: one `acc` row and one `f1`
/// row across emotion columns, with the overall accuracy and average F1 in
/// the final column.
pub fn render_table(report: &EvalReport) -> String {
    let mut widths: Vec<usize> = Vec::new();
    for column in &report.columns {
        widths.push(column.len().max(6) + 2);
    }
    let overall_width = "overall".len() + 2;
    let label_width = "metric".len() + 2;

    let mut out = String::new();
    out.push_str(&format!("datasets: {}\n", report.dataset_ids.join(", ")));
    out.push_str(&format!("{:<label_width$}", "metric"));
    for (column, width) in report.columns.iter().zip(&widths) {
        out.push_str(&format!("{column:>width$}"));
    }
    out.push_str(&format!("{:>overall_width$}\n", "overall"));

    out.push_str(&format!("{:<label_width$}", "acc"));
    for (column, width) in report.columns.iter().zip(&widths) {
        let value = report.per_emotion.get(column).and_then(|m| m.accuracy);
        out.push_str(&format!("{:>width$}", cell(value)));
    }
    out.push_str(&format!(
        "{:>overall_width$}\n",
        cell(Some(report.overall_accuracy))
    ));

    out.push_str(&format!("{:<label_width$}", "f1"));
    for (column, width) in report.columns.iter().zip(&widths) {
        let value = report.per_emotion.get(column).and_then(|m| m.f1_mean);
        out.push_str(&format!("{:>width$}", cell(value)));
    }
    out.push_str(&format!("{:>overall_width$}\n", cell(report.avg_f1)));
    out
}

pub fn save_report(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let json = serde_json::to_string_pretty(report).expect("serializable");
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<EvalReport, EvalError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| EvalError::PredictionParse {
        line: 0,
        detail: format!("bad report file '{}': {e}", path.display()),
    })
}

/// Reads a line-delimited prediction file.
pub fn load_prediction_records(path: &Path) -> Result<Vec<PredictionRecord>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(line).map_err(|e| EvalError::PredictionParse {
                line: idx + 1,
                detail: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Clamps raw predicted labels to each entry's profile vocabulary and keys
/// them by image digest.
pub fn predictions_from_records(
    records: &[PredictionRecord],
    entries: &[ManifestEntry],
    registry: &ProfileRegistry,
) -> Result<Predictions, EvalError> {
    let mut by_digest: BTreeMap<&str, &ManifestEntry> = BTreeMap::new();
    for entry in entries {
        by_digest.entry(entry.digest.as_str()).or_insert(entry);
    }
    let mut predictions = Predictions::new();
    for record in records {
        let Some(entry) = by_digest.get(record.image_digest.as_str()) else {
            continue; // predictions for images outside the manifest are ignored
        };
        let profile = registry.get(&entry.dataset_id)?;
        let set = EmotionSet::from_labels(profile, record.predicted.iter());
        predictions.insert(record.image_digest.clone(), set);
    }
    Ok(predictions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::dataset_profile;
    use std::path::PathBuf;

    fn entry(digest: &str, dataset: &str, labels: &[&str]) -> ManifestEntry {
        let profile = dataset_profile(dataset).unwrap();
        ManifestEntry {
            image: PathBuf::from(format!("{digest}.img")),
            digest: digest.to_string(),
            ground_truth: EmotionSet::from_labels(&profile, labels.iter().copied()),
            dataset_id: dataset.into(),
            split: Split::Test,
        }
    }

    fn perfect_predictions(entries: &[ManifestEntry]) -> Predictions {
        entries
            .iter()
            .map(|e| (e.digest.clone(), e.ground_truth.clone()))
            .collect()
    }

    fn emoset_fixture() -> (Vec<ManifestEntry>, Predictions) {
        let labels = ["sadness", "joy", "fear", "disgust", "anger", "surprise"];
        let mut entries = Vec::new();
        for (i, label) in labels.iter().enumerate() {
            entries.push(entry(&format!("img{i}a"), "emoset", &[label]));
            entries.push(entry(&format!("img{i}b"), "emoset", &[label]));
        }
        let predictions = perfect_predictions(&entries);
        (entries, predictions)
    }

    #[test]
    fn emoset_report_has_neutral_dash_column() {
        let (entries, predictions) = emoset_fixture();
        let registry = ProfileRegistry::builtin();
        let report =
            build_report(&predictions, &entries, &registry, 7, OverallMode::Micro).unwrap();
        assert_eq!(report.columns.last().unwrap(), "neutral");
        assert!(!report.per_emotion.contains_key("neutral"));
        assert_eq!(report.overall_accuracy, 1.0);
        assert_eq!(report.avg_f1, Some(1.0));

        let table = render_table(&report);
        assert!(table.contains("neutral"));
        assert!(table.contains("--"));
        assert!(table.contains("overall"));
    }

    #[test]
    fn report_roundtrips_losslessly() {
        let (entries, predictions) = emoset_fixture();
        let registry = ProfileRegistry::builtin();
        let report =
            build_report(&predictions, &entries, &registry, 7, OverallMode::Micro).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        save_report(&report, &path).unwrap();
        let loaded = load_report(&path).unwrap();
        assert_eq!(report, loaded);
    }

    #[test]
    fn identical_seeds_identical_reports() {
        let (entries, predictions) = emoset_fixture();
        let registry = ProfileRegistry::builtin();
        let a = build_report(&predictions, &entries, &registry, 11, OverallMode::Micro).unwrap();
        let b = build_report(&predictions, &entries, &registry, 11, OverallMode::Micro).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn f1_mean_matches_rounds_mean() {
        let (entries, mut predictions) = emoset_fixture();
        // Break a few predictions so scores are non-trivial.
        let profile = dataset_profile("emoset").unwrap();
        predictions.insert("img0a".into(), EmotionSet::from_labels(&profile, ["joy"]));
        predictions.insert(
            "img2a".into(),
            EmotionSet::from_labels(&profile, ["sadness"]),
        );
        let registry = ProfileRegistry::builtin();
        let report =
            build_report(&predictions, &entries, &registry, 3, OverallMode::Micro).unwrap();
        for metrics in report.per_emotion.values() {
            let rounds = metrics.f1_rounds.as_ref().unwrap();
            let mean = rounds.iter().sum::<f64>() / rounds.len() as f64;
            assert!((metrics.f1_mean.unwrap() - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn prediction_records_roundtrip_and_clamp() {
        let entries = vec![entry("d1", "emoset", &["joy"])];
        let records = vec![PredictionRecord {
            image_digest: "d1".into(),
            predicted: vec!["joy".into(), "neutral".into()],
            provenance: super::super::Provenance {
                prompt_version: 0,
                prompt_hash: "h".into(),
                store_checksum: None,
                config_hash: "c".into(),
            },
        }];
        let registry = ProfileRegistry::builtin();
        let predictions = predictions_from_records(&records, &entries, &registry).unwrap();
        // "neutral" is outside the emoset vocabulary and clamped away.
        assert_eq!(predictions["d1"].render(), "joy");
    }
}
