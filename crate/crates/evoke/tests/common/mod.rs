#![allow(dead_code)] // shared across test targets that use different parts

//! Shared fixtures for the acceptance suite: a 14-image manifest, a concept
//! corpus, and scripted mock backends that drive full end-to-end runs.

use std::path::{Path, PathBuf};

use evoke::gateway::content_digest;
use evoke::gateway::mock::{MockMatch, MockRule, MockScript};
use evoke::taxonomy::{dataset_profile, DatasetProfile, EmotionSet};

pub const EMOTIONS: [&str; 7] = [
    "sadness", "joy", "fear", "disgust", "anger", "surprise", "neutral",
];

/// How the scripted backend answers final judgment calls.
#[derive(Clone, Copy, PartialEq)]
pub enum JudgmentMode {
    /// Answer with the hidden ground truth.
    Oracle,
    /// Answer with the complement of the ground truth.
    Adversarial,
}

pub struct Fixture {
    pub root: PathBuf,
    pub images: Vec<FixtureImage>,
}

pub struct FixtureImage {
    pub name: String,
    pub digest: String,
    pub labels: Vec<&'static str>,
    pub split: &'static str,
}

pub fn profile() -> DatasetProfile {
    dataset_profile("emotion6").unwrap()
}

fn write_image(root: &Path, name: &str) -> String {
    let bytes = format!("fixture-image-{name}");
    std::fs::write(root.join(name), &bytes).unwrap();
    content_digest(bytes.as_bytes())
}

/// Builds the 14-image fixture: 3 reasoning images covering all seven
/// emotions, 4 few-shot images covering all seven, and 7 single-label test
/// images (one per emotion).
pub fn build_fixture(root: &Path, judgment: JudgmentMode) -> Fixture {
    std::fs::create_dir_all(root).unwrap();
    let spec: Vec<(&str, Vec<&'static str>, &str)> = vec![
        ("r1.img", vec!["sadness", "joy", "fear"], "reasoning"),
        ("r2.img", vec!["disgust", "anger"], "reasoning"),
        ("r3.img", vec!["surprise", "neutral"], "reasoning"),
        ("f1.img", vec!["sadness", "joy"], "fewshot"),
        ("f2.img", vec!["fear", "disgust"], "fewshot"),
        ("f3.img", vec!["anger", "surprise"], "fewshot"),
        ("f4.img", vec!["neutral"], "fewshot"),
        ("t1.img", vec!["sadness"], "test"),
        ("t2.img", vec!["joy"], "test"),
        ("t3.img", vec!["fear"], "test"),
        ("t4.img", vec!["disgust"], "test"),
        ("t5.img", vec!["anger"], "test"),
        ("t6.img", vec!["surprise"], "test"),
        ("t7.img", vec!["neutral"], "test"),
    ];

    let mut images = Vec::new();
    let mut manifest_lines = Vec::new();
    for (name, labels, split) in spec {
        let digest = write_image(root, name);
        manifest_lines.push(
            serde_json::json!({
                "image": name,
                "labels": labels,
                "dataset_id": "emotion6",
                "split": split,
            })
            .to_string(),
        );
        images.push(FixtureImage {
            name: name.to_string(),
            digest,
            labels,
            split,
        });
    }
    let manifest_path = root.join("manifest.jsonl");
    std::fs::write(&manifest_path, manifest_lines.join("\n")).unwrap();

    let corpus_path = root.join("concepts.jsonl");
    let concepts = [
        ("grief", "profound sense of loss"),
        ("delight", "bright uncomplicated pleasure"),
        ("menace", "looming sense of threat"),
        ("revulsion", "strong urge to turn away"),
        ("fury", "hot overwhelming anger"),
        ("astonishment", "sudden confrontation with the unexpected"),
        ("stillness", "quiet absence of strong feeling"),
        ("warmth", "comfort in familiar company"),
    ];
    let corpus_lines: Vec<String> = concepts
        .iter()
        .map(|(id, gloss)| serde_json::json!({"id": id, "gloss": gloss}).to_string())
        .collect();
    std::fs::write(&corpus_path, corpus_lines.join("\n")).unwrap();

    let script_path = root.join("mock.json");
    mock_script(&images, judgment).save(&script_path).unwrap();

    Fixture {
        root: root.to_path_buf(),
        images,
    }
}

fn judgment_reply(labels: &[&'static str], judgment: JudgmentMode) -> String {
    let profile = profile();
    let annotated = EmotionSet::from_labels(&profile, labels.iter().copied());
    let answer = match judgment {
        JudgmentMode::Oracle => annotated,
        JudgmentMode::Adversarial => annotated.complement(&profile),
    };
    format!("Emotions: {}", answer.render())
}

fn mock_script(images: &[FixtureImage], judgment: JudgmentMode) -> MockScript {
    let mut rules = Vec::new();

    // Final judgments, keyed by image content digest.
    for image in images.iter().filter(|i| i.split == "test") {
        rules.push(MockRule {
            matcher: MockMatch {
                regex: Some("Allowed emotions".into()),
                image_digest: Some(image.digest.clone()),
                ..Default::default()
            },
            respond: judgment_reply(&image.labels, judgment),
        });
    }

    rules.push(MockRule {
        matcher: MockMatch {
            regex: Some("Assign the most influential cues".into()),
            ..Default::default()
        },
        respond: r#"```json
{"1": ["Facial Expressions"], "2": ["Lighting"], "3": ["Color Palette"], "4": ["Weapons"], "5": ["Symbolism"], "6": ["Captions"]}
```"#
            .into(),
    });

    rules.push(MockRule {
        matcher: MockMatch {
            regex: Some("Reason contrastively".into()),
            ..Default::default()
        },
        respond: r#"```json
[{"emotion": "fear", "direction": "suppresses", "cue": "soft light", "category": 2, "rationale": "calm glow"},
 {"emotion": "disgust", "direction": "suppresses", "cue": "tidy scene", "category": 4, "rationale": "orderly"},
 {"emotion": "joy", "direction": "supports", "cue": "warm colors", "category": 3, "rationale": "cheerful palette"}]
```"#
            .into(),
    });

    rules.push(MockRule {
        matcher: MockMatch {
            regex: Some("OBJECTIVE description prompts".into()),
            ..Default::default()
        },
        respond: r#"```json
["Describe the scene in this image.", "List objects that stand out."]
```"#
            .into(),
    });

    let subjective: String = EMOTIONS
        .iter()
        .map(|e| format!("\"{e}\": [\"What hints at {e} here?\"]"))
        .collect::<Vec<_>>()
        .join(", ");
    rules.push(MockRule {
        matcher: MockMatch {
            regex: Some("SUBJECTIVE elicitation prompts".into()),
            ..Default::default()
        },
        respond: format!("```json\n{{{subjective}}}\n```"),
    });

    let verdicts: String =
        std::iter::once("{\"prompt_id\": \"o1\", \"verdict\": \"keep\"}".to_string())
            .chain(std::iter::once(
                "{\"prompt_id\": \"o2\", \"verdict\": \"keep\"}".to_string(),
            ))
            .chain(
                EMOTIONS
                    .iter()
                    .map(|e| format!("{{\"prompt_id\": \"s:{e}:1\", \"verdict\": \"keep\"}}")),
            )
            .collect::<Vec<_>>()
            .join(", ");
    rules.push(MockRule {
        matcher: MockMatch {
            regex: Some("Prompts under review".into()),
            ..Default::default()
        },
        respond: format!("```json\n[{verdicts}]\n```"),
    });

    // Extraction catch-all: every prompt surfaces the same two cues.
    rules.push(MockRule {
        matcher: MockMatch {
            regex: Some("List each relevant cue as a short phrase".into()),
            ..Default::default()
        },
        respond: "muted palette\nlone subject".into(),
    });

    MockScript {
        embedding_seed: 11,
        embedding_dim: 32,
        rules,
        default_response: None,
    }
}

/// Writes a config pointing at the fixture, with optional ablation lines.
pub fn write_config(fixture: &Fixture, run_name: &str, ablation: &str) -> PathBuf {
    let text = format!(
        r#"[backend]
kind = "mock"

[pipeline]
alpha = 0.6
top_k = 3
objective_prompts = 2
subjective_prompts = 1
refine_iterations = 1
reasoning_per_emotion = 1
fewshot_per_emotion = 1
base_seed = 7
parallelism = 1

[ablation]
{ablation}

[paths]
manifest = "manifest.jsonl"
run_dir = "{run_name}"
concept_corpus = "concepts.jsonl"
mock_script = "mock.json"
"#
    );
    let path = fixture.root.join(format!("{run_name}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}
