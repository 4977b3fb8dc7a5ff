//! Final arousal judgment: extracted cues, retrieved concepts, and the image
//! itself go into one inference call that decides which emotions are
//! sufficiently aroused to appear in the output set.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::gateway::{ModelGateway, TemplateId, TemplateSet};
use crate::prompts::PromptExtraction;
use crate::retrieval::{CueExtraction, RetrievedConcepts};
use crate::taxonomy::{parse_emotion_labels, DatasetProfile, EmotionLabel, EmotionSet};
use crate::transcript::CallPurpose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArousalJudgment {
    pub emotions: EmotionSet,
    pub per_emotion_rationale: BTreeMap<EmotionLabel, String>,
    pub raw_reply: String,
}

fn bullet_block(lines: &[String]) -> String {
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines
            .iter()
            .map(|l| format!("- {l}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Concept lines carry the fused relevance score to two decimals.
fn concept_block(retrieved: &RetrievedConcepts) -> String {
    bullet_block(
        &retrieved
            .items
            .iter()
            .map(|item| format!("{} ({:.2})", item.gloss, item.lambda_m))
            .collect::<Vec<_>>(),
    )
}

fn parse_rationales(reply: &str, profile: &DatasetProfile) -> BTreeMap<EmotionLabel, String> {
    let mut rationales = BTreeMap::new();
    for line in reply.lines() {
        let line = line.trim().trim_start_matches(['-', '*']).trim();
        let Some((head, tail)) = line.split_once(':') else {
            continue;
        };
        let label = EmotionLabel::new(head);
        if profile.vocabulary.contains(&label) && !tail.trim().is_empty() {
            rationales
                .entry(label)
                .or_insert_with(|| tail.trim().to_string());
        }
    }
    rationales
}

/// One judgment call. The rendered prompt always enumerates the allowed
/// vocabulary verbatim; the reply is clamped to it by the parser. An empty
/// parse falls back to neutral when the profile has it, otherwise earns one
/// reprompt demanding at least one label.
pub fn reflect(
    gateway: &ModelGateway,
    templates: &TemplateSet,
    cues: &CueExtraction,
    retrieved: &RetrievedConcepts,
    image: &Path,
    profile: &DatasetProfile,
) -> Result<ArousalJudgment, PipelineError> {
    let bindings = BTreeMap::from([
        ("cues", bullet_block(&cues.phrases)),
        ("concepts", concept_block(retrieved)),
        ("vocabulary", profile.vocabulary.render()),
    ]);
    let rendered = templates.get(TemplateId::FinalJudgment).render(&bindings)?;
    let reply = gateway
        .chat(&gateway.chat_request(
            CallPurpose::EmotionJudgment,
            rendered.clone(),
            vec![image.to_path_buf()],
        ))?
        .text;

    let mut emotions = parse_emotion_labels(&reply, profile);
    let mut raw_reply = reply;
    if emotions.is_empty() {
        if profile.includes_neutral {
            emotions = EmotionSet::from_labels(profile, ["neutral"]);
        } else {
            let retry = gateway
                .chat(&gateway.chat_request(
                    CallPurpose::EmotionJudgment,
                    format!(
                        "{rendered}\n\nREMINDER: you must choose at least one of the allowed emotions: {}.",
                        profile.vocabulary.render()
                    ),
                    vec![image.to_path_buf()],
                ))?
                .text;
            emotions = parse_emotion_labels(&retry, profile);
            raw_reply = retry;
            if emotions.is_empty() {
                return Err(PipelineError::ParseFailure {
                    stage: "reflect",
                    detail: format!(
                        "no allowed emotion named in reply: {}",
                        raw_reply.chars().take(120).collect::<String>()
                    ),
                });
            }
        }
    }
    let per_emotion_rationale = parse_rationales(&raw_reply, profile);
    Ok(ArousalJudgment {
        emotions,
        per_emotion_rationale,
        raw_reply,
    })
}

/// Judgment without the final inference call: the union of elicitive hits,
/// i.e. every emotion whose subjective prompts surfaced at least one cue.
pub fn judgment_from_elicitive(
    extraction: &PromptExtraction,
    profile: &DatasetProfile,
) -> ArousalJudgment {
    let hits = extraction.elicitive_hits();
    let mut emotions = EmotionSet::from_labels(profile, hits.iter().map(|e| e.as_str()));
    if emotions.is_empty() && profile.includes_neutral {
        emotions = EmotionSet::from_labels(profile, ["neutral"]);
    }
    ArousalJudgment {
        emotions,
        per_emotion_rationale: BTreeMap::new(),
        raw_reply: String::new(),
    }
}

/// Ablation-aware judgment. `no_judge` short-circuits to the elicitive
/// union without any chat call; `no_retrieval` renders the judgment prompt
/// with zero concept lines.
#[allow(clippy::too_many_arguments)]
pub fn ablation_reflect(
    gateway: &ModelGateway,
    templates: &TemplateSet,
    extraction: &PromptExtraction,
    retrieved: Option<&RetrievedConcepts>,
    image: &Path,
    profile: &DatasetProfile,
    no_retrieval: bool,
    no_judge: bool,
) -> Result<ArousalJudgment, PipelineError> {
    if no_judge {
        return Ok(judgment_from_elicitive(extraction, profile));
    }
    let cues = CueExtraction::from_prompt_extraction(extraction);
    let empty = RetrievedConcepts::empty(0);
    let retrieved = if no_retrieval {
        &empty
    } else {
        retrieved.unwrap_or(&empty)
    };
    reflect(gateway, templates, &cues, retrieved, image, profile)
}
