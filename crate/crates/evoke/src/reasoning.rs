//! Bi-directional cue reasoning.
//!
//! Direct informing organizes expert-proposed cues and viewer survey
//! statistics into the six cue categories via one classification call.
//! Reverse reasoning works the other way: given a labeled image, the model
//! derives contrastive rules explaining which cues support the evoked
//! emotions and which suppress the absent ones.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::PipelineError;
use crate::eval::manifest::{select_per_emotion, ManifestEntry, Split};
use crate::gateway::{ModelGateway, TemplateId, TemplateSet};
use crate::replies::fenced_json;
use crate::taxonomy::{
    canonical_categories, normalize_phrase, seed_cues, Cue, CueCategory, CuePolarity,
    DatasetProfile, EmotionLabel, EmotionSet, ProfileRegistry,
};
use crate::transcript::CallPurpose;

const STRICT_FORMAT_REMINDER: &str =
    "\n\nREMINDER: your previous reply could not be parsed. Respond with ONLY the single fenced json block in exactly the format described above.";

// ---------------------------------------------------------------------------
// Inputs: expert cues and survey statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertCue {
    pub phrase: String,
    pub source: String,
}

/// Expert-proposed cue phrases with source citations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertCueSet {
    pub cues: Vec<ExpertCue>,
}

impl ExpertCueSet {
    /// One record per line: `phrase<TAB>source`. `#` lines are comments.
    pub fn from_tsv(text: &str) -> Result<ExpertCueSet, PipelineError> {
        let mut cues = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let phrase = normalize_phrase(parts.next().unwrap_or(""));
            let source = parts.next().unwrap_or("").trim().to_string();
            if phrase.is_empty() {
                return Err(PipelineError::CorpusParse {
                    line: idx + 1,
                    detail: "empty expert cue phrase".into(),
                });
            }
            cues.push(ExpertCue { phrase, source });
        }
        if cues.is_empty() {
            return Err(PipelineError::InsufficientData("no expert cues".into()));
        }
        Ok(ExpertCueSet { cues })
    }

    pub fn bundled() -> ExpertCueSet {
        ExpertCueSet::from_tsv(include_str!("../assets/expert_cues.tsv"))
            .expect("bundled expert cues are valid")
    }

    pub fn render(&self) -> String {
        self.cues
            .iter()
            .map(|c| format!("{} | {}", c.phrase, c.source))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyEntry {
    pub factor: String,
    pub share: f64,
    pub respondents: u64,
}

/// Survey-derived statistics about which factors drive viewer emotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyStats {
    pub entries: Vec<SurveyEntry>,
}

impl SurveyStats {
    /// One record per line: `factor<TAB>share<TAB>respondents`.
    pub fn from_tsv(text: &str) -> Result<SurveyStats, PipelineError> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |detail: String| PipelineError::CorpusParse {
                line: idx + 1,
                detail,
            };
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(err(format!(
                    "expected 3 tab-separated fields, got {}",
                    parts.len()
                )));
            }
            let factor = normalize_phrase(parts[0]);
            let share: f64 = parts[1]
                .trim()
                .parse()
                .map_err(|e| err(format!("bad share: {e}")))?;
            let respondents: u64 = parts[2]
                .trim()
                .parse()
                .map_err(|e| err(format!("bad respondent count: {e}")))?;
            if factor.is_empty() {
                return Err(err("empty factor".into()));
            }
            if !(0.0..=1.0).contains(&share) {
                return Err(err(format!("share {share} outside [0, 1]")));
            }
            if respondents == 0 {
                return Err(err("respondent count must be positive".into()));
            }
            entries.push(SurveyEntry {
                factor,
                share,
                respondents,
            });
        }
        Ok(SurveyStats { entries })
    }

    pub fn bundled() -> SurveyStats {
        SurveyStats::from_tsv(include_str!("../assets/survey_stats.tsv"))
            .expect("bundled survey stats are valid")
    }

    pub fn render(&self) -> String {
        if self.entries.is_empty() {
            return "(none)".to_string();
        }
        self.entries
            .iter()
            .map(|e| format!("{} | {:.2} | {}", e.factor, e.share, e.respondents))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

// ---------------------------------------------------------------------------
// Structured cue catalog
// ---------------------------------------------------------------------------

/// Cue phrases organized under the six categories. All six categories are
/// always present (possibly empty); a phrase appears at most once across the
/// whole catalog, first occurrence winning.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CueCatalog {
    by_category: [Vec<Cue>; 6],
}

impl CueCatalog {
    pub fn empty() -> CueCatalog {
        CueCatalog::default()
    }

    /// The bundled seed partition.
    pub fn seed() -> CueCatalog {
        let mut catalog = CueCatalog::empty();
        for cue in seed_cues() {
            catalog.insert(cue);
        }
        catalog
    }

    /// Inserts unless an equal phrase (case/whitespace-insensitive) already
    /// exists anywhere in the catalog. Returns whether the cue was added.
    pub fn insert(&mut self, cue: Cue) -> bool {
        let folded = cue.phrase.to_lowercase();
        if self
            .iter()
            .any(|existing| existing.phrase.to_lowercase() == folded)
        {
            return false;
        }
        self.by_category[(cue.category.index() - 1) as usize].push(cue);
        true
    }

    pub fn cues(&self, category: CueCategory) -> &[Cue] {
        &self.by_category[(category.index() - 1) as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Cue> {
        self.by_category.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.by_category.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fills any empty category from the seed partition.
    pub fn backfill_category_from_seed(&mut self, category: CueCategory) {
        for cue in seed_cues().into_iter().filter(|c| c.category == category) {
            self.insert(cue);
        }
    }

    /// Template binding: one line per category.
    pub fn render(&self) -> String {
        canonical_categories()
            .iter()
            .map(|cat| {
                let phrases: Vec<&str> =
                    self.cues(*cat).iter().map(|c| c.phrase.as_str()).collect();
                format!(
                    "{}. {}: {}",
                    cat.index(),
                    cat.title(),
                    if phrases.is_empty() {
                        "(none)".to_string()
                    } else {
                        phrases.join("; ")
                    }
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl Serialize for CueCatalog {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let flat: Vec<&Cue> = self.iter().collect();
        flat.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CueCatalog {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let flat = Vec::<Cue>::deserialize(deserializer)?;
        let mut catalog = CueCatalog::empty();
        for cue in flat {
            catalog.insert(cue);
        }
        Ok(catalog)
    }
}

// ---------------------------------------------------------------------------
// Contrastive logic
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleDirection {
    Supports,
    Suppresses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveRule {
    pub emotion: EmotionLabel,
    pub direction: RuleDirection,
    pub cue: Cue,
    pub rationale: String,
}

/// Rules relating cues to emotions, aggregated across the reverse-reasoning
/// corpus. Deduplicated by (emotion, direction, cue phrase) and kept in
/// canonical order so aggregation is order-independent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContrastiveLogic {
    pub rules: Vec<ContrastiveRule>,
}

impl ContrastiveLogic {
    pub fn merge<I: IntoIterator<Item = ContrastiveRule>>(rules: I) -> ContrastiveLogic {
        let mut keyed: BTreeMap<(String, RuleDirection, String), ContrastiveRule> = BTreeMap::new();
        for rule in rules {
            let key = (
                rule.emotion.as_str().to_string(),
                rule.direction,
                rule.cue.phrase.to_lowercase(),
            );
            keyed.entry(key).or_insert(rule);
        }
        ContrastiveLogic {
            rules: keyed.into_values().collect(),
        }
    }

    pub fn render(&self) -> String {
        if self.rules.is_empty() {
            return "(none)".to_string();
        }
        self.rules
            .iter()
            .map(|r| {
                let verb = match r.direction {
                    RuleDirection::Supports => "supports",
                    RuleDirection::Suppresses => "suppresses",
                };
                format!(
                    "'{}' {} {} ({})",
                    r.cue.phrase, verb, r.emotion, r.rationale
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

fn categories_block() -> String {
    canonical_categories()
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

/// One classification call that organizes expert cues and survey statistics
/// into the six categories. Categories the reply omits entirely are
/// backfilled from the seed partition (logged, not fatal).
pub fn direct_informing(
    gateway: &ModelGateway,
    templates: &TemplateSet,
    experts: &ExpertCueSet,
    survey: &SurveyStats,
) -> Result<CueCatalog, PipelineError> {
    let bindings = BTreeMap::from([
        ("expert_cues", experts.render()),
        ("survey_stats", survey.render()),
        ("categories", categories_block()),
    ]);
    let rendered = templates
        .get(TemplateId::DirectInforming)
        .render(&bindings)?;

    let mut reply = gateway
        .chat(&gateway.chat_request(CallPurpose::CueClassification, rendered.clone(), vec![]))?
        .text;
    let parsed = match parse_catalog_reply(&reply) {
        Ok(catalog) => catalog,
        Err(first_err) => {
            log::warn!("cue classification reply unparseable ({first_err}); reprompting once");
            reply = gateway
                .chat(&gateway.chat_request(
                    CallPurpose::CueClassification,
                    format!("{rendered}{STRICT_FORMAT_REMINDER}"),
                    vec![],
                ))?
                .text;
            parse_catalog_reply(&reply).map_err(|detail| PipelineError::ParseFailure {
                stage: "direct_informing",
                detail,
            })?
        }
    };
    Ok(parsed)
}

/// Parses a category-to-phrases object. Keys may be indices ("1".."6") or
/// category titles. Missing keys fall back to the seed partition.
fn parse_catalog_reply(reply: &str) -> Result<CueCatalog, String> {
    let value = fenced_json(reply)?;
    let object = value.as_object().ok_or("expected a json object")?;
    let mut catalog = CueCatalog::empty();
    let mut seen = [false; 6];
    for (key, phrases) in object {
        let category = CueCategory::from_title(key).or_else(|| {
            key.trim()
                .parse::<u8>()
                .ok()
                .and_then(CueCategory::from_index)
        });
        let Some(category) = category else {
            log::warn!("ignoring unknown category key '{key}'");
            continue;
        };
        seen[(category.index() - 1) as usize] = true;
        let Some(list) = phrases.as_array() else {
            return Err(format!("category '{key}' does not map to a list"));
        };
        for phrase in list.iter().filter_map(Value::as_str) {
            match Cue::new(phrase, category, CuePolarity::Positive) {
                Ok(cue) => {
                    catalog.insert(cue);
                }
                Err(e) => log::warn!("skipping invalid cue under '{key}': {e}"),
            }
        }
    }
    if !seen.iter().any(|s| *s) {
        return Err("no recognizable category keys".into());
    }
    for (i, was_seen) in seen.iter().enumerate() {
        if !was_seen {
            let category = CueCategory::from_index(i as u8 + 1).expect("index in range");
            log::warn!("reply omitted category {category}; backfilling from seed cues");
            catalog.backfill_category_from_seed(category);
        }
    }
    Ok(catalog)
}

/// One contrastive-reasoning call over a labeled image: evoked emotions in,
/// supporting and suppressing rules out. Rules naming emotions outside the
/// profile vocabulary are dropped.
pub fn reverse_reasoning(
    gateway: &ModelGateway,
    templates: &TemplateSet,
    evoked: &EmotionSet,
    profile: &DatasetProfile,
    image: &Path,
) -> Result<ContrastiveLogic, PipelineError> {
    let not_evoked = evoked.complement(profile);
    let bindings = BTreeMap::from([
        ("evoked", render_or_none(evoked)),
        ("not_evoked", render_or_none(&not_evoked)),
        ("categories", categories_block()),
    ]);
    let rendered = templates
        .get(TemplateId::ReverseReasoning)
        .render(&bindings)?;

    let reply = gateway
        .chat(&gateway.chat_request(
            CallPurpose::ContrastiveReasoning,
            rendered.clone(),
            vec![image.to_path_buf()],
        ))?
        .text;

    let reprompt = |extra: &str| -> Result<String, PipelineError> {
        Ok(gateway
            .chat(&gateway.chat_request(
                CallPurpose::ContrastiveReasoning,
                format!("{rendered}{extra}"),
                vec![image.to_path_buf()],
            ))?
            .text)
    };

    let rules = match parse_rules_reply(&reply, profile) {
        Ok(rules) => {
            let covered = not_evoked.is_empty()
                || rules.iter().any(|r| {
                    r.direction == RuleDirection::Suppresses && not_evoked.contains(&r.emotion)
                });
            if covered {
                rules
            } else {
                // One reprompt for suppression coverage, then best effort.
                let retry = reprompt(
                    "\n\nREMINDER: include at least one \"suppresses\" rule for an emotion that is not evoked.",
                )?;
                parse_rules_reply(&retry, profile).unwrap_or(rules)
            }
        }
        Err(first_err) => {
            log::warn!("contrastive reasoning reply unparseable ({first_err}); reprompting once");
            let retry = reprompt(STRICT_FORMAT_REMINDER)?;
            parse_rules_reply(&retry, profile).map_err(|detail| PipelineError::ParseFailure {
                stage: "reverse_reasoning",
                detail,
            })?
        }
    };
    Ok(ContrastiveLogic::merge(rules))
}

fn render_or_none(set: &EmotionSet) -> String {
    if set.is_empty() {
        "(none)".to_string()
    } else {
        set.render()
    }
}

fn parse_rules_reply(
    reply: &str,
    profile: &DatasetProfile,
) -> Result<Vec<ContrastiveRule>, String> {
    let value = fenced_json(reply)?;
    let list = value.as_array().ok_or("expected a json list of rules")?;
    let mut rules = Vec::new();
    for item in list {
        let Some(object) = item.as_object() else {
            continue;
        };
        let emotion = object.get("emotion").and_then(Value::as_str).unwrap_or("");
        let emotion = EmotionLabel::new(emotion);
        if !profile.vocabulary.contains(&emotion) {
            log::warn!("dropping rule for out-of-vocabulary emotion '{emotion}'");
            continue;
        }
        let direction = match object.get("direction").and_then(Value::as_str) {
            Some(d) if d.eq_ignore_ascii_case("supports") => RuleDirection::Supports,
            Some(d) if d.eq_ignore_ascii_case("suppresses") => RuleDirection::Suppresses,
            other => {
                log::warn!("dropping rule with bad direction {other:?}");
                continue;
            }
        };
        let category = object
            .get("category")
            .and_then(|c| {
                c.as_u64()
                    .and_then(|i| u8::try_from(i).ok())
                    .and_then(CueCategory::from_index)
                    .or_else(|| c.as_str().and_then(CueCategory::from_title))
            })
            .unwrap_or(CueCategory::ActionAndNarrative);
        let polarity = match direction {
            RuleDirection::Supports => CuePolarity::Positive,
            RuleDirection::Suppresses => CuePolarity::Negative,
        };
        let Some(phrase) = object.get("cue").and_then(Value::as_str) else {
            continue;
        };
        let cue = match Cue::new(phrase, category, polarity) {
            Ok(cue) => cue,
            Err(e) => {
                log::warn!("dropping rule with invalid cue: {e}");
                continue;
            }
        };
        let rationale = object
            .get("rationale")
            .and_then(Value::as_str)
            .unwrap_or("")
            .trim()
            .to_string();
        rules.push(ContrastiveRule {
            emotion,
            direction,
            cue,
            rationale,
        });
    }
    if rules.is_empty() {
        return Err("no valid rules in reply".into());
    }
    Ok(rules)
}

/// Selects the labeled images feeding reverse reasoning: `per_emotion` images
/// per emotion per dataset from the reasoning split, seed-controlled, and by
/// construction disjoint from the few-shot and test splits.
pub fn build_reverse_corpus(
    entries: &[ManifestEntry],
    registry: &ProfileRegistry,
    per_emotion: usize,
    seed: u64,
) -> Result<Vec<ManifestEntry>, PipelineError> {
    select_per_emotion(entries, Split::Reasoning, registry, per_emotion, seed).map_err(
        |e| match e {
            crate::eval::EvalError::DegenerateSelection => {
                PipelineError::InsufficientData("per-emotion corpus size must be at least 1".into())
            }
            other => PipelineError::InsufficientData(other.to_string()),
        },
    )
}
