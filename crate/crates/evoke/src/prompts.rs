//! Budgeted prompt generation and iterative self-refinement.
//!
//! The minimum viable prompt set is two calls: one for objective description
//! prompts (budget n) and one for per-emotion subjective elicitation prompts
//! (budget m per emotion). Refinement then runs the prompts over few-shot
//! labeled images, asks the model to judge the extractions against ground
//! truth, applies keep/revise/drop verdicts, and regenerates dropped prompts
//! without ever exceeding the budgets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::PipelineError;
use crate::eval::manifest::{select_per_emotion, ManifestEntry, Split};
use crate::gateway::{ModelGateway, TemplateId, TemplateSet};
use crate::reasoning::{ContrastiveLogic, CueCatalog};
use crate::replies::{fenced_json, parse_phrase_list};
use crate::taxonomy::{DatasetProfile, EmotionLabel, ProfileRegistry};
use crate::transcript::CallPurpose;

const STRICT_FORMAT_REMINDER: &str =
    "\n\nREMINDER: your previous reply could not be parsed. Respond with ONLY the single fenced json block in exactly the format described above.";

/// Appended to every extraction prompt so replies parse as phrase lists.
const EXTRACTION_FORMAT_CLAUSE: &str =
    "List each relevant cue as a short phrase on its own line and write nothing else. If nothing applies, reply with an empty line.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
}

/// The frozen prompt artifact: objective prompts, per-emotion subjective
/// prompts, their budgets, and the refinement round that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub objective: Vec<Prompt>,
    pub subjective: BTreeMap<EmotionLabel, Vec<Prompt>>,
    pub budget_objective: usize,
    pub budget_subjective: usize,
    pub version: u32,
    #[serde(default)]
    issued_objective: u32,
    #[serde(default)]
    issued_subjective: BTreeMap<EmotionLabel, u32>,
}

impl PromptSet {
    pub fn new(
        profile: &DatasetProfile,
        budget_objective: usize,
        budget_subjective: usize,
    ) -> PromptSet {
        let subjective = profile
            .vocabulary
            .iter()
            .map(|e| (e.clone(), Vec::new()))
            .collect();
        PromptSet {
            objective: Vec::new(),
            subjective,
            budget_objective,
            budget_subjective,
            version: 0,
            issued_objective: 0,
            issued_subjective: BTreeMap::new(),
        }
    }

    pub fn total(&self) -> usize {
        self.objective.len() + self.subjective.values().map(Vec::len).sum::<usize>()
    }

    pub fn prompt_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.objective.iter().map(|p| p.id.clone()).collect();
        for prompts in self.subjective.values() {
            ids.extend(prompts.iter().map(|p| p.id.clone()));
        }
        ids
    }

    pub fn within_budgets(&self) -> bool {
        self.objective.len() <= self.budget_objective
            && self
                .subjective
                .values()
                .all(|prompts| prompts.len() <= self.budget_subjective)
    }

    /// Adds an objective prompt unless the budget is full or the text
    /// duplicates an existing prompt.
    pub fn add_objective(&mut self, text: &str) -> bool {
        let text = text.trim();
        if text.is_empty()
            || self.objective.len() >= self.budget_objective
            || self
                .objective
                .iter()
                .any(|p| p.text.eq_ignore_ascii_case(text))
        {
            return false;
        }
        self.issued_objective += 1;
        self.objective.push(Prompt {
            id: format!("o{}", self.issued_objective),
            text: text.to_string(),
        });
        true
    }

    /// Adds a subjective prompt for an emotion already in the set's key space.
    pub fn add_subjective(&mut self, emotion: &EmotionLabel, text: &str) -> bool {
        let text = text.trim();
        if text.is_empty() {
            return false;
        }
        let Some(prompts) = self.subjective.get(emotion) else {
            return false;
        };
        if prompts.len() >= self.budget_subjective
            || prompts.iter().any(|p| p.text.eq_ignore_ascii_case(text))
        {
            return false;
        }
        let counter = self.issued_subjective.entry(emotion.clone()).or_insert(0);
        *counter += 1;
        let id = format!("s:{emotion}:{counter}");
        self.subjective
            .get_mut(emotion)
            .expect("key checked above")
            .push(Prompt {
                id,
                text: text.to_string(),
            });
        true
    }

    /// Content hash of the serialized set; the freeze contract for a run.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("serializable");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("serializable"),
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PromptSet, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::ParseFailure {
            stage: "prompt_set_load",
            detail: format!("'{}': {e}", path.display()),
        })
    }

    fn render_for_review(&self) -> String {
        let mut lines = Vec::new();
        for prompt in &self.objective {
            lines.push(format!("{} | objective | - | {}", prompt.id, prompt.text));
        }
        for (emotion, prompts) in &self.subjective {
            for prompt in prompts {
                lines.push(format!(
                    "{} | subjective | {emotion} | {}",
                    prompt.id, prompt.text
                ));
            }
        }
        lines.join("\n")
    }
}

// ---------------------------------------------------------------------------
// Few-shot corpus
// ---------------------------------------------------------------------------

/// Labeled examples reserved for refinement, disjoint by construction from
/// the reasoning corpus and the test split.
#[derive(Debug, Clone)]
pub struct FewShotSet {
    pub examples: Vec<ManifestEntry>,
}

impl FewShotSet {
    pub fn build(
        entries: &[ManifestEntry],
        registry: &ProfileRegistry,
        per_emotion: usize,
        seed: u64,
    ) -> Result<FewShotSet, PipelineError> {
        let examples = select_per_emotion(entries, Split::Fewshot, registry, per_emotion, seed)
            .map_err(|e| PipelineError::InsufficientData(e.to_string()))?;
        Ok(FewShotSet { examples })
    }

    pub fn count(&self) -> usize {
        self.examples.len()
    }
}

// ---------------------------------------------------------------------------
// Prompt generation
// ---------------------------------------------------------------------------

/// Generates the version-0 prompt set: one chat call for objective prompts,
/// one for the per-emotion subjective prompts. Replies beyond the budgets are
/// dropped in reply order.
pub fn generate_prompts(
    gateway: &ModelGateway,
    templates: &TemplateSet,
    catalog: &CueCatalog,
    logic: &ContrastiveLogic,
    profile: &DatasetProfile,
    budget_objective: usize,
    budget_subjective: usize,
) -> Result<PromptSet, PipelineError> {
    let mut prompts = PromptSet::new(profile, budget_objective, budget_subjective);

    let objective_texts = request_objective_prompts(
        gateway,
        templates,
        catalog,
        logic,
        budget_objective,
        "(none)",
    )?;
    for text in objective_texts {
        prompts.add_objective(&text);
    }

    let emotions: Vec<EmotionLabel> = profile.vocabulary.iter().cloned().collect();
    let by_emotion = request_subjective_prompts(
        gateway,
        templates,
        catalog,
        logic,
        budget_subjective,
        &emotions,
        "(none)",
    )?;
    for (emotion, texts) in by_emotion {
        for text in texts {
            prompts.add_subjective(&emotion, &text);
        }
    }
    Ok(prompts)
}

fn request_objective_prompts(
    gateway: &ModelGateway,
    templates: &TemplateSet,
    catalog: &CueCatalog,
    logic: &ContrastiveLogic,
    budget: usize,
    existing: &str,
) -> Result<Vec<String>, PipelineError> {
    let bindings = BTreeMap::from([
        ("budget", budget.to_string()),
        ("cue_catalog", catalog.render()),
        ("contrastive_logic", logic.render()),
        ("existing", existing.to_string()),
    ]);
    let rendered = templates
        .get(TemplateId::ObjectivePrompts)
        .render(&bindings)?;
    let reply = gateway
        .chat(&gateway.chat_request(
            CallPurpose::ObjectivePromptGeneration,
            rendered.clone(),
            vec![],
        ))?
        .text;
    match parse_string_list(&reply) {
        Ok(texts) => Ok(texts),
        Err(first_err) => {
            log::warn!("objective prompt reply unparseable ({first_err}); reprompting once");
            let retry = gateway
                .chat(&gateway.chat_request(
                    CallPurpose::ObjectivePromptGeneration,
                    format!("{rendered}{STRICT_FORMAT_REMINDER}"),
                    vec![],
                ))?
                .text;
            parse_string_list(&retry).map_err(|detail| PipelineError::ParseFailure {
                stage: "generate_prompts/objective",
                detail,
            })
        }
    }
}

fn request_subjective_prompts(
    gateway: &ModelGateway,
    templates: &TemplateSet,
    catalog: &CueCatalog,
    logic: &ContrastiveLogic,
    budget: usize,
    emotions: &[EmotionLabel],
    existing: &str,
) -> Result<Vec<(EmotionLabel, Vec<String>)>, PipelineError> {
    let emotion_list = emotions
        .iter()
        .map(|e| e.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let bindings = BTreeMap::from([
        ("budget", budget.to_string()),
        ("emotions", emotion_list),
        ("cue_catalog", catalog.render()),
        ("contrastive_logic", logic.render()),
        ("existing", existing.to_string()),
    ]);
    let rendered = templates
        .get(TemplateId::SubjectivePrompts)
        .render(&bindings)?;
    let reply = gateway
        .chat(&gateway.chat_request(
            CallPurpose::SubjectivePromptGeneration,
            rendered.clone(),
            vec![],
        ))?
        .text;
    match parse_emotion_map(&reply, emotions) {
        Ok(map) => Ok(map),
        Err(first_err) => {
            log::warn!("subjective prompt reply unparseable ({first_err}); reprompting once");
            let retry = gateway
                .chat(&gateway.chat_request(
                    CallPurpose::SubjectivePromptGeneration,
                    format!("{rendered}{STRICT_FORMAT_REMINDER}"),
                    vec![],
                ))?
                .text;
            parse_emotion_map(&retry, emotions).map_err(|detail| PipelineError::ParseFailure {
                stage: "generate_prompts/subjective",
                detail,
            })
        }
    }
}

fn parse_string_list(reply: &str) -> Result<Vec<String>, String> {
    let value = fenced_json(reply)?;
    let list = value.as_array().ok_or("expected a json list of strings")?;
    Ok(list
        .iter()
        .filter_map(Value::as_str)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect())
}

fn parse_emotion_map(
    reply: &str,
    emotions: &[EmotionLabel],
) -> Result<Vec<(EmotionLabel, Vec<String>)>, String> {
    let value = fenced_json(reply)?;
    let object = value
        .as_object()
        .ok_or("expected a json object keyed by emotion")?;
    let mut out = Vec::new();
    for (key, texts) in object {
        let label = EmotionLabel::new(key);
        if !emotions.contains(&label) {
            log::warn!("ignoring subjective prompts for unknown emotion '{key}'");
            continue;
        }
        let Some(list) = texts.as_array() else {
            return Err(format!("emotion '{key}' does not map to a list"));
        };
        let texts: Vec<String> = list
            .iter()
            .filter_map(Value::as_str)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        out.push((label, texts));
    }
    if out.is_empty() {
        return Err("no recognizable emotion keys".into());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Extraction over images
// ---------------------------------------------------------------------------

/// Cues one image yielded under every prompt, split by prompt kind and
/// deduplicated case-insensitively within each list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptExtraction {
    pub image_digest: String,
    pub descriptive: Vec<String>,
    pub elicitive: BTreeMap<EmotionLabel, Vec<String>>,
    /// Raw phrases per prompt id, before cross-prompt deduplication.
    pub per_prompt: BTreeMap<String, Vec<String>>,
}

impl PromptExtraction {
    pub fn is_empty(&self) -> bool {
        self.descriptive.is_empty() && self.elicitive.values().all(Vec::is_empty)
    }

    /// Emotions whose subjective prompts elicited at least one cue.
    pub fn elicitive_hits(&self) -> Vec<EmotionLabel> {
        self.elicitive
            .iter()
            .filter(|(_, phrases)| !phrases.is_empty())
            .map(|(emotion, _)| emotion.clone())
            .collect()
    }
}

/// Runs every prompt in the set against one image. Calls fan out up to
/// `parallelism` at a time; results keep prompt order regardless.
pub fn run_prompt_extraction(
    gateway: &ModelGateway,
    prompts: &PromptSet,
    image: &Path,
    image_digest: &str,
    parallelism: usize,
) -> Result<PromptExtraction, PipelineError> {
    enum Slot<'a> {
        Objective(&'a Prompt),
        Subjective(&'a EmotionLabel, &'a Prompt),
    }
    let mut slots: Vec<Slot> = prompts.objective.iter().map(Slot::Objective).collect();
    for (emotion, list) in &prompts.subjective {
        slots.extend(list.iter().map(|p| Slot::Subjective(emotion, p)));
    }

    let replies = run_bounded(slots.len(), parallelism, |i| {
        let text = match &slots[i] {
            Slot::Objective(p) => &p.text,
            Slot::Subjective(_, p) => &p.text,
        };
        let request = gateway.chat_request(
            CallPurpose::CueExtraction,
            format!("{text}\n\n{EXTRACTION_FORMAT_CLAUSE}"),
            vec![image.to_path_buf()],
        );
        gateway.chat(&request).map(|r| r.text)
    })?;

    let mut extraction = PromptExtraction {
        image_digest: image_digest.to_string(),
        descriptive: Vec::new(),
        elicitive: prompts
            .subjective
            .keys()
            .map(|e| (e.clone(), Vec::new()))
            .collect(),
        per_prompt: BTreeMap::new(),
    };
    let mut seen_descriptive: Vec<String> = Vec::new();
    let mut seen_elicitive: BTreeMap<&EmotionLabel, Vec<String>> = BTreeMap::new();

    for (slot, reply) in slots.iter().zip(replies) {
        let phrases = parse_phrase_list(&reply);
        match slot {
            Slot::Objective(prompt) => {
                extraction
                    .per_prompt
                    .insert(prompt.id.clone(), phrases.clone());
                for phrase in phrases {
                    let folded = phrase.to_lowercase();
                    if !seen_descriptive.contains(&folded) {
                        seen_descriptive.push(folded);
                        extraction.descriptive.push(phrase);
                    }
                }
            }
            Slot::Subjective(emotion, prompt) => {
                extraction
                    .per_prompt
                    .insert(prompt.id.clone(), phrases.clone());
                let seen = seen_elicitive.entry(emotion).or_default();
                let list = extraction
                    .elicitive
                    .get_mut(emotion)
                    .expect("elicitive keys cover the subjective emotions");
                for phrase in phrases {
                    let folded = phrase.to_lowercase();
                    if !seen.contains(&folded) {
                        seen.push(folded);
                        list.push(phrase);
                    }
                }
            }
        }
    }
    Ok(extraction)
}

/// Index-ordered bounded fan-out; the lowest-index error wins so failures are
/// deterministic.
fn run_bounded<T, F>(count: usize, limit: usize, job: F) -> Result<Vec<T>, PipelineError>
where
    T: Send,
    F: Fn(usize) -> Result<T, crate::gateway::GatewayError> + Sync,
{
    if count == 0 {
        return Ok(Vec::new());
    }
    let limit = limit.max(1).min(count);
    if limit == 1 {
        return (0..count)
            .map(|i| job(i).map_err(PipelineError::from))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let cells: Vec<Mutex<Option<Result<T, crate::gateway::GatewayError>>>> =
        (0..count).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..limit {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= count {
                    break;
                }
                let result = job(i);
                *cells[i].lock().expect("result cell") = Some(result);
            });
        }
    });
    cells
        .into_iter()
        .map(|cell| {
            cell.into_inner()
                .expect("result cell")
                .expect("every index was executed")
                .map_err(PipelineError::from)
        })
        .collect()
}

/// Append-only journal of per-image extractions; reruns skip images already
/// present, so an interrupted pass resumes where it stopped.
pub struct ExtractionJournal {
    path: PathBuf,
}

impl ExtractionJournal {
    pub fn open(path: PathBuf) -> ExtractionJournal {
        ExtractionJournal { path }
    }

    pub fn load(&self) -> Result<BTreeMap<String, PromptExtraction>, PipelineError> {
        let mut map = BTreeMap::new();
        if !self.path.exists() {
            return Ok(map);
        }
        let text = std::fs::read_to_string(&self.path)?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let extraction: PromptExtraction =
                serde_json::from_str(line).map_err(|e| PipelineError::ParseFailure {
                    stage: "extraction_journal",
                    detail: e.to_string(),
                })?;
            map.insert(extraction.image_digest.clone(), extraction);
        }
        Ok(map)
    }

    pub fn append(&self, extraction: &PromptExtraction) -> Result<(), PipelineError> {
        use std::io::Write;
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(
            file,
            "{}",
            serde_json::to_string(extraction).expect("serializable")
        )?;
        Ok(())
    }
}

/// Runs every prompt over every few-shot example, journaling per-image
/// results so a transport failure resumes instead of re-billing.
pub fn extract_for_refinement(
    gateway: &ModelGateway,
    prompts: &PromptSet,
    fewshot: &FewShotSet,
    journal: Option<&ExtractionJournal>,
    parallelism: usize,
) -> Result<Vec<PromptExtraction>, PipelineError> {
    let done = match journal {
        Some(j) => j.load()?,
        None => BTreeMap::new(),
    };
    let mut extractions = Vec::with_capacity(fewshot.examples.len());
    for example in &fewshot.examples {
        if let Some(existing) = done.get(&example.digest) {
            extractions.push(existing.clone());
            continue;
        }
        let extraction = run_prompt_extraction(
            gateway,
            prompts,
            &example.image,
            &example.digest,
            parallelism,
        )?;
        if let Some(j) = journal {
            j.append(&extraction)?;
        }
        extractions.push(extraction);
    }
    Ok(extractions)
}

// ---------------------------------------------------------------------------
// Refinement
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Keep,
    Revise,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVerdict {
    pub prompt_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggested: Option<String>,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementFeedback {
    pub per_prompt: Vec<PromptVerdict>,
    pub round: u32,
}

impl RefinementFeedback {
    pub fn all_keep(&self) -> bool {
        self.per_prompt.iter().all(|v| v.verdict == Verdict::Keep)
    }
}

fn render_refinement_transcript(extracted: &[PromptExtraction], fewshot: &FewShotSet) -> String {
    let mut blocks = Vec::new();
    for example in &fewshot.examples {
        let Some(extraction) = extracted.iter().find(|x| x.image_digest == example.digest) else {
            continue;
        };
        let mut lines = vec![format!(
            "Image {} | ground truth: {}",
            &example.digest[..12.min(example.digest.len())],
            example.ground_truth.render()
        )];
        lines.push(format!(
            "  descriptive: {}",
            if extraction.descriptive.is_empty() {
                "(none)".to_string()
            } else {
                extraction.descriptive.join("; ")
            }
        ));
        for (emotion, phrases) in &extraction.elicitive {
            lines.push(format!(
                "  elicitive[{emotion}]: {}",
                if phrases.is_empty() {
                    "(none)".to_string()
                } else {
                    phrases.join("; ")
                }
            ));
        }
        blocks.push(lines.join("\n"));
    }
    blocks.join("\n")
}

/// One review call: the full extraction transcript and ground truths go in,
/// one verdict per prompt comes out. A reply missing any prompt id earns one
/// reprompt, then fails.
pub fn refine(
    gateway: &ModelGateway,
    templates: &TemplateSet,
    extracted: &[PromptExtraction],
    fewshot: &FewShotSet,
    prompts: &PromptSet,
    round: u32,
) -> Result<RefinementFeedback, PipelineError> {
    let bindings = BTreeMap::from([
        ("example_count", fewshot.count().to_string()),
        (
            "transcript",
            render_refinement_transcript(extracted, fewshot),
        ),
        ("prompts", prompts.render_for_review()),
    ]);
    let rendered = templates.get(TemplateId::Refinement).render(&bindings)?;
    let expected = prompts.prompt_ids();

    let reply = gateway
        .chat(&gateway.chat_request(CallPurpose::PromptReview, rendered.clone(), vec![]))?
        .text;
    match parse_feedback(&reply, &expected, round) {
        Ok(feedback) => Ok(feedback),
        Err(first_err) => {
            log::warn!("refinement reply incomplete ({first_err}); reprompting once");
            let retry = gateway
                .chat(&gateway.chat_request(
                    CallPurpose::PromptReview,
                    format!(
                        "{rendered}\n\nREMINDER: cover every prompt id exactly once ({}).",
                        expected.join(", ")
                    ),
                    vec![],
                ))?
                .text;
            parse_feedback(&retry, &expected, round).map_err(|detail| PipelineError::ParseFailure {
                stage: "refine",
                detail,
            })
        }
    }
}

fn parse_feedback(
    reply: &str,
    expected_ids: &[String],
    round: u32,
) -> Result<RefinementFeedback, String> {
    let value = fenced_json(reply)?;
    let list = value.as_array().ok_or("expected a json list of verdicts")?;
    let mut per_prompt: Vec<PromptVerdict> = Vec::new();
    for item in list {
        let Some(object) = item.as_object() else {
            continue;
        };
        let Some(prompt_id) = object.get("prompt_id").and_then(Value::as_str) else {
            continue;
        };
        if !expected_ids.iter().any(|id| id == prompt_id) {
            log::warn!("ignoring verdict for unknown prompt id '{prompt_id}'");
            continue;
        }
        if per_prompt.iter().any(|v| v.prompt_id == prompt_id) {
            continue; // first verdict wins
        }
        let verdict = match object.get("verdict").and_then(Value::as_str) {
            Some(v) if v.eq_ignore_ascii_case("keep") => Verdict::Keep,
            Some(v) if v.eq_ignore_ascii_case("revise") => Verdict::Revise,
            Some(v) if v.eq_ignore_ascii_case("drop") => Verdict::Drop,
            other => return Err(format!("bad verdict {other:?} for prompt '{prompt_id}'")),
        };
        per_prompt.push(PromptVerdict {
            prompt_id: prompt_id.to_string(),
            verdict,
            suggested: object
                .get("suggested")
                .and_then(Value::as_str)
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty()),
            rationale: object
                .get("rationale")
                .and_then(Value::as_str)
                .unwrap_or("")
                .to_string(),
        });
    }
    let missing: Vec<&String> = expected_ids
        .iter()
        .filter(|id| !per_prompt.iter().any(|v| &&v.prompt_id == id))
        .collect();
    if !missing.is_empty() {
        return Err(format!(
            "verdicts missing for prompt id(s): {}",
            missing
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    Ok(RefinementFeedback { per_prompt, round })
}

/// Applies verdicts: keeps, rewords, or removes prompts. The version is
/// bumped by exactly one.
pub fn apply_verdicts(prompts: &PromptSet, feedback: &RefinementFeedback) -> PromptSet {
    let verdict_for = |id: &str| {
        feedback
            .per_prompt
            .iter()
            .find(|v| v.prompt_id == id)
            .expect("feedback covers every prompt")
    };
    let mut next = prompts.clone();
    next.version = prompts.version + 1;
    next.objective = prompts
        .objective
        .iter()
        .filter_map(|p| apply_one(p, verdict_for(&p.id)))
        .collect();
    next.subjective = prompts
        .subjective
        .iter()
        .map(|(emotion, list)| {
            let kept = list
                .iter()
                .filter_map(|p| apply_one(p, verdict_for(&p.id)))
                .collect();
            (emotion.clone(), kept)
        })
        .collect();
    next
}

fn apply_one(prompt: &Prompt, verdict: &PromptVerdict) -> Option<Prompt> {
    match verdict.verdict {
        Verdict::Keep => Some(prompt.clone()),
        Verdict::Revise => Some(Prompt {
            id: prompt.id.clone(),
            text: verdict
                .suggested
                .clone()
                .unwrap_or_else(|| prompt.text.clone()),
        }),
        Verdict::Drop => None,
    }
}

/// Refills budget deficits left by dropped prompts. Never exceeds budgets;
/// an under-supplying reply simply leaves the set below budget.
pub fn regenerate_dropped(
    gateway: &ModelGateway,
    templates: &TemplateSet,
    prompts: &mut PromptSet,
    catalog: &CueCatalog,
    logic: &ContrastiveLogic,
) -> Result<(), PipelineError> {
    let objective_deficit = prompts
        .budget_objective
        .saturating_sub(prompts.objective.len());
    if objective_deficit > 0 {
        let existing = if prompts.objective.is_empty() {
            "(none)".to_string()
        } else {
            prompts
                .objective
                .iter()
                .map(|p| p.text.as_str())
                .collect::<Vec<_>>()
                .join("\n")
        };
        let texts = request_objective_prompts(
            gateway,
            templates,
            catalog,
            logic,
            objective_deficit,
            &existing,
        )?;
        for text in texts.iter().take(objective_deficit) {
            prompts.add_objective(text);
        }
    }

    let deficits: Vec<EmotionLabel> = prompts
        .subjective
        .iter()
        .filter(|(_, list)| list.len() < prompts.budget_subjective)
        .map(|(emotion, _)| emotion.clone())
        .collect();
    if !deficits.is_empty() {
        let existing = prompts
            .subjective
            .iter()
            .map(|(emotion, list)| {
                let texts: Vec<&str> = list.iter().map(|p| p.text.as_str()).collect();
                format!(
                    "{emotion}: {}",
                    if texts.is_empty() {
                        "(none)".to_string()
                    } else {
                        texts.join(" | ")
                    }
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        let by_emotion = request_subjective_prompts(
            gateway,
            templates,
            catalog,
            logic,
            prompts.budget_subjective,
            &deficits,
            &existing,
        )?;
        for (emotion, texts) in by_emotion {
            for text in texts {
                prompts.add_subjective(&emotion, &text);
            }
        }
    }
    Ok(())
}

/// Runs up to `iterations` refine/apply/regenerate rounds, early-exiting once
/// a round keeps everything. `on_round` sees the prompt set after every
/// executed round (for persistence and budget audits).
#[allow(clippy::too_many_arguments)]
pub fn refinement_loop(
    gateway: &ModelGateway,
    templates: &TemplateSet,
    initial: PromptSet,
    fewshot: &FewShotSet,
    iterations: u32,
    catalog: &CueCatalog,
    logic: &ContrastiveLogic,
    journal_dir: Option<&Path>,
    parallelism: usize,
    mut on_round: impl FnMut(&PromptSet) -> Result<(), PipelineError>,
) -> Result<PromptSet, PipelineError> {
    let mut current = initial;
    for round in 1..=iterations {
        let journal = journal_dir.map(|dir| {
            ExtractionJournal::open(dir.join(format!("extraction-round-{round}.jsonl")))
        });
        let extracted =
            extract_for_refinement(gateway, &current, fewshot, journal.as_ref(), parallelism)?;
        let feedback = refine(gateway, templates, &extracted, fewshot, &current, round)?;
        let fixed_point = feedback.all_keep();
        current = apply_verdicts(&current, &feedback);
        if !fixed_point {
            regenerate_dropped(gateway, templates, &mut current, catalog, logic)?;
        }
        debug_assert!(current.within_budgets());
        on_round(&current)?;
        if fixed_point {
            break;
        }
    }
    Ok(current)
}
