//! Instruction templates with named placeholders.
//!
//! Rendering is a pure, single-pass substitution: `{name}` placeholders are
//! replaced from the binding map, bound values are inserted verbatim (never
//! re-expanded), and an unbound placeholder is an error rather than leaking
//! into model input.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::backend::GatewayError;

/// The six instruction roles used across the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    /// Organize expert cues and survey statistics into the six categories.
    DirectInforming,
    /// Derive emotion-supporting and emotion-suppressing rules from a labeled image.
    ReverseReasoning,
    /// Generate objective description prompts.
    ObjectivePrompts,
    /// Generate per-emotion subjective elicitation prompts.
    SubjectivePrompts,
    /// Review extraction transcripts and issue per-prompt verdicts.
    Refinement,
    /// Final judgment of which emotions are sufficiently aroused.
    FinalJudgment,
}

impl TemplateId {
    pub fn name(self) -> &'static str {
        match self {
            TemplateId::DirectInforming => "direct_informing",
            TemplateId::ReverseReasoning => "reverse_reasoning",
            TemplateId::ObjectivePrompts => "objective_prompts",
            TemplateId::SubjectivePrompts => "subjective_prompts",
            TemplateId::Refinement => "refinement",
            TemplateId::FinalJudgment => "final_judgment",
        }
    }
}

#[derive(Debug, Clone)]
pub struct InstructionTemplate {
    pub id: TemplateId,
    pub text: String,
}

impl InstructionTemplate {
    pub fn new(id: TemplateId, text: &str) -> InstructionTemplate {
        InstructionTemplate {
            id,
            text: text.to_string(),
        }
    }

    /// Substitutes every `{name}` placeholder from `bindings`.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, GatewayError> {
        render_text(self.id.name(), &self.text, bindings)
    }
}

fn placeholder_regex() -> Regex {
    Regex::new(r"\{([a-z][a-z0-9_]*)\}").expect("valid placeholder pattern")
}

fn render_text(
    template_name: &str,
    text: &str,
    bindings: &BTreeMap<&str, String>,
) -> Result<String, GatewayError> {
    let re = placeholder_regex();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for caps in re.captures_iter(text) {
        let whole = caps.get(0).expect("match");
        let name = caps.get(1).expect("group").as_str();
        let value = bindings
            .get(name)
            .ok_or_else(|| GatewayError::MissingBinding {
                template: template_name.to_string(),
                name: name.to_string(),
            })?;
        out.push_str(&text[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

/// The built-in template texts, embedded at compile time.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, InstructionTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> TemplateSet {
        let mut templates = BTreeMap::new();
        for (id, text) in [
            (
                TemplateId::DirectInforming,
                include_str!("../../assets/templates/direct_informing.txt"),
            ),
            (
                TemplateId::ReverseReasoning,
                include_str!("../../assets/templates/reverse_reasoning.txt"),
            ),
            (
                TemplateId::ObjectivePrompts,
                include_str!("../../assets/templates/objective_prompts.txt"),
            ),
            (
                TemplateId::SubjectivePrompts,
                include_str!("../../assets/templates/subjective_prompts.txt"),
            ),
            (
                TemplateId::Refinement,
                include_str!("../../assets/templates/refinement.txt"),
            ),
            (
                TemplateId::FinalJudgment,
                include_str!("../../assets/templates/final_judgment.txt"),
            ),
        ] {
            templates.insert(id, InstructionTemplate::new(id, text));
        }
        TemplateSet { templates }
    }

    pub fn get(&self, id: TemplateId) -> &InstructionTemplate {
        self.templates.get(&id).expect("all template ids present")
    }
}
