//! Run transcript: an append-only log of every backend call and retrieval,
//! used for resumability audits and ablation checks.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

/// Why a chat call was made. Recorded per call so ablation runs can be
/// diffed against the full pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPurpose {
    CueClassification,
    ContrastiveReasoning,
    ObjectivePromptGeneration,
    SubjectivePromptGeneration,
    CueExtraction,
    PromptReview,
    EmotionJudgment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TranscriptEvent {
    Chat {
        purpose: CallPurpose,
        digest: String,
        cached: bool,
    },
    EmbedText {
        digest: String,
        cached: bool,
    },
    EmbedImage {
        digest: String,
        cached: bool,
    },
    ConceptRetrieval {
        image_digest: String,
        alpha: f64,
        k: usize,
    },
}

/// Shared, thread-safe event log. Cloning shares the underlying buffer.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    events: Arc<Mutex<Vec<TranscriptEvent>>>,
}

impl Transcript {
    pub fn new() -> Transcript {
        Transcript::default()
    }

    pub fn record(&self, event: TranscriptEvent) {
        self.events.lock().expect("transcript lock").push(event);
    }

    pub fn events(&self) -> Vec<TranscriptEvent> {
        self.events.lock().expect("transcript lock").clone()
    }

    pub fn clear(&self) {
        self.events.lock().expect("transcript lock").clear();
    }

    pub fn chat_count(&self, purpose: CallPurpose) -> usize {
        self.events()
            .iter()
            .filter(|e| matches!(e, TranscriptEvent::Chat { purpose: p, .. } if *p == purpose))
            .count()
    }

    pub fn retrieval_count(&self) -> usize {
        self.events()
            .iter()
            .filter(|e| matches!(e, TranscriptEvent::ConceptRetrieval { .. }))
            .count()
    }

    pub fn embed_count(&self) -> usize {
        self.events()
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    TranscriptEvent::EmbedText { .. } | TranscriptEvent::EmbedImage { .. }
                )
            })
            .count()
    }
}
