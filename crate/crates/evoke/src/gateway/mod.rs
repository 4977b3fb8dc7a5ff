//! Single point of contact with chat-VLM and embedding backends.
//!
//! Every model invocation in the pipeline flows through [`ModelGateway`],
//! which adds deterministic content-addressed caching, bounded retries with
//! exponential backoff, a per-run call budget, and transcript logging.

pub mod backend;
pub mod cache;
pub mod http;
pub mod mock;
pub mod template;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

pub use backend::{
    content_digest, unit_normalize, Backend, BackendReply, ChatRequest, ChatResponse, Embedding,
    GatewayError, LoadedImage, Modality, TokenUsage,
};
pub use cache::{CacheKey, ResponseCache};
pub use template::{InstructionTemplate, TemplateId, TemplateSet};

use crate::transcript::{CallPurpose, Transcript, TranscriptEvent};
use cache::{ChatCacheRecord, EmbedCacheRecord};

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            base_delay: Duration::from_millis(250),
        }
    }
}

/// Decoding defaults shared by every chat request in a run.
#[derive(Debug, Clone)]
pub struct ModelSettings {
    pub chat_model: String,
    pub embed_model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            chat_model: "vlm".into(),
            embed_model: "encoder".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }
}

pub struct ModelGateway {
    backend: Box<dyn Backend>,
    cache: ResponseCache,
    transcript: Transcript,
    retry: RetryPolicy,
    settings: ModelSettings,
    call_cap: Option<u64>,
    backend_calls: AtomicU64,
}

impl ModelGateway {
    pub fn new(
        backend: Box<dyn Backend>,
        cache: ResponseCache,
        transcript: Transcript,
        settings: ModelSettings,
        retry: RetryPolicy,
        call_cap: Option<u64>,
    ) -> ModelGateway {
        ModelGateway {
            backend,
            cache,
            transcript,
            retry,
            settings,
            call_cap,
            backend_calls: AtomicU64::new(0),
        }
    }

    /// Convenience constructor for tests: no cache, no cap, instant retries.
    pub fn for_tests(backend: Box<dyn Backend>) -> ModelGateway {
        ModelGateway::new(
            backend,
            ResponseCache::disabled(),
            Transcript::new(),
            ModelSettings::default(),
            RetryPolicy {
                max_retries: 0,
                base_delay: Duration::ZERO,
            },
            None,
        )
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn settings(&self) -> &ModelSettings {
        &self.settings
    }

    /// Number of calls that actually reached the backend (cache misses).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    /// Builds a request carrying the run's decoding defaults.
    pub fn chat_request(
        &self,
        purpose: CallPurpose,
        user_text: String,
        images: Vec<std::path::PathBuf>,
    ) -> ChatRequest {
        ChatRequest {
            model_id: self.settings.chat_model.clone(),
            system_text: None,
            user_text,
            images,
            max_output_tokens: self.settings.max_output_tokens,
            temperature: self.settings.temperature,
            purpose,
        }
    }

    fn charge_budget(&self) -> Result<(), GatewayError> {
        let used = self.backend_calls.fetch_add(1, Ordering::SeqCst);
        if let Some(cap) = self.call_cap {
            if used >= cap {
                return Err(GatewayError::BudgetExceeded { cap });
            }
        }
        Ok(())
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let mut attempt: u32 = 0;
        loop {
            attempt += 1;
            match call() {
                Err(GatewayError::Transport { message, .. }) => {
                    if attempt > self.retry.max_retries {
                        return Err(GatewayError::Transport {
                            message,
                            attempts: attempt,
                        });
                    }
                    let backoff = self.retry.base_delay * 2u32.saturating_pow(attempt - 1);
                    log::warn!("transient backend failure (attempt {attempt}): {message}; backing off {backoff:?}");
                    std::thread::sleep(backoff);
                }
                other => return other,
            }
        }
    }

    /// Sends a chat request, serving byte-identical repeats from the cache.
    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if request.user_text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let images = request
            .images
            .iter()
            .map(|p| LoadedImage::load(p))
            .collect::<Result<Vec<_>, _>>()?;
        let image_digests: Vec<String> = images.iter().map(|i| i.digest.clone()).collect();
        let key = CacheKey::chat(self.backend.kind(), request, &image_digests);

        if let Some(hit) = self.cache.get_chat(&key) {
            self.transcript.record(TranscriptEvent::Chat {
                purpose: request.purpose,
                digest: key.0.clone(),
                cached: true,
            });
            return Ok(ChatResponse {
                text: hit.response_text,
                usage: hit.usage,
                backend_id: hit.backend_id,
                cached: true,
            });
        }

        self.charge_budget()?;
        let reply = self.with_retries(|| self.backend.chat(request, &images, &key.0))?;
        let text = reply.text.trim_end().to_string();
        self.cache.put_chat(
            &key,
            &ChatCacheRecord {
                digest: key.0.clone(),
                backend_id: self.backend.id().to_string(),
                model_id: request.model_id.clone(),
                request_text: request.user_text.clone(),
                image_digests,
                temperature: request.temperature,
                max_output_tokens: request.max_output_tokens,
                response_text: text.clone(),
                usage: reply.usage,
            },
        )?;
        self.transcript.record(TranscriptEvent::Chat {
            purpose: request.purpose,
            digest: key.0.clone(),
            cached: false,
        });
        Ok(ChatResponse {
            text,
            usage: reply.usage,
            backend_id: self.backend.id().to_string(),
            cached: false,
        })
    }

    /// Embeds text into a unit-normalized vector.
    pub fn embed_text(&self, text: &str) -> Result<Embedding, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let key = CacheKey::embed_text(self.backend.kind(), &self.settings.embed_model, text);
        if let Some(hit) = self.cache.get_embed(&key) {
            self.transcript.record(TranscriptEvent::EmbedText {
                digest: key.0.clone(),
                cached: true,
            });
            return Ok(Embedding {
                values: hit.values,
                modality: Modality::Text,
            });
        }
        self.charge_budget()?;
        let raw =
            self.with_retries(|| self.backend.embed_text(&self.settings.embed_model, text))?;
        let embedding = Embedding::unit(raw, Modality::Text)?;
        self.cache.put_embed(
            &key,
            &EmbedCacheRecord {
                digest: key.0.clone(),
                backend_id: self.backend.id().to_string(),
                model_id: self.settings.embed_model.clone(),
                modality: Modality::Text,
                values: embedding.values.clone(),
            },
        )?;
        self.transcript.record(TranscriptEvent::EmbedText {
            digest: key.0.clone(),
            cached: false,
        });
        Ok(embedding)
    }

    /// Embeds an image into a unit-normalized vector; the cache key is the
    /// image's content digest, so path changes do not miss.
    pub fn embed_image(&self, path: &Path) -> Result<Embedding, GatewayError> {
        let image = LoadedImage::load(path)?;
        let key = CacheKey::embed_image(
            self.backend.kind(),
            &self.settings.embed_model,
            &image.digest,
        );
        if let Some(hit) = self.cache.get_embed(&key) {
            self.transcript.record(TranscriptEvent::EmbedImage {
                digest: key.0.clone(),
                cached: true,
            });
            return Ok(Embedding {
                values: hit.values,
                modality: Modality::Image,
            });
        }
        self.charge_budget()?;
        let raw =
            self.with_retries(|| self.backend.embed_image(&self.settings.embed_model, &image))?;
        let embedding = Embedding::unit(raw, Modality::Image)?;
        self.cache.put_embed(
            &key,
            &EmbedCacheRecord {
                digest: key.0.clone(),
                backend_id: self.backend.id().to_string(),
                model_id: self.settings.embed_model.clone(),
                modality: Modality::Image,
                values: embedding.values.clone(),
            },
        )?;
        self.transcript.record(TranscriptEvent::EmbedImage {
            digest: key.0.clone(),
            cached: false,
        });
        Ok(embedding)
    }
}
