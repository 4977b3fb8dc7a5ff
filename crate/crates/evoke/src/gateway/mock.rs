//! Script-driven mock backend.
//!
//! A mock script is a JSON file holding an ordered rule list plus an
//! embedding seed. Rules match on the request digest, on a regex over the
//! rendered request text, and/or on an attached image's content digest; all
//! fields present in a rule must match, and the first matching rule answers.
//! Embeddings are hash-seeded from the content, so the whole pipeline becomes
//! a pure function of (config, manifest, script).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{Backend, BackendReply, ChatRequest, GatewayError, LoadedImage, TokenUsage};

pub const DEFAULT_MOCK_DIM: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct MockMatch {
    /// Full request digest (cache key) to match exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    /// Regex over the rendered request text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
    /// Content digest of an attached image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_digest: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub matcher: MockMatch,
    pub respond: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub embedding_seed: u64,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_response: Option<String>,
}

fn default_dim() -> usize {
    DEFAULT_MOCK_DIM
}

impl Default for MockScript {
    fn default() -> Self {
        MockScript {
            embedding_seed: 0,
            embedding_dim: DEFAULT_MOCK_DIM,
            rules: Vec::new(),
            default_response: None,
        }
    }
}

impl MockScript {
    pub fn load(path: &Path) -> Result<MockScript, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Script(format!("cannot read '{}': {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Script(format!("cannot parse '{}': {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, text)
            .map_err(|e| GatewayError::Script(format!("cannot write '{}': {e}", path.display())))
    }
}

pub struct MockBackend {
    script: MockScript,
    compiled: Vec<Option<Regex>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<MockBackend, GatewayError> {
        let compiled = script
            .rules
            .iter()
            .map(|rule| {
                rule.matcher
                    .regex
                    .as_deref()
                    .map(|pattern| {
                        Regex::new(pattern).map_err(|e| {
                            GatewayError::Script(format!("bad rule regex '{pattern}': {e}"))
                        })
                    })
                    .transpose()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MockBackend { script, compiled })
    }

    pub fn from_file(path: &Path) -> Result<MockBackend, GatewayError> {
        MockBackend::new(MockScript::load(path)?)
    }

    fn find_response(
        &self,
        request: &ChatRequest,
        images: &[LoadedImage],
        request_digest: &str,
    ) -> Option<&str> {
        for (rule, regex) in self.script.rules.iter().zip(&self.compiled) {
            let m = &rule.matcher;
            if m.digest.is_none() && m.regex.is_none() && m.image_digest.is_none() {
                continue;
            }
            if let Some(digest) = &m.digest {
                if digest != request_digest {
                    continue;
                }
            }
            if let Some(regex) = regex {
                if !regex.is_match(&request.user_text) {
                    continue;
                }
            }
            if let Some(image_digest) = &m.image_digest {
                if !images.iter().any(|img| &img.digest == image_digest) {
                    continue;
                }
            }
            return Some(&rule.respond);
        }
        self.script.default_response.as_deref()
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn kind(&self) -> &'static str {
        "mock"
    }

    fn chat(
        &self,
        request: &ChatRequest,
        images: &[LoadedImage],
        request_digest: &str,
    ) -> Result<BackendReply, GatewayError> {
        match self.find_response(request, images, request_digest) {
            Some(text) => Ok(BackendReply {
                text: text.to_string(),
                usage: TokenUsage::default(),
            }),
            None => Err(GatewayError::Refusal {
                status: 404,
                message: format!(
                    "no mock rule matched request {} ({}...)",
                    &request_digest[..12.min(request_digest.len())],
                    request.user_text.chars().take(80).collect::<String>()
                ),
            }),
        }
    }

    fn embed_text(&self, _model_id: &str, text: &str) -> Result<Vec<f64>, GatewayError> {
        Ok(seeded_vector(
            self.script.embedding_seed,
            self.script.embedding_dim,
            "text",
            text.as_bytes(),
        ))
    }

    fn embed_image(&self, _model_id: &str, image: &LoadedImage) -> Result<Vec<f64>, GatewayError> {
        Ok(seeded_vector(
            self.script.embedding_seed,
            self.script.embedding_dim,
            "image",
            image.digest.as_bytes(),
        ))
    }
}

/// Deterministic content-to-vector expansion: seed and content hash into a
/// ChaCha stream that fills the vector with values in [-1, 1].
pub fn seeded_vector(seed: u64, dim: usize, modality: &str, content: &[u8]) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(modality.as_bytes());
    hasher.update(content);
    let digest = hasher.finalize();
    let mut seed_bytes = [0u8; 8];
    seed_bytes.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha20Rng::seed_from_u64(u64::from_le_bytes(seed_bytes));
    (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Closure-backed backend for tests that need programmable replies.
pub struct FnBackend<F>
where
    F: Fn(&ChatRequest, &[LoadedImage]) -> Result<String, GatewayError> + Send + Sync,
{
    reply: F,
    embedding_dim: usize,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest, &[LoadedImage]) -> Result<String, GatewayError> + Send + Sync,
{
    pub fn new(reply: F) -> FnBackend<F> {
        FnBackend {
            reply,
            embedding_dim: DEFAULT_MOCK_DIM,
        }
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&ChatRequest, &[LoadedImage]) -> Result<String, GatewayError> + Send + Sync,
{
    fn id(&self) -> &str {
        "fn-mock"
    }

    fn kind(&self) -> &'static str {
        "mock"
    }

    fn chat(
        &self,
        request: &ChatRequest,
        images: &[LoadedImage],
        _request_digest: &str,
    ) -> Result<BackendReply, GatewayError> {
        Ok(BackendReply {
            text: (self.reply)(request, images)?,
            usage: TokenUsage::default(),
        })
    }

    fn embed_text(&self, _model_id: &str, text: &str) -> Result<Vec<f64>, GatewayError> {
        Ok(seeded_vector(
            0,
            self.embedding_dim,
            "text",
            text.as_bytes(),
        ))
    }

    fn embed_image(&self, _model_id: &str, image: &LoadedImage) -> Result<Vec<f64>, GatewayError> {
        Ok(seeded_vector(
            0,
            self.embedding_dim,
            "image",
            image.digest.as_bytes(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::CallPurpose;

    fn request(text: &str) -> ChatRequest {
        ChatRequest {
            model_id: "m".into(),
            system_text: None,
            user_text: text.into(),
            images: vec![],
            max_output_tokens: 64,
            temperature: 0.0,
            purpose: CallPurpose::CueExtraction,
        }
    }

    #[test]
    fn first_matching_rule_wins() {
        let script = MockScript {
            rules: vec![
                MockRule {
                    matcher: MockMatch {
                        regex: Some("joy".into()),
                        ..Default::default()
                    },
                    respond: "first".into(),
                },
                MockRule {
                    matcher: MockMatch {
                        regex: Some("joy".into()),
                        ..Default::default()
                    },
                    respond: "second".into(),
                },
            ],
            ..Default::default()
        };
        let backend = MockBackend::new(script).unwrap();
        let reply = backend.chat(&request("about joy"), &[], "d").unwrap();
        assert_eq!(reply.text, "first");
    }

    #[test]
    fn digest_rule_matches_exact_digest() {
        let script = MockScript {
            rules: vec![MockRule {
                matcher: MockMatch {
                    digest: Some("d42".into()),
                    ..Default::default()
                },
                respond: "joy".into(),
            }],
            ..Default::default()
        };
        let backend = MockBackend::new(script).unwrap();
        assert_eq!(backend.chat(&request("x"), &[], "d42").unwrap().text, "joy");
        assert!(backend.chat(&request("x"), &[], "other").is_err());
    }

    #[test]
    fn all_match_fields_must_hold() {
        let script = MockScript {
            rules: vec![MockRule {
                matcher: MockMatch {
                    regex: Some("judge".into()),
                    image_digest: Some("img1".into()),
                    ..Default::default()
                },
                respond: "sadness".into(),
            }],
            default_response: Some("fallback".into()),
            ..Default::default()
        };
        let backend = MockBackend::new(script).unwrap();
        let image = LoadedImage {
            path: "a.img".into(),
            digest: "img1".into(),
            bytes: vec![],
        };
        let hit = backend
            .chat(
                &request("please judge this"),
                std::slice::from_ref(&image),
                "d",
            )
            .unwrap();
        assert_eq!(hit.text, "sadness");
        // Regex matches but image digest differs: falls through to default.
        let other = LoadedImage {
            digest: "img2".into(),
            ..image
        };
        let miss = backend
            .chat(&request("please judge this"), &[other], "d")
            .unwrap();
        assert_eq!(miss.text, "fallback");
    }

    #[test]
    fn embeddings_are_deterministic_and_content_addressed() {
        let backend = MockBackend::new(MockScript::default()).unwrap();
        let a = backend.embed_text("m", "hello").unwrap();
        let b = backend.embed_text("m", "hello").unwrap();
        let c = backend.embed_text("m", "world").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), DEFAULT_MOCK_DIM);

        let img1 = LoadedImage {
            path: "p1".into(),
            digest: "same".into(),
            bytes: vec![1],
        };
        let img2 = LoadedImage {
            path: "p2".into(),
            digest: "same".into(),
            bytes: vec![1],
        };
        assert_eq!(
            backend.embed_image("m", &img1).unwrap(),
            backend.embed_image("m", &img2).unwrap()
        );
    }

    #[test]
    fn script_roundtrips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mock.json");
        let script = MockScript {
            embedding_seed: 7,
            embedding_dim: 16,
            rules: vec![MockRule {
                matcher: MockMatch {
                    regex: Some("x".into()),
                    ..Default::default()
                },
                respond: "y".into(),
            }],
            default_response: None,
        };
        script.save(&path).unwrap();
        let loaded = MockScript::load(&path).unwrap();
        assert_eq!(loaded.embedding_seed, 7);
        assert_eq!(loaded.embedding_dim, 16);
        assert_eq!(loaded.rules.len(), 1);
    }
}
