//! Engine configuration: one TOML file drives every command of a run.
//!
//! Relative paths resolve against the config file's directory. The config
//! hash covers every semantically relevant field (the run directory is
//! excluded, so moving a run does not orphan its artifacts).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::OverallMode;
use crate::gateway::{ModelSettings, RetryPolicy};
use crate::taxonomy::{DatasetProfile, ProfileRegistry};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config '{path}': {message}")]
    Io { path: String, message: String },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_chat_model")]
    pub chat_model: String,
    #[serde(default = "default_embed_model")]
    pub embed_model: String,
    /// Environment variable holding the bearer token for HTTP backends.
    #[serde(default)]
    pub auth_env: Option<String>,
}

fn default_chat_model() -> String {
    "vlm".into()
}

fn default_embed_model() -> String {
    "encoder".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TextEmbeddingMode {
    /// Embed each extracted phrase and pool by renormalized mean.
    #[default]
    Pooled,
    /// Embed the phrases joined into one string.
    Concatenated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    /// Text-vs-image fusion weight.
    pub alpha: f64,
    /// Concepts retrieved per image.
    pub top_k: usize,
    /// Objective prompt budget (n).
    pub objective_prompts: usize,
    /// Subjective prompt budget per emotion (m).
    pub subjective_prompts: usize,
    pub refine_iterations: u32,
    /// Images per emotion per dataset for reverse reasoning.
    pub reasoning_per_emotion: usize,
    /// Images per emotion per dataset for refinement.
    pub fewshot_per_emotion: usize,
    pub base_seed: u64,
    pub parallelism: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub text_embedding: TextEmbeddingMode,
    pub overall_accuracy: OverallMode,
    /// Per-run cap on backend calls; absent means unlimited.
    pub call_cap: Option<u64>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            alpha: 0.6,
            top_k: 10,
            objective_prompts: 3,
            subjective_prompts: 7,
            refine_iterations: 3,
            reasoning_per_emotion: 5,
            fewshot_per_emotion: 5,
            base_seed: 17,
            parallelism: 1,
            temperature: 0.0,
            max_output_tokens: 1024,
            text_embedding: TextEmbeddingMode::Pooled,
            overall_accuracy: OverallMode::Micro,
            call_cap: None,
        }
    }
}

/// Runtime toggles that remove one pipeline stage each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AblationToggles {
    /// Skip concept retrieval entirely.
    pub no_retrieval: bool,
    /// Freeze the version-0 prompt set (skip refinement).
    pub no_refine: bool,
    /// Pin the fusion weight to 1 (ignore the image embedding).
    pub text_only: bool,
    /// Skip the final judgment call; use the elicitive-hit union.
    pub no_judge: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: PathBuf,
    pub run_dir: PathBuf,
    #[serde(default)]
    pub concept_corpus: Option<PathBuf>,
    #[serde(default)]
    pub mock_script: Option<PathBuf>,
    #[serde(default)]
    pub expert_cues: Option<PathBuf>,
    #[serde(default)]
    pub survey_stats: Option<PathBuf>,
    /// Persisted concept store; defaults to `<run_dir>/concepts.store`.
    #[serde(default)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryConfig {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig {
            max_retries: 2,
            base_delay_ms: 250,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomProfile {
    pub id: String,
    pub labels: Vec<String>,
    pub includes_neutral: bool,
    #[serde(default = "default_true")]
    pub multi_label: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub backend: BackendConfig,
    #[serde(default)]
    pub pipeline: PipelineSettings,
    #[serde(default)]
    pub ablation: AblationToggles,
    pub paths: PathsConfig,
    #[serde(default)]
    pub retry: RetryConfig,
    #[serde(default)]
    pub profiles: Vec<CustomProfile>,
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<EngineConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config: EngineConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.paths.manifest);
        resolve(&mut self.paths.run_dir);
        for p in [
            &mut self.paths.concept_corpus,
            &mut self.paths.mock_script,
            &mut self.paths.expert_cues,
            &mut self.paths.survey_stats,
            &mut self.paths.store,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        let p = &self.pipeline;
        if !(0.0..=1.0).contains(&p.alpha) {
            return bad(format!("alpha {} outside [0, 1]", p.alpha));
        }
        if p.top_k < 1 {
            return bad("top_k must be at least 1".into());
        }
        if p.objective_prompts < 1 || p.subjective_prompts < 1 {
            return bad("prompt budgets must be at least 1".into());
        }
        if p.parallelism < 1 {
            return bad("parallelism must be at least 1".into());
        }
        if p.temperature < 0.0 {
            return bad(format!("temperature {} is negative", p.temperature));
        }
        if p.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive".into());
        }
        match self.backend.kind {
            BackendKind::Http if self.backend.base_url.is_none() => {
                return bad("http backend requires base_url".into());
            }
            BackendKind::Mock if self.paths.mock_script.is_none() => {
                return bad("mock backend requires paths.mock_script".into());
            }
            _ => {}
        }
        for profile in &self.profiles {
            DatasetProfile::new(
                &profile.id,
                &profile
                    .labels
                    .iter()
                    .map(String::as_str)
                    .collect::<Vec<_>>(),
                profile.includes_neutral,
                profile.multi_label,
            )
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Built-in profiles plus any custom ones from the config.
    pub fn registry(&self) -> Result<ProfileRegistry, ConfigError> {
        let mut registry = ProfileRegistry::builtin();
        for profile in &self.profiles {
            let profile = DatasetProfile::new(
                &profile.id,
                &profile
                    .labels
                    .iter()
                    .map(String::as_str)
                    .collect::<Vec<_>>(),
                profile.includes_neutral,
                profile.multi_label,
            )
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            registry
                .register(profile)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(registry)
    }

    /// Hash over every field that can change run outputs. Operational knobs
    /// that only decide whether and how fast a run completes (run directory,
    /// call cap, retries, parallelism) are excluded, so an interrupted run
    /// can be resumed with a lifted budget.
    pub fn content_hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.paths.run_dir = PathBuf::new();
        hashed.pipeline.call_cap = None;
        hashed.pipeline.parallelism = 1;
        hashed.retry = RetryConfig::default();
        let json = serde_json::to_string(&hashed).expect("serializable");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn model_settings(&self) -> ModelSettings {
        ModelSettings {
            chat_model: self.backend.chat_model.clone(),
            embed_model: self.backend.embed_model.clone(),
            temperature: self.pipeline.temperature,
            max_output_tokens: self.pipeline.max_output_tokens,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.retry.max_retries,
            base_delay: std::time::Duration::from_millis(self.retry.base_delay_ms),
        }
    }

    pub fn store_path(&self) -> PathBuf {
        self.paths
            .store
            .clone()
            .unwrap_or_else(|| self.paths.run_dir.join("concepts.store"))
    }
}
