//! Pipeline assembly: wires the gateway, taxonomy, reasoning, prompting,
//! retrieval, judgment, and evaluation stages into reproducible, resumable
//! commands over one run directory.

use std::path::Path;

use thiserror::Error;

use crate::config::{BackendKind, EngineConfig, TextEmbeddingMode};
use crate::error::PipelineError;
use crate::eval::manifest::{load_manifest, ManifestEntry, Split};
use crate::eval::report::{
    build_report, load_prediction_records, load_report, predictions_from_records, render_table,
    save_report, EvalReport,
};
use crate::eval::{EvalError, PredictionRecord, Provenance};
use crate::gateway::http::HttpBackend;
use crate::gateway::mock::MockBackend;
use crate::gateway::{Backend, Embedding, GatewayError, ModelGateway, ResponseCache, TemplateSet};
use crate::judge::ablation_reflect;
use crate::prompts::{generate_prompts, refinement_loop, run_prompt_extraction, FewShotSet};
use crate::reasoning::{
    build_reverse_corpus, direct_informing, reverse_reasoning, ContrastiveLogic, ExpertCueSet,
    SurveyStats,
};
use crate::retrieval::{
    pool_text_embeddings, retrieve_topk, ConceptStore, CueExtraction, FusionWeight,
    RetrievedConcepts,
};
use crate::run::RunDir;
use crate::taxonomy::ProfileRegistry;
use crate::transcript::{Transcript, TranscriptEvent};

/// Top-level error with the CLI exit-code contract:
/// 2 config, 3 backend, 4 data.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("data error: {0}")]
    Data(String),
}

impl EngineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Config(_) => 2,
            EngineError::Backend(_) => 3,
            EngineError::Data(_) => 4,
        }
    }
}

impl From<crate::config::ConfigError> for EngineError {
    fn from(e: crate::config::ConfigError) -> Self {
        EngineError::Config(e.to_string())
    }
}

impl From<GatewayError> for EngineError {
    fn from(e: GatewayError) -> Self {
        match &e {
            GatewayError::Transport { .. }
            | GatewayError::Refusal { .. }
            | GatewayError::BudgetExceeded { .. }
            | GatewayError::Script(_) => EngineError::Backend(e.to_string()),
            GatewayError::MissingBinding { .. } => EngineError::Config(e.to_string()),
            _ => EngineError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for EngineError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Gateway(g) => g.into(),
            PipelineError::ParseFailure { .. } => EngineError::Backend(e.to_string()),
            _ => EngineError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for EngineError {
    fn from(e: EvalError) -> Self {
        EngineError::Data(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct IngestSummary {
    pub checksum: String,
    pub concepts: usize,
    pub store_path: std::path::PathBuf,
}

#[derive(Debug, Clone)]
pub struct PrepareSummary {
    pub prompt_version: u32,
    pub prompt_hash: String,
    pub objective_prompts: usize,
    pub subjective_prompts: usize,
    pub contrastive_rules: usize,
}

#[derive(Debug, Clone)]
pub struct InferSummary {
    pub predicted: usize,
    pub resumed: usize,
    pub flagged_empty: usize,
}

pub struct Engine {
    config: EngineConfig,
    registry: ProfileRegistry,
    templates: TemplateSet,
    gateway: ModelGateway,
    transcript: Transcript,
    run: RunDir,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Engine, EngineError> {
        let registry = config.registry()?;
        let transcript = Transcript::new();
        let run = RunDir::init(
            &config.paths.run_dir,
            &toml::to_string_pretty(&config).expect("serializable config"),
            &config.content_hash(),
        )
        .map_err(|e| EngineError::Config(e.to_string()))?;

        let backend: Box<dyn Backend> = match config.backend.kind {
            BackendKind::Mock => {
                let script = config.paths.mock_script.as_ref().expect("validated");
                Box::new(MockBackend::from_file(script).map_err(EngineError::from)?)
            }
            BackendKind::Http => {
                let base_url = config.backend.base_url.as_ref().expect("validated");
                let token = config
                    .backend
                    .auth_env
                    .as_ref()
                    .and_then(|var| std::env::var(var).ok());
                Box::new(HttpBackend::new(base_url, token).map_err(EngineError::from)?)
            }
        };
        let gateway = ModelGateway::new(
            backend,
            ResponseCache::at(&run.cache_dir()),
            transcript.clone(),
            config.model_settings(),
            config.retry_policy(),
            config.pipeline.call_cap,
        );
        Ok(Engine {
            config,
            registry,
            templates: TemplateSet::builtin(),
            gateway,
            transcript,
            run,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &RunDir {
        &self.run
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    fn flush_transcript(&self, command: &str) -> Result<(), EngineError> {
        let events = self.transcript.events();
        self.run
            .append_transcript(command, &events)
            .map_err(EngineError::from)?;
        self.transcript.clear();
        Ok(())
    }

    fn load_entries(&self) -> Result<Vec<ManifestEntry>, EngineError> {
        Ok(load_manifest(&self.config.paths.manifest, &self.registry)?)
    }

    // -----------------------------------------------------------------
    // ingest
    // -----------------------------------------------------------------

    pub fn ingest(&self) -> Result<IngestSummary, EngineError> {
        let corpus = self.config.paths.concept_corpus.as_ref().ok_or_else(|| {
            EngineError::Config("paths.concept_corpus is required for ingest".into())
        })?;
        if !corpus.exists() {
            return Err(EngineError::Config(format!(
                "concept corpus '{}' does not exist",
                corpus.display()
            )));
        }
        let store = crate::retrieval::ingest_concepts(&self.gateway, corpus)?;
        let store_path = self.config.store_path();
        store.save(&store_path)?;
        self.run
            .update_meta(|m| m.store_checksum = Some(store.checksum().to_string()))?;
        self.flush_transcript("ingest")?;
        Ok(IngestSummary {
            checksum: store.checksum().to_string(),
            concepts: store.len(),
            store_path,
        })
    }

    // -----------------------------------------------------------------
    // prepare
    // -----------------------------------------------------------------

    pub fn prepare(&self) -> Result<PrepareSummary, EngineError> {
        let entries = self.load_entries()?;
        let settings = &self.config.pipeline;

        let experts = match &self.config.paths.expert_cues {
            Some(path) => ExpertCueSet::from_tsv(&std::fs::read_to_string(path).map_err(|e| {
                EngineError::Config(format!("cannot read expert cues '{}': {e}", path.display()))
            })?)?,
            None => ExpertCueSet::bundled(),
        };
        let survey = match &self.config.paths.survey_stats {
            Some(path) => SurveyStats::from_tsv(&std::fs::read_to_string(path).map_err(|e| {
                EngineError::Config(format!(
                    "cannot read survey stats '{}': {e}",
                    path.display()
                ))
            })?)?,
            None => SurveyStats::bundled(),
        };

        let catalog = direct_informing(&self.gateway, &self.templates, &experts, &survey)?;
        std::fs::write(
            self.run.catalog_path(),
            serde_json::to_string_pretty(&catalog).expect("serializable"),
        )
        .map_err(PipelineError::from)?;

        let corpus = build_reverse_corpus(
            &entries,
            &self.registry,
            settings.reasoning_per_emotion,
            settings.base_seed,
        )?;
        let mut rules = Vec::new();
        for item in &corpus {
            let profile = self
                .registry
                .get(&item.dataset_id)
                .map_err(PipelineError::from)?;
            let logic = reverse_reasoning(
                &self.gateway,
                &self.templates,
                &item.ground_truth,
                profile,
                &item.image,
            )?;
            rules.extend(logic.rules);
        }
        let logic = ContrastiveLogic::merge(rules);
        std::fs::write(
            self.run.logic_path(),
            serde_json::to_string_pretty(&logic).expect("serializable"),
        )
        .map_err(PipelineError::from)?;

        let mut dataset_ids: Vec<String> = entries.iter().map(|e| e.dataset_id.clone()).collect();
        dataset_ids.sort();
        dataset_ids.dedup();
        let run_profile = self
            .registry
            .union_profile(&dataset_ids)
            .map_err(PipelineError::from)?;

        let initial = generate_prompts(
            &self.gateway,
            &self.templates,
            &catalog,
            &logic,
            &run_profile,
            settings.objective_prompts,
            settings.subjective_prompts,
        )?;
        self.run.save_prompt_round(&initial)?;

        let skip_refinement = self.config.ablation.no_refine || settings.refine_iterations == 0;
        let final_prompts = if skip_refinement {
            initial
        } else {
            let fewshot = FewShotSet::build(
                &entries,
                &self.registry,
                settings.fewshot_per_emotion,
                settings.base_seed,
            )?;
            let run_dir = self.run.journal_dir();
            refinement_loop(
                &self.gateway,
                &self.templates,
                initial,
                &fewshot,
                settings.refine_iterations,
                &catalog,
                &logic,
                Some(&run_dir),
                settings.parallelism,
                |round| {
                    self.run.save_prompt_round(round)?;
                    Ok(())
                },
            )?
        };

        self.run.save_final_prompts(&final_prompts)?;
        let prompt_hash = final_prompts.content_hash();
        self.run.update_meta(|m| {
            m.prompt_version = Some(final_prompts.version);
            m.prompt_hash = Some(prompt_hash.clone());
        })?;
        self.flush_transcript("prepare")?;
        Ok(PrepareSummary {
            prompt_version: final_prompts.version,
            prompt_hash: final_prompts.content_hash(),
            objective_prompts: final_prompts.objective.len(),
            subjective_prompts: final_prompts.total() - final_prompts.objective.len(),
            contrastive_rules: logic.rules.len(),
        })
    }

    // -----------------------------------------------------------------
    // infer
    // -----------------------------------------------------------------

    pub fn infer(&self) -> Result<InferSummary, EngineError> {
        let entries = self.load_entries()?;
        let toggles = self.config.ablation;
        let settings = &self.config.pipeline;

        let prompts = self.run.load_final_prompts()?;
        let prompt_hash = prompts.content_hash();
        if let Some(meta) = self.run.read_meta()? {
            if let Some(frozen) = &meta.prompt_hash {
                if frozen != &prompt_hash {
                    return Err(EngineError::Data(format!(
                        "frozen prompt set changed mid-run: expected hash {frozen}, found {prompt_hash}"
                    )));
                }
            }
        }

        let store = if toggles.no_retrieval {
            None
        } else {
            let path = self.config.store_path();
            if !path.exists() {
                return Err(EngineError::Data(format!(
                    "no concept store at '{}'; run `ingest` first",
                    path.display()
                )));
            }
            Some(ConceptStore::load(&path)?)
        };
        let store_checksum = store.as_ref().map(|s| s.checksum().to_string());

        // Journal: digests already predicted are skipped on resume.
        let mut done: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
        if self.run.predictions_path().exists() {
            for record in load_prediction_records(&self.run.predictions_path())? {
                if record.provenance.prompt_hash != prompt_hash {
                    return Err(EngineError::Data(format!(
                        "prediction journal was written under prompt hash {}; current is {prompt_hash}",
                        record.provenance.prompt_hash
                    )));
                }
                done.insert(record.image_digest);
            }
        }

        let alpha = if toggles.text_only {
            FusionWeight::TEXT_ONLY
        } else {
            FusionWeight::new(settings.alpha)?
        };
        let config_hash = self.config.content_hash();
        let mut summary = InferSummary {
            predicted: 0,
            resumed: done.len(),
            flagged_empty: 0,
        };

        for entry in entries.iter().filter(|e| e.split == Split::Test) {
            if done.contains(&entry.digest) {
                continue;
            }
            let profile = self
                .registry
                .get(&entry.dataset_id)
                .map_err(PipelineError::from)?;

            let extraction = run_prompt_extraction(
                &self.gateway,
                &prompts,
                &entry.image,
                &entry.digest,
                settings.parallelism,
            )?;
            if extraction.is_empty() {
                summary.flagged_empty += 1;
                log::warn!(
                    "image {} yielded no cues under any prompt; continuing with image-only retrieval",
                    &entry.digest[..12.min(entry.digest.len())]
                );
            }

            let retrieved: Option<RetrievedConcepts> = match &store {
                None => None,
                Some(store) => {
                    let image_embedding = self.gateway.embed_image(&entry.image)?;
                    let (text_embedding, effective_alpha) = if extraction.is_empty() {
                        // No text signal: score on the image alone.
                        (retag_as_text(&image_embedding), FusionWeight::IMAGE_ONLY)
                    } else {
                        (self.embed_cues(&extraction)?, alpha)
                    };
                    let result = retrieve_topk(
                        store,
                        &text_embedding,
                        &image_embedding,
                        effective_alpha,
                        settings.top_k,
                    )?;
                    self.transcript.record(TranscriptEvent::ConceptRetrieval {
                        image_digest: entry.digest.clone(),
                        alpha: effective_alpha.value(),
                        k: settings.top_k,
                    });
                    Some(result)
                }
            };

            let judgment = ablation_reflect(
                &self.gateway,
                &self.templates,
                &extraction,
                retrieved.as_ref(),
                &entry.image,
                profile,
                toggles.no_retrieval,
                toggles.no_judge,
            )?;

            let record = PredictionRecord {
                image_digest: entry.digest.clone(),
                predicted: judgment
                    .emotions
                    .iter()
                    .map(|l| l.as_str().to_string())
                    .collect(),
                provenance: Provenance {
                    prompt_version: prompts.version,
                    prompt_hash: prompt_hash.clone(),
                    store_checksum: store_checksum.clone(),
                    config_hash: config_hash.clone(),
                },
            };
            self.run.append_prediction(&record)?;
            done.insert(entry.digest.clone());
            summary.predicted += 1;
        }

        self.flush_transcript("infer")?;
        Ok(summary)
    }

    fn embed_cues(
        &self,
        extraction: &crate::prompts::PromptExtraction,
    ) -> Result<Embedding, EngineError> {
        let cues = CueExtraction::from_prompt_extraction(extraction);
        match self.config.pipeline.text_embedding {
            TextEmbeddingMode::Pooled => {
                let embeddings = cues
                    .phrases
                    .iter()
                    .map(|phrase| self.gateway.embed_text(phrase))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(pool_text_embeddings(&embeddings)?)
            }
            TextEmbeddingMode::Concatenated => {
                Ok(self.gateway.embed_text(&cues.phrases.join("; "))?)
            }
        }
    }

    // -----------------------------------------------------------------
    // eval / report
    // -----------------------------------------------------------------

    pub fn eval(&self) -> Result<EvalReport, EngineError> {
        let entries = self.load_entries()?;
        let predictions_path = self.run.predictions_path();
        if !predictions_path.exists() {
            return Err(EngineError::Data(format!(
                "no predictions at '{}'; run `infer` first",
                predictions_path.display()
            )));
        }
        let records = load_prediction_records(&predictions_path)?;
        let predictions = predictions_from_records(&records, &entries, &self.registry)?;
        let report = build_report(
            &predictions,
            &entries,
            &self.registry,
            self.config.pipeline.base_seed,
            self.config.pipeline.overall_accuracy,
        )?;
        save_report(&report, &self.run.report_json_path())?;
        std::fs::write(self.run.report_table_path(), render_table(&report))
            .map_err(PipelineError::from)?;
        Ok(report)
    }

    pub fn report(&self) -> Result<String, EngineError> {
        let path = self.run.report_json_path();
        if !path.exists() {
            return Err(EngineError::Data(format!(
                "no report at '{}'; run `eval` first",
                path.display()
            )));
        }
        Ok(render_table(&load_report(&path)?))
    }
}

/// Relabels an image embedding as text so it can stand in for the missing
/// text side of an image-only retrieval.
fn retag_as_text(embedding: &Embedding) -> Embedding {
    Embedding {
        values: embedding.values.clone(),
        modality: crate::gateway::Modality::Text,
    }
}

/// Loads the config and builds an engine, the entry point used by the CLI.
pub fn engine_from_config_path(path: &Path) -> Result<Engine, EngineError> {
    let config = EngineConfig::load(path)?;
    Engine::new(config)
}
