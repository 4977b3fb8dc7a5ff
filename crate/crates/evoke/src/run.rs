//! Run directory lifecycle: config snapshot, versioned prompt artifacts,
//! append-only prediction journal, and the call transcript.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::eval::PredictionRecord;
use crate::prompts::PromptSet;
use crate::transcript::TranscriptEvent;

/// Everything a run pins down, written alongside the artifacts so later
/// commands can refuse mismatched state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RunMeta {
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_checksum: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates (or reopens) a run directory, snapshotting the config text.
    /// Reopening under a different config hash is refused.
    pub fn init(
        root: &Path,
        config_text: &str,
        config_hash: &str,
    ) -> Result<RunDir, PipelineError> {
        std::fs::create_dir_all(root)?;
        let run = RunDir {
            root: root.to_path_buf(),
        };
        std::fs::create_dir_all(run.prompts_dir())?;
        std::fs::create_dir_all(run.journal_dir())?;

        match run.read_meta()? {
            Some(existing) if existing.config_hash != config_hash => {
                return Err(PipelineError::InsufficientData(format!(
                    "run directory '{}' was created under config hash {} but the current config hashes to {config_hash}",
                    root.display(),
                    existing.config_hash
                )));
            }
            Some(_) => {}
            None => {
                run.write_meta(&RunMeta {
                    config_hash: config_hash.to_string(),
                    ..RunMeta::default()
                })?;
                std::fs::write(run.root.join("config.toml"), config_text)?;
            }
        }
        Ok(run)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn prompts_dir(&self) -> PathBuf {
        self.root.join("prompts")
    }

    pub fn journal_dir(&self) -> PathBuf {
        self.root.join("journal")
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.root.join("catalog.json")
    }

    pub fn logic_path(&self) -> PathBuf {
        self.root.join("logic.json")
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }

    pub fn report_json_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_table_path(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.root.join("transcript.jsonl")
    }

    fn meta_path(&self) -> PathBuf {
        self.root.join("run.json")
    }

    pub fn read_meta(&self) -> Result<Option<RunMeta>, PipelineError> {
        let path = self.meta_path();
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(path)?;
        let meta = serde_json::from_str(&text).map_err(|e| PipelineError::ParseFailure {
            stage: "run_meta",
            detail: e.to_string(),
        })?;
        Ok(Some(meta))
    }

    pub fn write_meta(&self, meta: &RunMeta) -> Result<(), PipelineError> {
        std::fs::write(
            self.meta_path(),
            serde_json::to_string_pretty(meta).expect("serializable"),
        )?;
        Ok(())
    }

    pub fn update_meta(&self, update: impl FnOnce(&mut RunMeta)) -> Result<RunMeta, PipelineError> {
        let mut meta = self.read_meta()?.unwrap_or_default();
        update(&mut meta);
        self.write_meta(&meta)?;
        Ok(meta)
    }

    pub fn save_prompt_round(&self, prompts: &PromptSet) -> Result<PathBuf, PipelineError> {
        let path = self
            .prompts_dir()
            .join(format!("round-{:03}.json", prompts.version));
        prompts.save(&path)?;
        Ok(path)
    }

    pub fn final_prompts_path(&self) -> PathBuf {
        self.prompts_dir().join("final.json")
    }

    pub fn save_final_prompts(&self, prompts: &PromptSet) -> Result<(), PipelineError> {
        prompts.save(&self.final_prompts_path())
    }

    pub fn load_final_prompts(&self) -> Result<PromptSet, PipelineError> {
        let path = self.final_prompts_path();
        if !path.exists() {
            return Err(PipelineError::InsufficientData(format!(
                "no frozen prompt set at '{}'; run `prepare` first",
                path.display()
            )));
        }
        PromptSet::load(&path)
    }

    pub fn append_prediction(&self, record: &PredictionRecord) -> Result<(), PipelineError> {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.predictions_path())?;
        writeln!(
            file,
            "{}",
            serde_json::to_string(record).expect("serializable")
        )?;
        Ok(())
    }

    /// Appends one command's events under a marker line.
    pub fn append_transcript(
        &self,
        command: &str,
        events: &[TranscriptEvent],
    ) -> Result<(), PipelineError> {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.transcript_path())?;
        writeln!(
            file,
            "{}",
            serde_json::json!({"command": command, "events": events.len()})
        )?;
        for event in events {
            writeln!(
                file,
                "{}",
                serde_json::to_string(event).expect("serializable")
            )?;
        }
        Ok(())
    }

    /// Reads back every transcript event, ignoring command marker lines.
    pub fn load_transcript_events(&self) -> Result<Vec<TranscriptEvent>, PipelineError> {
        Ok(self
            .load_transcript_sections()?
            .into_iter()
            .flat_map(|(_, events)| events)
            .collect())
    }

    /// Reads the transcript grouped by the command that produced each batch
    /// of events.
    pub fn load_transcript_sections(
        &self,
    ) -> Result<Vec<(String, Vec<TranscriptEvent>)>, PipelineError> {
        let path = self.transcript_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = std::fs::read_to_string(path)?;
        let mut sections: Vec<(String, Vec<TranscriptEvent>)> = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| PipelineError::ParseFailure {
                    stage: "transcript",
                    detail: e.to_string(),
                })?;
            if let Some(command) = value.get("command").and_then(|c| c.as_str()) {
                sections.push((command.to_string(), Vec::new()));
                continue;
            }
            let event: TranscriptEvent =
                serde_json::from_value(value).map_err(|e| PipelineError::ParseFailure {
                    stage: "transcript",
                    detail: e.to_string(),
                })?;
            match sections.last_mut() {
                Some((_, events)) => events.push(event),
                None => sections.push(("unknown".to_string(), vec![event])),
            }
        }
        Ok(sections)
    }
}
