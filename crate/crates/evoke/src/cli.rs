//! Command-line interface: `ingest`, `prepare`, `infer`, `eval`, `report`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 backend error,
//! 4 data error.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::pipeline::{engine_from_config_path, EngineError};

#[derive(Parser)]
#[command(
    name = "evoke",
    version,
    about = "Predict the emotions an image evokes in viewers via cue reasoning, refined prompts, concept retrieval, and an arousal judgment"
)]
struct Cli {
    /// Engine config file.
    #[arg(short, long, global = true, default_value = "evoke.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest the concept corpus into a persisted, checksummed store.
    Ingest,
    /// Build the cue catalog, contrastive rules, and the frozen prompt set.
    Prepare,
    /// Predict emotions for every test image in the manifest (resumable).
    Infer,
    /// Score the predictions and write the evaluation report.
    Eval,
    /// Render a previously computed report.
    Report,
}

pub fn run() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), EngineError> {
    let engine = engine_from_config_path(&cli.config)?;
    match cli.command {
        Command::Ingest => {
            let summary = engine.ingest()?;
            println!(
                "ingested {} concepts into {} (checksum {})",
                summary.concepts,
                summary.store_path.display(),
                summary.checksum
            );
        }
        Command::Prepare => {
            let summary = engine.prepare()?;
            println!(
                "prepared prompt set v{} ({} objective, {} subjective, {} contrastive rules, hash {})",
                summary.prompt_version,
                summary.objective_prompts,
                summary.subjective_prompts,
                summary.contrastive_rules,
                summary.prompt_hash
            );
        }
        Command::Infer => {
            let summary = engine.infer()?;
            println!(
                "predicted {} image(s), {} resumed from journal, {} flagged empty",
                summary.predicted, summary.resumed, summary.flagged_empty
            );
        }
        Command::Eval => {
            let report = engine.eval()?;
            print!("{}", crate::eval::report::render_table(&report));
            println!(
                "report written to {}",
                engine.run_dir().report_json_path().display()
            );
        }
        Command::Report => {
            print!("{}", engine.report()?);
        }
    }
    Ok(())
}
