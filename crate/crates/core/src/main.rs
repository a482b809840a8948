use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use treexplain::pipeline::{run_all, run_stage, PipelineConfig, PipelineError, Stage};

/// Distill a graph classifier from constituency trees and explain it.
#[derive(Parser, Debug)]
#[command(name = "treexplain", version)]
struct Cli {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stage; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Work directory for all outputs; overrides the config.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the synthetic two-class treebank.
    Corpus,
    /// Convert trees to graph NDJSON.
    Graphs,
    /// Attach embeddings (or hash features) and teacher labels.
    Features,
    /// Train the graph classifier on the training split.
    Train,
    /// Precision, recall and F1 on both splits.
    Eval,
    /// Explain held-out predictions.
    Explain,
    /// Search explainer hyperparameters.
    Hpo,
    /// Semantic words, structural metrics and correlations.
    Analyze,
    /// Summarize everything into report/summary.json.
    Report,
    /// Run every stage in order.
    All,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Corpus => Stage::Corpus,
            Command::Graphs => Stage::Graphs,
            Command::Features => Stage::Features,
            Command::Train => Stage::Train,
            Command::Eval => Stage::Eval,
            Command::Explain => Stage::Explain,
            Command::Hpo => Stage::Hpo,
            Command::Analyze => Stage::Analyze,
            Command::Report => Stage::Report,
            Command::All => return None,
        })
    }

    fn name(self) -> &'static str {
        self.stage().map_or("all", Stage::name)
    }
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(dir) = &cli.workdir {
        cfg.paths.workdir = dir.clone();
    }
    match cli.command.stage() {
        Some(stage) => {
            let manifest = run_stage(stage, &cfg)?;
            println!("{}", manifest.display());
        }
        None => run_all(&cfg)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = json!({
                "error": {
                    "stage": cli.command.name(),
                    "kind": e.kind(),
                    "message": e.to_string(),
                }
            });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
