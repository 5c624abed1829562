//! `faultloom`: run an LLM-assisted fault study, whole or one stage at a time.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use faultloom_core::pipeline::{Overrides, Pipeline, PipelineConfig, Services, Stage, StageOutcome};
use faultloom_core::{EvalReport, Mode};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "faultloom", version, about = "LLM-assisted empirical fault study pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch issues from the configured repositories
    Ingest(Common),
    /// Load issues from the configured dump files
    Import(Common),
    /// Draw the balanced evaluation sample
    Sample(Common),
    /// Propose a study plan and score it against the reference selection
    Define(Common),
    /// Apply the deterministic criteria and the model verdict
    Filter(Common),
    /// Classify issues into the symptom and root-cause taxonomies
    Classify(Common),
    /// Score every stage against the gold labels
    Evaluate(Common),
    /// Re-render report files from the evaluation
    Report(Common),
    /// Run every stage in order
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration file
    #[arg(long, short)]
    config: PathBuf,
    /// Override the gateway mode
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Override the model id (`<provider>/<model>`)
    #[arg(long)]
    model: Option<String>,
    /// Override the sampling seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override intra-stage parallelism
    #[arg(long)]
    parallelism: Option<usize>,
    /// Override the run directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

impl Common {
    fn load(&self) -> anyhow::Result<PipelineConfig> {
        let mut config = PipelineConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        config.apply(&Overrides {
            mode: self.mode,
            model_id: self.model.clone(),
            seed: self.seed,
            parallelism: self.parallelism,
            output_dir: self.out.clone(),
        });
        Ok(config)
    }
}

fn print_outcome(outcome: &StageOutcome) {
    let verb = if outcome.skipped { "up to date" } else { "done" };
    println!("{}: {verb}", outcome.stage);
    for a in &outcome.artifacts {
        println!("  {}", a.display());
    }
}

fn print_summary(report: &EvalReport, dir: &std::path::Path) {
    if let Some(s) = &report.stage1 {
        println!("{:<32}{}", "stage I plan recall", s.recall);
    }
    if let Some(s) = &report.stage2 {
        println!("{:<32}{}", "stage II accuracy", s.accuracy);
    }
    if let Some(s) = &report.stage3_symptom {
        println!("{:<32}{}", "stage III symptom accuracy", s.accuracy);
    }
    if let Some(s) = &report.stage3_rootcause {
        println!("{:<32}{}", "stage III root-cause accuracy", s.accuracy);
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    println!("report: {}", dir.join("summary.md").display());
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, stage) = match &cli.command {
        Command::Ingest(c) => (c, Some(Stage::Ingest)),
        Command::Import(c) => (c, Some(Stage::Import)),
        Command::Sample(c) => (c, Some(Stage::Sample)),
        Command::Define(c) => (c, Some(Stage::Define)),
        Command::Filter(c) => (c, Some(Stage::Filter)),
        Command::Classify(c) => (c, Some(Stage::Classify)),
        Command::Evaluate(c) => (c, Some(Stage::Evaluate)),
        Command::Report(c) => (c, Some(Stage::Report)),
        Command::Run(c) => (c, None),
    };
    let mut pipeline = Pipeline::open(common.load()?, Services::default())?;
    match stage {
        Some(stage) => print_outcome(&pipeline.run_one(stage)?),
        None => {
            let report = pipeline.run()?;
            print_summary(&report, pipeline.run_dir());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("FAULTLOOM_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
