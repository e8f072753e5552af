use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(name = "hintforge", version, about = "Distill agent traces into hints and retrieve them")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Send stats, retrieve and docs search to a running service.
    #[arg(long, global = true)]
    pub server: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load and validate a trace file or directory.
    Ingest(IngestArgs),
    /// Run the hint generation pipeline over traces.
    Generate(GenerateArgs),
    /// Summarize a hint database.
    Stats(StatsArgs),
    /// Retrieve hints for a goal or a step context.
    Retrieve(RetrieveArgs),
    /// Index or search a documentation corpus.
    #[command(subcommand)]
    Docs(DocsCommand),
    /// Serve retrieval over HTTP.
    Serve(ServeArgs),
    /// Measure hint uplift on the synthetic environment suite.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// `.traces.jsonl` file or a directory of them.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Write the valid traces to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit 1 when any line was rejected.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Output database directory.
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Evidence modes: single, pair, multi or all. Repeatable.
    #[arg(long = "mode")]
    pub modes: Vec<String>,
    #[arg(long, conflicts_with = "no_zoom")]
    pub zoom: bool,
    #[arg(long)]
    pub no_zoom: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub delta: Option<usize>,
    #[arg(long)]
    pub reject_log: Option<PathBuf>,
    /// Continue a halted run stored in `--db`.
    #[arg(long)]
    pub resume: bool,
    /// Backend for every model role: http, demo or scripted:PATH.
    #[arg(long)]
    pub backend: Option<String>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub db: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Episode-level query.
    #[arg(long, conflicts_with = "context", required_unless_present = "context")]
    pub goal: Option<String>,
    /// Step-level query.
    #[arg(long)]
    pub context: Option<String>,
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub goal_id: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// in_task, cross_task, hybrid or hybrid:W.
    #[arg(long)]
    pub mode: Option<String>,
    /// bm25, embedding or llm.
    #[arg(long)]
    pub scorer: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum DocsCommand {
    /// Build and save a search index over a markdown corpus.
    Index(DocsIndexArgs),
    /// Search a saved index.
    Search(DocsSearchArgs),
}

#[derive(Args, Debug)]
pub struct DocsIndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// sparse, dense or both.
    #[arg(long, default_value = "sparse")]
    pub method: String,
}

#[derive(Args, Debug)]
pub struct DocsSearchArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value = "chunk")]
    pub granularity: String,
    #[arg(long, default_value = "sparse")]
    pub method: String,
    #[arg(long)]
    pub depth: Option<usize>,
    /// goal uses the query as is; llm rewrites it first.
    #[arg(long, default_value = "goal")]
    pub query_mode: String,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub docs_index: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Hint database; defaults to one generated from the suite's own traces.
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Comma-separated regimes: none, episode, step.
    #[arg(long, default_value = "none,episode,step")]
    pub regimes: String,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub scorer: Option<String>,
    /// Training goals per environment for the generated database.
    #[arg(long, default_value_t = 2)]
    pub seeds: usize,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    /// Run the hinted regimes against an empty database.
    #[arg(long)]
    pub empty_db: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("HINTFORGE_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            let usage = e.downcast_ref::<commands::UsageError>().is_some();
            eprintln!("error: {e:#}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
