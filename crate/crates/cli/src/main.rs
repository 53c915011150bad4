//! `crsim`: corpus preparation, simulation, replay, evaluation, toy training
//! and the human-evaluation server.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::CliError;

const FORMATS: &str = "\
File formats (one JSON object per line; an optional first line {\"_header\": {...}} is skipped on read):
  corpus     {dialogue_id, user_id, general_preferences, history: [{title, review}] x3,
              target_attributes, ground_truth: {item_id, title}, turns: [{role, text}]}
  catalog    {item_id, title[, embedding]}; an embedding catalog starts with {\"dimension\": N}
  personas   a corpus line, or {dialogue_id, persona, ground_truth}
  records    dialogue records as written by simulate / replay
  policy     a single JSON object: {\"kind\": \"queue\" | \"rule-user\" | \"rule-recommender\" | \"http\" | \"trace-replay\", ...}";

#[derive(Debug, Parser)]
#[command(name = "crsim", version, about = "Reference-free conversational recommendation simulation", after_help = FORMATS)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Drop dialogues with empty turns or off-catalog movies.
    Preprocess(PreprocessArgs),
    /// Write the user-view and recommender-view training files.
    ExportViews(ExportViewsArgs),
    /// Run both policies against each other for every persona.
    Simulate(SimulateArgs),
    /// Replay recorded dialogues against a generated user or recommender.
    Replay(ReplayArgs),
    /// Compute outcome, diversity and recommendation metrics over records.
    Eval(EvalArgs),
    /// Train the toy user and recommender models on the synthetic corpus.
    TrainToy(TrainToyArgs),
    /// Compare backprop against central differences on the toy model.
    GradCheck(GradCheckArgs),
    /// Greedy-decode turns from a toy checkpoint.
    Sample(SampleArgs),
    /// Serve the evaluation bench and chat API.
    Serve(ServeArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Preprocess(_) => "preprocess",
            Command::ExportViews(_) => "export-views",
            Command::Simulate(_) => "simulate",
            Command::Replay(_) => "replay",
            Command::Eval(_) => "eval",
            Command::TrainToy(_) => "train-toy",
            Command::GradCheck(_) => "grad-check",
            Command::Sample(_) => "sample",
            Command::Serve(_) => "serve",
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[command(after_help = FORMATS)]
pub struct PreprocessArgs {
    /// Source corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Item catalog (plain or embedding).
    #[arg(long)]
    pub catalog: PathBuf,
    /// Kept dialogues.
    #[arg(long)]
    pub out: PathBuf,
    /// Filter report; printed to stdout either way.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(after_help = FORMATS)]
pub struct ExportViewsArgs {
    /// Filtered corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// User-view output (loss on user messages).
    #[arg(long)]
    pub out_user: PathBuf,
    /// Recommender-view output (loss on recommender messages).
    #[arg(long)]
    pub out_rec: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args, Serialize)]
#[command(after_help = FORMATS)]
pub struct SimulateArgs {
    /// Personas to simulate.
    #[arg(long)]
    pub personas: PathBuf,
    /// User policy spec.
    #[arg(long)]
    pub user_policy: PathBuf,
    /// Recommender policy spec.
    #[arg(long)]
    pub rec_policy: PathBuf,
    /// Run seed. Required so every run is reproducible.
    #[arg(long)]
    pub seed: u64,
    /// Dialogue records.
    #[arg(long)]
    pub out: PathBuf,
    /// Turn cap, both roles counted.
    #[arg(long, default_value_t = crsim_core::engine::DEFAULT_MAX_TURNS)]
    pub max_turns: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also write every persona context shown to the recommender.
    #[arg(long)]
    pub contexts_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayMode {
    /// Recorded recommender turns, generated user turns.
    MultiTurn,
    /// One generated user turn at every recorded user position.
    UserSingleTurn,
    /// One generated recommender turn where the ground truth was recommended.
    RecAtGt,
}

#[derive(Debug, Args, Serialize)]
#[command(after_help = FORMATS)]
pub struct ReplayArgs {
    /// Recorded dialogues (corpus format).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = ReplayMode::MultiTurn)]
    pub mode: ReplayMode,
    /// User policy spec (multi-turn, user-single-turn).
    #[arg(long)]
    pub user_policy: Option<PathBuf>,
    /// Recommender policy spec (rec-at-gt).
    #[arg(long)]
    pub rec_policy: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep generating user turns after the first accept (multi-turn).
    #[arg(long)]
    pub score_all_turns: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also write every persona context shown to the recommender (rec-at-gt).
    #[arg(long)]
    pub contexts_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleArg {
    User,
    Recommender,
}

impl From<RoleArg> for crsim_core::protocol::Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::User => crsim_core::protocol::Role::User,
            RoleArg::Recommender => crsim_core::protocol::Role::Recommender,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[command(after_help = FORMATS)]
pub struct EvalArgs {
    /// Record files; metrics are computed over their union.
    #[arg(long, required = true, num_args = 1..)]
    pub records: Vec<PathBuf>,
    /// Embedding catalog, enables Match Score.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Title matching: strict keeps the release year, lenient drops it.
    #[arg(long, default_value = "strict")]
    pub titles: String,
    /// Match Score pooling: per-dialogue or per-turn.
    #[arg(long, default_value = "per-dialogue")]
    pub granularity: String,
    /// Restrict text statistics to one role's generated turns.
    #[arg(long, value_enum)]
    pub role: Option<RoleArg>,
    /// Keep records that ended in an agent error.
    #[arg(long)]
    pub include_errors: bool,
    /// Score single-turn samples against their references with token F1.
    #[arg(long)]
    pub token_f1: bool,
    /// Score single-turn samples with a remote similarity service instead.
    #[arg(long, conflicts_with = "token_f1")]
    pub similarity_url: Option<String>,
    /// Keep the per-turn Match Score audit in the report.
    #[arg(long)]
    pub audit: bool,
    /// Report file; printed to stdout either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print a text table instead of JSON.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainToyArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub n_dialogues: usize,
    #[arg(long, default_value_t = 2)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    /// Checkpoints, training log and audit go here.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Train each model on the other role's view (ablation).
    #[arg(long)]
    pub swap_views: bool,
    /// Held-out prompts per role for the legality audit.
    #[arg(long, default_value_t = crsim_toytrain::audit::AUDIT_PROMPTS)]
    pub audit_prompts: usize,
    #[arg(long, default_value_t = 4242)]
    pub audit_seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parameter coordinates to probe.
    #[arg(long, default_value_t = 128)]
    pub coords: usize,
    /// Exit 1 when the max relative error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 4242)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    /// Server config (JSON). CRSIM_* environment variables override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub records_dir: Option<PathBuf>,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return ExitCode::SUCCESS;
            }
            let err = CliError::Usage(e.kind().to_string());
            err.report(None);
            return err.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let name = cli.command.name();
    let result = match &cli.command {
        Command::Preprocess(a) => commands::preprocess(a),
        Command::ExportViews(a) => commands::export_views(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Replay(a) => commands::replay(a),
        Command::Eval(a) => commands::eval(a),
        Command::TrainToy(a) => commands::train_toy(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::Sample(a) => commands::sample(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report(Some(name));
            e.exit_code()
        }
    }
}
