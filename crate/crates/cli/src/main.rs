mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ctakit", version, about = "Column type annotation with chat models")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Http,
    Mock,
    Replay,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML file whose keys mirror the long flags; flags on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory holding corpus copies, definitions, runs and reports
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub workdir: PathBuf,
    /// Corpus directory [default: <workdir>/corpus]
    #[arg(long, global = true, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = BackendArg::Http)]
    pub backend: BackendArg,
    /// Model id [default: gpt-4o-2024-08-06; under replay, the cassette's only model]
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Base URL of an OpenAI-compatible API
    #[arg(long, global = true, default_value = "https://api.openai.com/v1")]
    pub endpoint: String,
    /// Environment variable holding the API key
    #[arg(long, global = true, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
    #[arg(long, global = true, default_value_t = 120)]
    pub timeout_secs: u64,
    #[arg(long, global = true, default_value_t = 5)]
    pub max_retries: u32,
    /// Minimum spacing between requests
    #[arg(long, global = true, default_value_t = 0)]
    pub min_interval_ms: u64,
    /// Cassette answering requests under --backend replay
    #[arg(long, global = true, value_name = "FILE")]
    pub cassette: Option<PathBuf>,
    /// Append every exchange with the backend to this cassette
    #[arg(long, global = true, value_name = "FILE")]
    pub record: Option<PathBuf>,
    /// Percentage of columns the mock backend answers wrongly
    #[arg(long, global = true, default_value_t = 0, value_parser = clap::value_parser!(u64).range(0..=100))]
    pub mock_error_percent: u64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Upper bound on concurrent backend calls
    #[arg(long, global = true, default_value_t = 4)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Validate a corpus directory and copy it into the workdir
    Ingest(IngestArgs),
    /// Cap the number of train columns per label
    Downsample(DownsampleArgs),
    /// Annotate a split and save the run
    Annotate(AnnotateArgs),
    /// Generate label definitions
    Defgen(DefgenArgs),
    /// Refine definitions against validation-set errors
    Refine(RefineArgs),
    /// Let a reviewer model correct a prior run
    Review(ReviewArgs),
    /// Score a run
    Eval(EvalArgs),
    /// Token usage, dollar costs and break-even points
    Cost(CostArgs),
    /// Export a fine-tuning set as chat JSONL
    Ftset(FtsetArgs),
    /// Re-run the full pipeline from a cassette
    Replay(PipelineArgs),
    /// Run every stage end to end
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Corpus directory to validate
    #[arg(long, value_name = "DIR")]
    pub source: PathBuf,
    /// Keep only tables from these domains
    #[arg(long, value_delimiter = ',')]
    pub domains: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DownsampleArgs {
    #[arg(long, default_value_t = 10)]
    pub max_per_label: usize,
    /// Output directory [default: <workdir>/corpus-downsampled]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    ZeroShot,
    FewShot,
    SelfConsistency,
    WithDefs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DefsKindArg {
    Initial,
    Demonstration,
    Comparative,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long, value_enum, default_value_t = StrategyArg::ZeroShot)]
    pub strategy: StrategyArg,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Demonstrations per few-shot prompt
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Definition file [default: <workdir>/definitions/definitions-<kind>.jsonl]
    #[arg(long, value_name = "FILE")]
    pub defs: Option<PathBuf>,
    /// Definition kind for with-defs; self-consistency uses definitions when set
    #[arg(long, value_enum)]
    pub defs_kind: Option<DefsKindArg>,
    /// Keep only the most similar definitions per table
    #[arg(long, value_name = "N")]
    pub defs_topk: Option<usize>,
    /// Show the label hierarchy in the prompt
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub hierarchy: bool,
    /// Include the answer-format instructions
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = ArgAction::Set)]
    pub instructions: bool,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Temperatures for self-consistency voting
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 0.7])]
    pub temperatures: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DefgenKind {
    Initial,
    Demonstration,
    Comparative,
}

#[derive(Debug, Args)]
pub struct DefgenArgs {
    #[arg(long, value_enum)]
    pub kind: DefgenKind,
    /// Validation run whose errors drive comparative definitions
    #[arg(long, value_name = "RUN")]
    pub run: Option<String>,
    /// Sample columns per label
    #[arg(long, default_value_t = 3)]
    pub n_demos: usize,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long, default_value_t = 1)]
    pub rounds: u32,
    /// Starting definitions [default: <workdir>/definitions/definitions-demonstration.jsonl]
    #[arg(long, value_name = "FILE")]
    pub defs: Option<PathBuf>,
    /// Keep only the most similar definitions per validation table
    #[arg(long, value_name = "N")]
    pub defs_topk: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub n_demos: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Plain,
    DemoDefs,
    SelectedComparative,
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    #[arg(long, value_enum, default_value_t = ScenarioArg::Plain)]
    pub scenario: ScenarioArg,
    /// Run to review, by id or path
    #[arg(long, value_name = "RUN")]
    pub prior: String,
    /// Definition file [default: demonstration or comparative file in <workdir>/definitions]
    #[arg(long, value_name = "FILE")]
    pub defs: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run to score, by id or path
    #[arg(long, value_name = "RUN")]
    pub run: String,
    /// Second run; prints per-label error changes from --run to this one
    #[arg(long, value_name = "RUN")]
    pub diff: Option<String>,
    /// List labels with more missed columns than this
    #[arg(long, default_value_t = 5)]
    pub error_threshold: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Price sheet JSON [default: built-in gpt-4o list prices]
    #[arg(long, value_name = "FILE")]
    pub prices: Option<PathBuf>,
    /// Restrict to these runs [default: every run under <workdir>/runs]
    #[arg(long, value_name = "RUN", value_delimiter = ',')]
    pub run: Vec<String>,
    /// Column count at which option A stops being cheaper than option B
    #[arg(long)]
    pub breakeven: bool,
    /// Fixed cost of option A in dollars
    #[arg(long, default_value_t = 0.0)]
    pub fixed_a: f64,
    /// Per-column cost of option A in dollars
    #[arg(long)]
    pub per_column_a: Option<f64>,
    /// Fixed cost of option B in dollars, e.g. a fine-tuning job
    #[arg(long)]
    pub fixed_b: Option<f64>,
    /// Per-column cost of option B in dollars
    #[arg(long)]
    pub per_column_b: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SetArg {
    Simple,
    Definitions,
    Multitask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelClassArg {
    #[value(name = "open-8b")]
    Open8b,
    #[value(name = "open-70b")]
    Open70b,
    Hosted,
}

#[derive(Debug, Args)]
pub struct FtsetArgs {
    #[arg(long, value_enum)]
    pub set: SetArg,
    /// Show sample columns in definition-generation records
    #[arg(long)]
    pub with_demos: bool,
    #[arg(long, default_value_t = 3)]
    pub n_demos: usize,
    /// Definition file [default: <workdir>/definitions/definitions-demonstration.jsonl]
    #[arg(long, value_name = "FILE")]
    pub defs: Option<PathBuf>,
    /// Output file [default: <workdir>/ft/<set>.jsonl]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Also write a hyperparameter manifest next to the set
    #[arg(long, value_enum)]
    pub model_class: Option<ModelClassArg>,
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub instructions: bool,
    /// Shuffle records with this seed
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 10)]
    pub max_per_label: usize,
    #[arg(long, default_value_t = 1)]
    pub rounds: u32,
    #[arg(long, default_value_t = 10)]
    pub defs_topk: usize,
    #[arg(long, value_enum, default_value_t = ScenarioArg::SelectedComparative)]
    pub scenario: ScenarioArg,
    /// Price sheet JSON [default: built-in gpt-4o list prices]
    #[arg(long, value_name = "FILE")]
    pub prices: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match config::merge(&Cli::command(), std::env::args_os().collect()) {
        Ok(argv) => argv,
        Err(e) => e.exit(),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({
                "error": commands::error_kind(&e),
                "message": commands::error_message(&e),
            });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
