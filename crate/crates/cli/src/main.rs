//! `comt`: builds CoMT training data and scores reports with MediHall.
//!
//! Summaries go to stdout as JSON, logs to stderr. Exit codes: 0 success,
//! 1 validation failure, 2 usage error.

mod commands;
mod config;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use comt_core::inject::{InjectionRates, JudgeMode};

use crate::config::{Overrides, RunConfig};

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "comt", version, about = "CoMT dataset construction and MediHall scoring")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config file
    #[arg(long, global = true, env = "COMT_CONFIG")]
    config: Option<PathBuf>,
    /// Record store directory
    #[arg(long, global = true, env = "COMT_STORE")]
    store: Option<PathBuf>,
    /// Maximum concurrent backend calls
    #[arg(long, global = true, env = "COMT_IN_FLIGHT")]
    in_flight: Option<usize>,
    #[arg(long, global = true, env = "COMT_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load raw reports into the store
    Ingest(IngestArgs),
    /// Split stored reports into the six dimensions
    Decompose(DecomposeArgs),
    /// Build chained QA pairs and optionally emit training files
    Chain(ChainArgs),
    /// Write an augmented copy of a raw corpus
    Augment(AugmentArgs),
    /// ROUGE, METEOR and BERTScore of candidates against references
    Evaluate(EvaluateArgs),
    /// Judge candidate reports sentence by sentence and score them
    Medihall(MedihallArgs),
    /// Write hallucinated candidates with a ground-truth ledger
    Inject(InjectArgs),
    /// Check the scoring pipeline against injected ground truth
    Validate(ValidateArgs),
    /// Clinician evaluation score from tallies
    Humanscore(HumanscoreArgs),
    /// Run the review service
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Line-delimited raw reports
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Source tag stamped on every report
    #[arg(long, default_value = "")]
    pub source: String,
    /// Generate this many synthetic reports instead of reading a file
    #[arg(long)]
    pub synthetic: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BackendChoice {
    Rule,
    Remote,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long, value_enum, default_value = "rule")]
    pub backend: BackendChoice,
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    /// Chain records that have not finished both review rounds
    #[arg(long)]
    pub allow_unverified: bool,
    /// Leave "not mentioned" answers out of preludes
    #[arg(long)]
    pub no_sentinels: bool,
    /// Write `<split>.jsonl` training files here
    #[arg(long)]
    pub emit_dir: Option<PathBuf>,
    /// chained, flat-qa or original-report
    #[arg(long, default_value = "chained")]
    pub mode: String,
    /// Comma separated dimensions to emit
    #[arg(long, value_delimiter = ',')]
    pub dimensions: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// rephrase, eda_insert, eda_swap or eda_delete
    #[arg(long)]
    pub mode: String,
    /// Fraction of tokens affected (EDA modes)
    #[arg(long, default_value_t = comt_core::augment::DEFAULT_RATE)]
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BertChoice {
    /// Use the `embedding` section of the config file if present
    Auto,
    None,
    /// Seeded hashed embeddings; reproducible, not semantic
    Hashed,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub bertscore: BertChoice,
    /// Per-report scores as JSON lines
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MedihallArgs {
    /// Candidate reports (`report_id`, `text`); references come from the
    /// store. Without it the existing run is rescored.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    pub run_id: String,
    /// Per-sentence judgments as JSON lines
    #[arg(long)]
    pub export: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Raw reports to corrupt; defaults to the store's raw reports
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// e.g. cat=0.2,crit=0.1,attr=0.1
    #[arg(long)]
    pub rates: InjectionRates,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeChoice {
    Concordant,
    Discordant,
}

impl From<ModeChoice> for JudgeMode {
    fn from(m: ModeChoice) -> Self {
        match m {
            ModeChoice::Concordant => JudgeMode::Concordant,
            ModeChoice::Discordant => JudgeMode::Discordant,
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value = "cat=0.2,crit=0.1,attr=0.1")]
    pub rates: InjectionRates,
    /// Raw reports to use; defaults to a synthetic corpus
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Size of the synthetic corpus
    #[arg(long, default_value_t = 200)]
    pub reports: usize,
    #[arg(long, value_enum, default_value = "concordant")]
    pub mode: ModeChoice,
    /// Also sweep the catastrophic rate over 0, 0.25, 0.5, 0.75, 1
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Debug, Args)]
pub struct HumanscoreArgs {
    /// Tallies as JSON lines (clinician_id, num_faith, num_com, num_flu, num_data)
    #[arg(long, required_unless_present = "tally")]
    pub input: Option<PathBuf>,
    /// clinician,faith,com,flu,data; repeatable
    #[arg(long)]
    pub tally: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// TOML file with `reviewers = [...]`; overrides the config file list
    #[arg(long)]
    pub reviewers: Option<PathBuf>,
    /// Built review UI to serve at `/`
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let overrides = Overrides {
        config: cli.global.config,
        store: cli.global.store,
        in_flight: cli.global.in_flight,
        seed: cli.global.seed,
    };
    let result = RunConfig::resolve(overrides).and_then(|cfg| commands::dispatch(&cfg, cli.command));
    match result {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("summary serializes"));
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}\n\nRun `comt --help` for usage.");
            ExitCode::from(2)
        }
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}
