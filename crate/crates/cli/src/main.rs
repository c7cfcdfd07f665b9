/// `println!` that exits quietly once stdout is closed, e.g. by `| head`.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if writeln!(std::io::stdout(), $($arg)*).is_err() {
            std::process::exit(0);
        }
    }};
}

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ragkit_core::embedding::EmbedError;
use ragkit_core::evaluation::ReportFormat;
use ragkit_core::generation::GenerationError;
use ragkit_core::retrieval::StrategyKind;

use config::Config;

#[derive(Parser)]
#[command(
    name = "ragkit",
    version,
    about = "Retrieval, generation and evaluation over technical documents"
)]
struct Cli {
    /// Configuration file (default: ./ragkit.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    /// Worker thread cap for parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment documents and a glossary into a corpus file.
    Ingest(IngestArgs),
    /// Embed every unit of a corpus and write the binary index.
    Index(IndexArgs),
    /// Retrieve for one query, optionally generating an answer.
    Query(QueryArgs),
    /// Pairwise similarity distributions by chunk length.
    DiagnoseChunks(DiagnoseArgs),
    /// Run a query set and write hypothesis reports.
    Eval(EvalArgs),
    /// Generate under every ordering of the retrieved contexts.
    PermuteTest(PermuteArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    /// Plain-text documents; the file stem becomes the document id.
    #[arg(long = "doc")]
    pub docs: Vec<PathBuf>,
    /// JSON-Lines glossary with `term` and `definition` fields.
    #[arg(long)]
    pub glossary: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub text: String,
    #[arg(long, default_value = "glossary-best")]
    pub strategy: StrategyKind,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Print the assembled system and user prompts.
    #[arg(long)]
    pub show_prompt: bool,
    /// Send the prompt to the configured chat provider.
    #[arg(long)]
    pub generate: bool,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Unit kinds to pair up.
    #[arg(long, value_delimiter = ',', default_value = "sentence")]
    pub kinds: Vec<ragkit_core::index::UnitKind>,
    #[arg(long)]
    pub threshold_words: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub valley_ratio: Option<f64>,
    /// CSV output; a JSON summary is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub queries: PathBuf,
    /// Strategies for the per-strategy metrics table.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Vec<StrategyKind>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value = "markdown")]
    pub report_format: ReportFormat,
    /// Report file (default: `<paths.reports>/report.<ext>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-query outcomes as JSON Lines.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    /// Also write generation records as JSON Lines.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Args)]
pub struct PermuteArgs {
    #[arg(long)]
    pub text: String,
    #[arg(long, default_value = "sentence-to-paragraph")]
    pub strategy: StrategyKind,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 120)]
    pub max_permutations: usize,
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
    #[arg(long)]
    pub index: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Index(_) => "index",
            Command::Query(_) => "query",
            Command::DiagnoseChunks(_) => "diagnose-chunks",
            Command::Eval(_) => "eval",
            Command::PermuteTest(_) => "permute-test",
        }
    }
}

/// Exit status 2 when a provider could not be reached, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let unreachable = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<EmbedError>(),
            Some(EmbedError::ProviderUnavailable { .. })
        ) || matches!(
            e.downcast_ref::<GenerationError>(),
            Some(GenerationError::ProviderUnavailable { .. })
        )
    });
    if unreachable {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();

    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("error[config]: {e}");
            return ExitCode::from(1);
        }
    }
    let config = match Config::load(cli.config.as_deref(), std::env::vars()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error[config]: {e:#}");
            return ExitCode::from(1);
        }
    };

    let ctx = commands::Context {
        config,
        json: cli.json,
    };
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Index(a) => commands::index(&ctx, a),
        Command::Query(a) => commands::query(&ctx, a),
        Command::DiagnoseChunks(a) => commands::diagnose(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::PermuteTest(a) => commands::permute(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{name}]: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
