use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use corpusforge::commands::{self, AskArgs, CliError};
use corpusforge::AppConfig;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "corpusforge", version, about = "Harvest, index and query a document corpus")]
struct Cli {
    /// Configuration file.
    #[arg(long, global = true, default_value_os_t = commands::default_config_path())]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Crawl the configured domain into the corpus.
    Harvest,
    /// Chunk and embed the corpus into the search index.
    Index,
    /// Run the HTTP service.
    Serve {
        /// Overrides `serve.listen`.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Ask a question through the service or in-process.
    Ask {
        question: String,
        /// Answer in-process instead of calling a running service.
        #[arg(long)]
        local: bool,
        /// Service base URL; defaults to `serve.listen`.
        #[arg(long)]
        url: Option<String>,
        /// Bearer token selecting the session tier.
        #[arg(long)]
        token: Option<String>,
        /// Number of chunks to retrieve.
        #[arg(long)]
        k: Option<usize>,
        /// Backend for the infer stage.
        #[arg(long)]
        backend: Option<String>,
        /// Print one row per stage.
        #[arg(long)]
        trace: bool,
    },
    /// Measure generation throughput.
    Bench {
        /// Backend to measure; repeatable. Defaults to all.
        #[arg(long)]
        backend: Vec<String>,
        /// File with one prompt per line.
        #[arg(long)]
        prompts: PathBuf,
        /// Repetitions of the prompt set.
        #[arg(short = 'n', default_value_t = 5)]
        n: usize,
    },
    /// Add a local directory of exported files to the corpus.
    Ingest { dir: PathBuf },
    /// Print corpus and last-crawl statistics.
    Stats,
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let config = AppConfig::load(&cli.config)?;
    let mut out = std::io::stdout();
    match cli.command {
        Command::Harvest => commands::harvest(&config, &mut out).await.map(drop),
        Command::Index => commands::index(&config, &mut out).await.map(drop),
        Command::Serve { listen } => commands::serve(&config, listen.as_deref(), &mut out).await,
        Command::Ask {
            question,
            local,
            url,
            token,
            k,
            backend,
            trace,
        } => {
            let args = AskArgs {
                question,
                local,
                url,
                token,
                k,
                backend,
                trace,
            };
            commands::ask(&config, &args, &mut out).await.map(drop)
        }
        Command::Bench { backend, prompts, n } => commands::bench(&config, &backend, &prompts, n, &mut out).await,
        Command::Ingest { dir } => commands::ingest(&config, &dir, &mut out).await,
        Command::Stats => commands::stats(&config, &mut out),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn,corpusforge=info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
