use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use escalation_core::dataset::DatasetMode;
use escalation_core::eval::harness::DEFAULT_SWEEP;
use escalation_core::eval::Corpus;
use escalation_service::commands::{self, CommandError, SyntheticKind};
use escalation_service::config::{ConfigLayer, EngineConfig, ProviderLayer};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "escalate", version, about = "Online support-ticket escalation engine")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Settings that override the environment and the config file.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Similarity above which a pending ticket links to an escalation.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    listen: Option<String>,
    /// Chat-completion endpoint URL, or "mock".
    #[arg(long, global = true)]
    chat_endpoint: Option<String>,
    #[arg(long, global = true)]
    chat_model: Option<String>,
    /// Embedding endpoint URL, or "mock".
    #[arg(long, global = true)]
    embedding_endpoint: Option<String>,
    #[arg(long, global = true)]
    embedding_model: Option<String>,
    #[arg(long, global = true)]
    embedding_dim: Option<usize>,
    #[arg(long, global = true)]
    max_messages: Option<usize>,
    #[arg(long, global = true)]
    webhook_url: Option<String>,
    #[arg(long, global = true)]
    link_base_url: Option<String>,
    /// Disable group-issue rewriting after links.
    #[arg(long, global = true)]
    no_rewrite: bool,
    #[arg(long, global = true)]
    snapshot_every: Option<u64>,
}

impl ConfigArgs {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            threshold: self.threshold,
            data_dir: self.data_dir.clone(),
            listen: self.listen.clone(),
            chat: ProviderLayer {
                endpoint: self.chat_endpoint.clone(),
                model: self.chat_model.clone(),
                ..ProviderLayer::default()
            },
            embedding: ProviderLayer {
                endpoint: self.embedding_endpoint.clone(),
                model: self.embedding_model.clone(),
                ..ProviderLayer::default()
            },
            embedding_dim: self.embedding_dim,
            max_messages: self.max_messages,
            webhook_url: self.webhook_url.clone(),
            link_base_url: self.link_base_url.clone(),
            rewrite: self.no_rewrite.then_some(false),
            snapshot_every: self.snapshot_every,
            ..ConfigLayer::default()
        }
    }
}

/// Where a corpus comes from: an event log or a built-in generator.
#[derive(Debug, Args)]
struct CorpusArgs {
    /// Event log (JSON lines, same schema as POST /events).
    #[arg(long, conflicts_with = "synthetic")]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    synthetic: Option<SyntheticKind>,
    #[arg(long)]
    seed: Option<u64>,
}

impl CorpusArgs {
    fn load(&self, cfg: &EngineConfig) -> Result<Corpus, CommandError> {
        match (&self.corpus, self.synthetic) {
            (Some(p), _) => commands::read_corpus(p),
            (None, kind) => {
                commands::synthetic_corpus(kind.unwrap_or(SyntheticKind::Geometry), self.seed, cfg.embedding_dim)
            }
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP/SSE service.
    Serve,
    /// Fold an event log into a fresh engine and print its counters.
    Replay {
        log: PathBuf,
        /// Write the final state as JSON.
        #[arg(long)]
        state_out: Option<PathBuf>,
    },
    /// Grouping F1 across a threshold grid, as CSV.
    Sweep {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = DEFAULT_SWEEP.0)]
        lo: f64,
        #[arg(long, default_value_t = DEFAULT_SWEEP.1)]
        hi: f64,
        #[arg(long, default_value_t = DEFAULT_SWEEP.2)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a fine-tuning dataset from the data directory's feedback.
    BuildDataset {
        #[arg(long, value_parser = clap::value_parser!(DatasetMode))]
        mode: DatasetMode,
        #[arg(long, default_value_t = escalation_core::dataset::StrategyConfig::DEFAULT_REVISIONS)]
        revisions: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Escalation and grouping quality on a labeled corpus, as JSON.
    Eval {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Compare grouping with and without rewriting instead (CSV).
        #[arg(long)]
        ablation: bool,
    },
    /// Write a synthetic corpus as an event log.
    Generate {
        #[arg(long, value_enum, default_value = "general")]
        synthetic: SyntheticKind,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CommandError> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn json(value: &impl serde::Serialize) -> Result<String, CommandError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let cfg = EngineConfig::load(
        cli.config.config.as_deref(),
        |k| std::env::var(k).ok(),
        cli.config.layer(),
    )?;
    match cli.command {
        Command::Serve => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(cfg.listen).await?;
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                commands::serve(cfg, listener, shutdown).await
            })?;
        }
        Command::Replay { log, state_out } => {
            let summary = commands::run_replay(&cfg, &log, state_out.as_deref())?;
            emit(&json(&summary)?, None)?;
        }
        Command::Sweep {
            corpus,
            lo,
            hi,
            step,
            out,
        } => {
            let csv = commands::run_sweep(&cfg, &corpus.load(&cfg)?, lo, hi, step)?;
            emit(&csv, out.as_deref())?;
        }
        Command::BuildDataset { mode, revisions, out } => {
            let n = commands::run_build_dataset(&cfg, mode, revisions, &out)?;
            eprintln!("wrote {n} samples to {}", out.display());
        }
        Command::Eval { corpus, ablation } => {
            let corpus = corpus.load(&cfg)?;
            let text = if ablation {
                commands::run_ablation(&cfg, &corpus)?
            } else {
                json(&commands::run_eval(&cfg, &corpus)?)?
            };
            emit(&text, None)?;
        }
        Command::Generate { synthetic, seed, out } => {
            let corpus = commands::synthetic_corpus(synthetic, seed, cfg.embedding_dim)?;
            commands::write_corpus(&corpus, &out)?;
            eprintln!("wrote {} events to {}", corpus.events.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
