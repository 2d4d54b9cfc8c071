//! `t2p` subcommands. Each one works from a `ServiceConfig`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use t2p_core::analytics::{listen_through, tag_frequencies, DEFAULT_WINDOW_DAYS};
use t2p_core::llm::UsageLedger;
use t2p_core::synth::{synthetic_catalog, synthetic_embeddings};
use t2p_core::{Facet, GenerateOptions, Snapshot, TagTaxonomy};
use thiserror::Error;

use crate::app::{build_pipeline, initial_snapshot, load_taxonomy, serve, AppState, StartupError};
use crate::config::{ConfigError, ServiceConfig};
use crate::store::{Store, StoreError, StoreOptions};

#[derive(Debug, Parser)]
#[command(name = "t2p", about = "Turn a sentence into a playlist", version)]
pub struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API.
    Serve,
    /// Catalog index utilities.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Generate one playlist locally and print it as JSON.
    Query(QueryArgs),
    /// Offline reports over the playlist store.
    Report {
        #[command(subcommand)]
        report: ReportKind,
    },
    /// Write a synthetic catalog and embeddings file.
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
pub enum IndexAction {
    /// Load the catalog and embeddings, build the index and print statistics.
    Build,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub user: String,
    /// Extraction strategy: rule, llm or replay.
    #[arg(long)]
    pub backend: Option<String>,
    /// Refinement strategy: deterministic or llm.
    #[arg(long)]
    pub refiner: Option<String>,
    #[arg(long)]
    pub length: Option<usize>,
    /// Print the full pipeline trace instead of the playlist.
    #[arg(long)]
    pub trace: bool,
    pub text: String,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum ReportKind {
    /// Share of playlists with a `listened` event inside the window.
    Engagement {
        #[arg(long, default_value_t = DEFAULT_WINDOW_DAYS)]
        window: u32,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Tag frequencies across generation records.
    Tags {
        #[arg(long)]
        facet: Option<Facet>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    pub tracks: usize,
    #[arg(long, default_value_t = 100)]
    pub users: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output directory; receives catalog.jsonl and embeddings.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Startup(#[from] StartupError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] t2p_core::PipelineError),
    #[error("analytics: {0}")]
    Analytics(#[from] t2p_core::analytics::AnalyticsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn load_config(path: Option<&Path>) -> Result<ServiceConfig, ConfigError> {
    match path {
        Some(p) => ServiceConfig::load(p),
        None => Ok(ServiceConfig::default()),
    }
}

/// Runs a subcommand and returns what it would print.
pub async fn run(cli: Cli) -> Result<String, CommandError> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Serve => {
            let state = AppState::from_config(config)?;
            serve(state).await?;
            Ok(String::new())
        }
        Command::Index { action: IndexAction::Build } => {
            let taxonomy = load_taxonomy(&config)?;
            let snapshot = initial_snapshot(&config, &taxonomy)?;
            Ok(index_stats(&snapshot))
        }
        Command::Query(args) => query(&config, args).await,
        Command::Report { report } => {
            let store = Store::open(&config.paths.store_dir, StoreOptions::default())?;
            Ok(match report {
                ReportKind::Engagement { window, format } => {
                    let r = listen_through(&store.records(), &store.events(), window)?;
                    match format {
                        Format::Table => r.to_table(),
                        Format::Csv => r.to_csv(),
                    }
                }
                ReportKind::Tags { facet, format } => {
                    let r = tag_frequencies(&store.records());
                    match format {
                        Format::Table => r.to_table(facet),
                        Format::Csv => r.to_csv(facet),
                    }
                }
            })
        }
        Command::Synth(args) => synth(&config, &args),
    }
}

pub fn index_stats(snapshot: &Snapshot) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "snapshot   {}", snapshot.id);
    let _ = writeln!(out, "tracks     {}", snapshot.catalog.len());
    let _ = writeln!(out, "tags       {}", snapshot.index.tag_count());
    let _ = writeln!(
        out,
        "embeddings {} users, {} tracks, dim {}",
        snapshot.embeddings.user_count(),
        snapshot.embeddings.track_count(),
        snapshot.embeddings.dimension()
    );
    for (tag, n) in snapshot.index.stats() {
        let _ = writeln!(out, "  {tag:<28} {n}");
    }
    out
}

async fn query(config: &ServiceConfig, args: QueryArgs) -> Result<String, CommandError> {
    let taxonomy = load_taxonomy(config)?;
    let snapshot = initial_snapshot(config, &taxonomy)?;
    let ledger = Arc::new(UsageLedger::new());
    let pipeline = build_pipeline(config, &taxonomy, &ledger)?;
    let options = GenerateOptions {
        length: args.length,
        extraction_backend: args.backend,
        refinement_backend: args.refiner,
    };
    let out = pipeline.generate(&snapshot, &args.user, &args.text, &options).await?;
    let text = if args.trace {
        serde_json::to_string_pretty(&out.trace)?
    } else {
        serde_json::to_string_pretty(&out.playlist)?
    };
    Ok(text + "\n")
}

fn synth(config: &ServiceConfig, args: &SynthArgs) -> Result<String, CommandError> {
    let taxonomy: TagTaxonomy = load_taxonomy(config)?;
    let catalog = synthetic_catalog(args.tracks, args.seed, taxonomy);
    let embeddings = synthetic_embeddings(&catalog, args.users, args.dim, args.seed);
    std::fs::create_dir_all(&args.out)?;
    let cat_path = args.out.join("catalog.jsonl");
    let emb_path = args.out.join("embeddings.txt");
    std::fs::write(&cat_path, catalog.to_jsonl())?;
    std::fs::write(&emb_path, embeddings.to_text())?;
    Ok(format!(
        "wrote {} tracks to {}\nwrote {} users x dim {} to {}\n",
        catalog.len(),
        cat_path.display(),
        args.users,
        args.dim,
        emb_path.display()
    ))
}
