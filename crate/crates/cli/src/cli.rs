//! `egomem` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use egomem_core::habitgen::pairs_to_jsonl;
use egomem_core::profile::{ProfileParams, DEFAULT_MIN_FREQUENCY, DEFAULT_THETA_CLUSTER};
use egomem_core::retrieval::{render_context, IndexedStore};
use egomem_core::synthetic::{
    default_habits, evaluate_hit_at_k, generate_stream, render_csv, render_table, EvalQuery, EventRetriever, FlatRetriever,
    GraphRetriever, DEFAULT_HIT_K,
};
use egomem_core::MemoryStore;

use crate::app::{self, QueryRequest};
use crate::error::AppError;

const CONTEXT_BUDGET: usize = 4_000;

#[derive(Debug, Parser)]
#[command(name = "egomem", version, about = "Long-term interaction memory: ingest, query, profile, habit pairs, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Flat,
    Graph,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest event records (JSON lines) into a store file, creating it if needed.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Time-valid retrieval against a store.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        query: String,
        /// Query time, unix seconds. Only earlier events are visible.
        #[arg(long, allow_hyphen_values = true)]
        at: i64,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        hops: Option<usize>,
        /// Print the full result as JSON instead of the rendered context.
        #[arg(long)]
        json: bool,
    },
    /// Rebuild the habit profile stored alongside the graph.
    Profile {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_FREQUENCY)]
        min_freq: usize,
        #[arg(long, default_value_t = DEFAULT_THETA_CLUSTER)]
        theta: f64,
    },
    /// Write habit-learning pairs as JSON lines.
    Habitgen {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a seeded synthetic event stream and evaluation queries.
    Synth {
        #[arg(long, default_value_t = 7)]
        days: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        distractors: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        queries: Option<PathBuf>,
    },
    /// Hit@k of a retriever over evaluation queries.
    Eval {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HIT_K)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Baseline::Graph)]
        baseline: Baseline,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the HTTP API over every store in a directory.
    Serve {
        #[arg(long)]
        store_dir: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn read(path: &Path) -> Result<String, AppError> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => AppError::NotFound(format!("{} does not exist", path.display())),
        _ => AppError::io(path, e),
    })
}

fn write(path: &Path, text: &str) -> Result<(), AppError> {
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Run a parsed command, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), AppError> {
    let emit = |out: &mut dyn Write, text: &str| out.write_all(text.as_bytes()).map_err(|e| AppError::io("<stdout>", e));
    match cli.command {
        Command::Ingest { input, store } => {
            let records = app::parse_records(&read(&input)?)?;
            let user = app::batch_user(&records)?;
            let current = if store.exists() { app::load_store(&store)? } else { MemoryStore::new(user) };
            let providers = app::providers_for(Some(&current))?;
            let (next, report) = app::ingest(&current, records, &providers)?;
            next.save(&store)?;
            for w in &report.warnings {
                tracing::warn!("{w}");
            }
            emit(out, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))
        }
        Command::Query { store, query, at, k, hops, json } => {
            let store = app::load_store(&store)?;
            let providers = app::providers_for(Some(&store))?;
            let request = QueryRequest { user_id: store.user_id().to_string(), text: query, at_ts: at, k, hops };
            let indexed = IndexedStore::new(store)?;
            let result = app::query(&indexed, &request, &providers)?;
            if json {
                emit(out, &(result.to_json() + "\n"))
            } else {
                emit(out, &render_context(&result, CONTEXT_BUDGET))
            }
        }
        Command::Profile { store: path, min_freq, theta } => {
            let store = app::load_store(&path)?;
            let providers = app::providers_for(Some(&store))?;
            let (next, built) = app::rebuild_profile(&store, ProfileParams { theta_cluster: theta, f_min: min_freq }, &providers)?;
            next.save(&path)?;
            for w in &built.warnings {
                tracing::warn!("{w}");
            }
            let text = built.profile.render();
            emit(out, if text.is_empty() { "No recurring habits found.\n" } else { &text })
        }
        Command::Habitgen { store, out: dest } => {
            let store = app::load_store(&store)?;
            let providers = app::providers_for(Some(&store))?;
            let outcome = app::habit_pairs(&store, &providers)?;
            write(&dest, &pairs_to_jsonl(&outcome.pairs))?;
            for w in &outcome.warnings {
                tracing::warn!("{w}");
            }
            let verified = outcome.pairs.iter().filter(|p| p.verified).count();
            emit(
                out,
                &format!(
                    "pairs: {} ({} verified), chains: {}, skipped: {}\n",
                    outcome.pairs.len(),
                    verified,
                    outcome.chains_total,
                    outcome.chains_skipped
                ),
            )
        }
        Command::Synth { days, seed, distractors, out: dest, queries } => {
            let stream = generate_stream(&default_habits(), days, distractors, seed)?;
            write(&dest, &stream.records_jsonl())?;
            if let Some(q) = queries {
                write(&q, &(stream.queries_json() + "\n"))?;
            }
            emit(out, &format!("records: {}, queries: {}\n", stream.records.len(), stream.queries.len()))
        }
        Command::Eval { store, queries, k, baseline, csv } => {
            if k == 0 {
                return Err(AppError::Usage("--k must be at least 1".into()));
            }
            let store = app::load_store(&store)?;
            let providers = app::providers_for(Some(&store))?;
            let queries: Vec<EvalQuery> =
                serde_json::from_str(&read(&queries)?).map_err(|e| AppError::BadInput(format!("malformed queries file: {e}")))?;
            let indexed = IndexedStore::new(store)?;
            let embedder = providers.embedder.as_ref();
            let graph_r;
            let flat_r;
            let retriever: &dyn EventRetriever = match baseline {
                Baseline::Graph => {
                    graph_r = GraphRetriever::new(&indexed, embedder);
                    &graph_r
                }
                Baseline::Flat => {
                    flat_r = FlatRetriever::new(&indexed, embedder);
                    &flat_r
                }
            };
            let report = evaluate_hit_at_k(retriever, indexed.store().graph(), &queries, k, None)?;
            if let Some(path) = csv {
                write(&path, &render_csv(std::slice::from_ref(&report)))?;
            }
            emit(out, &render_table(&[report]))
        }
        Command::Serve { store_dir, port, host } => crate::server::serve_blocking(&store_dir, &host, port),
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = out.write_all(text.as_bytes());
                return 0;
            }
            let _ = err.write_all(text.as_bytes());
            return 1;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
