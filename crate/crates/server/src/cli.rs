use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use textclust::bench::{bench, knn_ratio, to_csv, BenchConfig};
use textclust::embed::{apply_adapter, base_embed, Adapter};
use textclust::metrics::evaluate;
use textclust::service::{cluster_embeddings, ClusterJobRequest, ClusterMode, DEFAULT_EMBED_DIM, DEFAULT_TOP_BIGRAMS};
use textclust::summarize::summarize_partition;
use textclust::{Corpus, Document, EmbeddingMatrix, Error, Partition};

/// Adaptive text clustering: embed, cluster, summarize and evaluate corpora,
/// or serve the labeling API.
#[derive(Debug, Parser)]
#[command(name = "textclust", version)]
pub struct Cli {
    /// Seed for embeddings, clustering and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Auto,
    FixedK,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed a JSONL corpus into an EMB1 file.
    Embed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EMBED_DIM)]
        dim: usize,
        /// Apply a trained adapter (ADP1) to the base embeddings.
        #[arg(long)]
        adapter: Option<PathBuf>,
    },
    /// Cluster an embedding file and write the partition.
    Cluster {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Auto)]
        mode: Mode,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 10)]
        knn_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a partition against the corpus labels; prints JSON.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        partition: PathBuf,
    },
    /// Print the top bigrams of the largest clusters as JSON.
    Summarize {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_BIGRAMS)]
        top: usize,
        #[arg(long)]
        max: Option<usize>,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Time the pipeline on synthetic corpora; prints CSV.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [1000, 10000, 50000])]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 4])]
        threads: Vec<usize>,
        /// Also write the CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs the parsed command. Validation failures exit with code 2, other
/// failures with 1.
pub fn run(cli: Cli) -> ExitCode {
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .downcast_ref::<Error>()
                .is_some_and(|e| !matches!(e, Error::Io(_)));
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_pair(corpus: &Path, partition: &Path) -> anyhow::Result<(Corpus, Partition)> {
    let corpus = Corpus::parse(&read(corpus)?)?;
    let partition = Partition::from_text(&read(partition)?)?;
    if partition.len() != corpus.len() {
        return Err(Error::Shape(format!(
            "partition has {} entries but the corpus has {} documents",
            partition.len(),
            corpus.len()
        ))
        .into());
    }
    Ok((corpus, partition))
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Embed { corpus, out, dim, adapter } => {
            let corpus = Corpus::parse(&read(&corpus)?)?;
            let mut m = base_embed(corpus.docs(), dim, cli.seed)?;
            if let Some(path) = adapter {
                m = apply_adapter(&m, &Adapter::load(&path)?)?;
            }
            m.save(&out)?;
            eprintln!("wrote {}×{} embeddings to {}", m.n_rows(), m.n_cols(), out.display());
        }
        Command::Cluster { embeddings, mode, k, knn_k, out } => {
            let m = EmbeddingMatrix::load(&embeddings)?;
            let req = ClusterJobRequest {
                mode: match mode {
                    Mode::Auto => ClusterMode::Auto,
                    Mode::FixedK => ClusterMode::FixedK,
                },
                k,
                knn_k,
                seed: cli.seed,
                scope: None,
            };
            req.validate()?;
            let (p, timings) = cluster_embeddings(&m, &req)?;
            fs::write(&out, p.to_text()).with_context(|| format!("writing {}", out.display()))?;
            print_json(&serde_json::json!({
                "n_clusters": p.n_clusters(),
                "partition_digest": p.digest(),
                "timings": timings,
            }))?;
        }
        Command::Eval { corpus, partition } => {
            let (corpus, p) = load_pair(&corpus, &partition)?;
            let truth: Vec<Option<String>> = corpus.docs().iter().map(|d| d.label.clone()).collect();
            print_json(&evaluate(&p.assignment, &truth)?)?;
        }
        Command::Summarize { corpus, partition, top, max } => {
            let (corpus, p) = load_pair(&corpus, &partition)?;
            let docs: Vec<&Document> = corpus.docs().iter().collect();
            print_json(&summarize_partition(&docs, &p, top, max, None))?;
        }
        Command::Serve { port, host } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                axum::serve(listener, crate::api::router()).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Bench { sizes, threads, out } => {
            let cfg = BenchConfig { seed: cli.seed, ..BenchConfig::default() };
            let rows = bench(&sizes, &threads, &cfg)?;
            let csv = to_csv(&rows);
            print!("{csv}");
            if let Some(path) = out {
                fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
            }
            if let (Some(&lo), Some(&hi)) = (threads.iter().min(), threads.iter().max()) {
                for &size in &sizes {
                    if let Some(r) = knn_ratio(&rows, size, lo, hi) {
                        eprintln!("size {size}: knn_ms(threads={hi}) / knn_ms(threads={lo}) = {r:.3}");
                    }
                }
            }
        }
    }
    Ok(())
}
