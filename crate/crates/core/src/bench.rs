//! End-to-end timing harness over synthetic corpora.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::community::{louvain, WeightedGraph};
use crate::embed::base_embed;
use crate::error::{Error, Result};
use crate::knn::{build_knn_graph, DEFAULT_K};
use crate::partition::Partition;
use crate::synth::PlantedGroups;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub size: usize,
    pub threads: usize,
    pub embed_ms: f64,
    pub knn_ms: f64,
    pub cluster_ms: f64,
    pub total_ms: f64,
    pub n_clusters: usize,
    pub partition_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub embed_dim: usize,
    pub knn_k: usize,
    pub n_groups: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            knn_k: DEFAULT_K,
            n_groups: 20,
            seed: 0,
        }
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs embed → k-NN graph → Louvain once per `(size, threads)` pair.
/// Partitions are deterministic; timings are not.
pub fn bench(sizes: &[usize], threads: &[usize], cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &size in sizes {
        if size < 2 {
            return Err(Error::Invalid(format!("bench size must be ≥ 2, got {size}")));
        }
        let corpus = PlantedGroups {
            n_docs: size,
            n_groups: cfg.n_groups,
            ..PlantedGroups::default()
        }
        .generate(cfg.seed);
        for &t in threads {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::State(e.to_string()))?;
            let row = pool.install(|| -> Result<BenchRow> {
                let start = Instant::now();
                let t0 = Instant::now();
                let m = base_embed(corpus.docs(), cfg.embed_dim, cfg.seed)?;
                let embed_ms = ms(t0);
                let t0 = Instant::now();
                let graph = build_knn_graph(&m, cfg.knn_k.min(size - 1))?;
                let knn_ms = ms(t0);
                let t0 = Instant::now();
                let p: Partition = louvain(&WeightedGraph::from_knn(&graph), cfg.seed)?;
                let cluster_ms = ms(t0);
                Ok(BenchRow {
                    size,
                    threads: t.max(1),
                    embed_ms,
                    knn_ms,
                    cluster_ms,
                    total_ms: ms(start),
                    n_clusters: p.n_clusters(),
                    partition_digest: p.digest(),
                })
            })?;
            rows.push(row);
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "size,threads,embed_ms,knn_ms,cluster_ms,total_ms";

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{:.3},{:.3},{:.3},{:.3}",
            r.size, r.threads, r.embed_ms, r.knn_ms, r.cluster_ms, r.total_ms
        )
        .unwrap();
    }
    out
}

/// knn_ms at `threads = b` over knn_ms at `threads = a` for `size`.
pub fn knn_ratio(rows: &[BenchRow], size: usize, a: usize, b: usize) -> Option<f64> {
    let find = |t| rows.iter().find(|r| r.size == size && r.threads == t);
    Some(find(b)?.knn_ms / find(a)?.knn_ms)
}
