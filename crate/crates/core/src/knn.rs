//! Exact k-nearest-neighbor search and k-NN graph construction.
//!
//! Distances are squared L2, computed as `‖x‖² + ‖y‖² − 2⟨x, y⟩` with the
//! norms precomputed. Queries are processed in blocks (in parallel), each
//! block scanning the corpus tile by tile. Every pairwise dot product is a
//! plain left-to-right sum over the coordinates, so results do not depend
//! on block sizes or the number of threads.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Default neighbor count for graph construction.
pub const DEFAULT_K: usize = 10;

/// Queries scored together against one corpus row.
const PANEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

/// Blocking parameters. They only affect speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blocking {
    /// Query rows per parallel work item.
    pub query_block: usize,
    /// Corpus rows scanned per tile.
    pub corpus_tile: usize,
}

impl Default for Blocking {
    fn default() -> Self {
        Self {
            query_block: 64,
            corpus_tile: 512,
        }
    }
}

/// Bounded list of the best `(dist2, index)` candidates, kept ascending.
struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, dist2: f64, index: usize) {
        if self.items.len() == self.k {
            let &(wd, wi) = self.items.last().unwrap();
            if dist2 > wd || (dist2 == wd && index > wi) {
                return;
            }
        }
        let pos = self
            .items
            .partition_point(|&(d, i)| d < dist2 || (d == dist2 && i < index));
        self.items.insert(pos, (dist2, index));
        self.items.truncate(self.k);
    }
}

fn sequential_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn scan_tile_impl(
    data: &[f64],
    norms: &[f64],
    d: usize,
    panel: &[f64],
    p0: usize,
    p1: usize,
    c0: usize,
    c1: usize,
    tops: &mut [TopK],
    q0: usize,
) {
    for c in c0..c1 {
        let row = &data[c * d..(c + 1) * d];
        let mut acc = [0.0f64; PANEL];
        for (&ct, lanes) in row.iter().zip(panel.chunks_exact(PANEL)) {
            let lanes: &[f64; PANEL] = lanes.try_into().unwrap();
            for l in 0..PANEL {
                acc[l] += lanes[l] * ct;
            }
        }
        for (lane, q) in (p0..p1).enumerate() {
            if q == c {
                continue;
            }
            let dist2 = (norms[q] + norms[c] - 2.0 * acc[lane]).max(0.0);
            tops[q - q0].offer(dist2, c);
        }
    }
}

// Wider vectors only, never FMA: every product and sum rounds exactly as in
// the portable path.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn scan_tile_avx2(
    data: &[f64],
    norms: &[f64],
    d: usize,
    panel: &[f64],
    p0: usize,
    p1: usize,
    c0: usize,
    c1: usize,
    tops: &mut [TopK],
    q0: usize,
) {
    scan_tile_impl(data, norms, d, panel, p0, p1, c0, c1, tops, q0)
}

#[allow(clippy::too_many_arguments)]
fn scan_tile(
    data: &[f64],
    norms: &[f64],
    d: usize,
    panel: &[f64],
    p0: usize,
    p1: usize,
    c0: usize,
    c1: usize,
    tops: &mut [TopK],
    q0: usize,
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        return unsafe { scan_tile_avx2(data, norms, d, panel, p0, p1, c0, c1, tops, q0) };
    }
    scan_tile_impl(data, norms, d, panel, p0, p1, c0, c1, tops, q0)
}

/// For each row, its `k` nearest other rows by squared L2 distance,
/// ascending, ties broken by smaller index.
pub fn knn_search(m: &EmbeddingMatrix, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    knn_search_blocked(m, k, Blocking::default())
}

pub fn knn_search_blocked(
    m: &EmbeddingMatrix,
    k: usize,
    blocking: Blocking,
) -> Result<Vec<Vec<Neighbor>>> {
    let n = m.n_rows();
    if k == 0 {
        return Err(Error::Invalid("k must be ≥ 1".into()));
    }
    if k >= n {
        return Err(Error::Invalid(format!("k must be < N (k={k}, N={n})")));
    }
    let d = m.n_cols();
    let data = m.to_f64();
    let norms: Vec<f64> = (0..n)
        .map(|i| {
            let r = &data[i * d..(i + 1) * d];
            sequential_dot(r, r)
        })
        .collect();
    let qb = blocking.query_block.max(1);
    let tile = blocking.corpus_tile.max(1);

    let starts: Vec<usize> = (0..n).step_by(qb).collect();
    let blocks: Vec<Vec<Vec<Neighbor>>> = starts
        .par_iter()
        .map(|&q0| {
            let q1 = (q0 + qb).min(n);
            let mut tops: Vec<TopK> = (q0..q1).map(|_| TopK::new(k)).collect();
            // Transposed panels of PANEL queries: panel[t * PANEL + lane].
            let panels: Vec<(usize, usize, Vec<f64>)> = (q0..q1)
                .step_by(PANEL)
                .map(|p0| {
                    let p1 = (p0 + PANEL).min(q1);
                    let mut panel = vec![0.0f64; d * PANEL];
                    for (lane, q) in (p0..p1).enumerate() {
                        for t in 0..d {
                            panel[t * PANEL + lane] = data[q * d + t];
                        }
                    }
                    (p0, p1, panel)
                })
                .collect();
            for c0 in (0..n).step_by(tile) {
                let c1 = (c0 + tile).min(n);
                for (p0, p1, panel) in &panels {
                    scan_tile(&data, &norms, d, panel, *p0, *p1, c0, c1, &mut tops, q0);
                }
            }
            tops.into_iter()
                .map(|t| {
                    t.items
                        .into_iter()
                        .map(|(dist2, index)| Neighbor { index, dist2 })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}

/// Union-symmetrized, unweighted k-NN graph.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub n_nodes: usize,
    /// `(i, j, weight)` with `i < j`, sorted, no duplicates.
    pub edges: Vec<(usize, usize, f64)>,
    pub k_used: usize,
}

impl KnnGraph {
    /// Builds the graph from per-row neighbor lists. An edge exists when
    /// either endpoint lists the other.
    pub fn from_neighbors(neighbors: &[Vec<Neighbor>], k_used: usize) -> Self {
        let mut pairs: Vec<(usize, usize)> = neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, list)| {
                list.iter()
                    .filter(move |nb| nb.index != i)
                    .map(move |nb| (i.min(nb.index), i.max(nb.index)))
            })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        Self {
            n_nodes: neighbors.len(),
            edges: pairs.into_iter().map(|(i, j)| (i, j, 1.0)).collect(),
            k_used,
        }
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(i, j, _) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Text dump, one `i j weight` line per edge.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for &(i, j, w) in &self.edges {
            writeln!(out, "{i} {j} {w}").unwrap();
        }
        out
    }
}

pub fn build_knn_graph(m: &EmbeddingMatrix, k: usize) -> Result<KnnGraph> {
    Ok(KnnGraph::from_neighbors(&knn_search(m, k)?, k))
}
