//! Modularity and Louvain community detection.
//!
//! Adjacency is stored as a symmetric matrix `A` in list form. A self-loop
//! contributes its weight twice to `A_ii`, so a node's strength is always the
//! plain row sum `k_i = Σ_j A_ij` and `2m = Σ_i k_i`. With this convention
//! the aggregated graph of a level has the same modularity for the
//! singleton partition as the original graph has for that level's
//! communities.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::knn::KnnGraph;
use crate::partition::{densify, Method, Partition};

/// Level improvements below this stop the multi-level loop.
pub const MIN_LEVEL_GAIN: f64 = 1e-7;

/// Moves must beat staying put by more than this.
const MOVE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
    strength: Vec<f64>,
    two_m: f64,
}

impl WeightedGraph {
    /// Undirected edges `(i, j, w)`; `(i, i, w)` is a self-loop of weight
    /// `w`. Repeated pairs are summed.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_nodes];
        for &(i, j, w) in edges {
            if i >= n_nodes || j >= n_nodes {
                return Err(Error::Invalid(format!(
                    "edge ({i}, {j}) out of range for {n_nodes} nodes"
                )));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Invalid(format!("edge ({i}, {j}) has weight {w}")));
            }
            if i == j {
                adj[i].push((i, 2.0 * w));
            } else {
                adj[i].push((j, w));
                adj[j].push((i, w));
            }
        }
        Ok(Self::from_adjacency(adj))
    }

    fn from_adjacency(mut adj: Vec<Vec<(usize, f64)>>) -> Self {
        for list in &mut adj {
            list.sort_by_key(|&(j, _)| j);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(list.len());
            for &(j, w) in list.iter() {
                match merged.last_mut() {
                    Some((lj, lw)) if *lj == j => *lw += w,
                    _ => merged.push((j, w)),
                }
            }
            *list = merged;
        }
        let strength: Vec<f64> = adj
            .iter()
            .map(|l| l.iter().map(|&(_, w)| w).sum())
            .collect();
        let two_m = strength.iter().sum();
        Self {
            adj,
            strength,
            two_m,
        }
    }

    pub fn from_knn(g: &KnnGraph) -> Self {
        Self::from_edges(g.n_nodes, &g.edges).expect("k-NN edges are in range")
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    /// `m`: half the sum of all adjacency entries.
    pub fn total_weight(&self) -> f64 {
        self.two_m / 2.0
    }

    pub fn strength(&self, i: usize) -> f64 {
        self.strength[i]
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    /// Collapses each community into one node; intra-community weight
    /// becomes a self-loop. `comm` must be dense.
    fn aggregate(&self, comm: &[usize], n_comms: usize) -> Self {
        let mut acc: Vec<std::collections::BTreeMap<usize, f64>> =
            vec![Default::default(); n_comms];
        for (i, list) in self.adj.iter().enumerate() {
            for &(j, w) in list {
                *acc[comm[i]].entry(comm[j]).or_insert(0.0) += w;
            }
        }
        let adj = acc.into_iter().map(|m| m.into_iter().collect()).collect();
        Self::from_adjacency(adj)
    }
}

/// `Q = (1/2m) Σ_ij [A_ij − k_i k_j / 2m] δ(c_i, c_j)`. Community ids need
/// not be dense.
pub fn modularity(g: &WeightedGraph, assignment: &[usize]) -> Result<f64> {
    if g.two_m <= 0.0 {
        return Err(Error::EmptyGraph);
    }
    if assignment.len() != g.n_nodes() {
        return Err(Error::Shape(format!(
            "assignment covers {} nodes, graph has {}",
            assignment.len(),
            g.n_nodes()
        )));
    }
    let ids = densify(assignment);
    let n_comms = ids.iter().max().map_or(0, |&m| m + 1);
    let mut inside = vec![0.0; n_comms];
    let mut total = vec![0.0; n_comms];
    for (i, list) in g.adj.iter().enumerate() {
        total[ids[i]] += g.strength[i];
        for &(j, w) in list {
            if ids[i] == ids[j] {
                inside[ids[i]] += w;
            }
        }
    }
    Ok(community_sum(&inside, &total, g.two_m))
}

fn community_sum(inside: &[f64], total: &[f64], two_m: f64) -> f64 {
    inside
        .iter()
        .zip(total)
        .map(|(&a, &t)| a / two_m - (t / two_m) * (t / two_m))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LouvainConfig {
    pub seed: u64,
    pub min_level_gain: f64,
    /// Recompute modularity from scratch after every accepted move and
    /// record it alongside the incrementally tracked value.
    pub audit: bool,
}

impl Default for LouvainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            min_level_gain: MIN_LEVEL_GAIN,
            audit: false,
        }
    }
}

/// One accepted local move, captured when auditing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveRecord {
    pub level: usize,
    pub node: usize,
    pub gain: f64,
    pub tracked: f64,
    pub recomputed: f64,
}

#[derive(Debug, Clone)]
pub struct LouvainRun {
    pub partition: Partition,
    /// Modularity of the input graph under each level's assignment.
    pub level_modularity: Vec<f64>,
    /// Modularity of the singleton partition, before any move.
    pub initial_modularity: f64,
    pub moves: Vec<MoveRecord>,
}

impl LouvainRun {
    pub fn modularity(&self) -> f64 {
        self.level_modularity
            .last()
            .copied()
            .unwrap_or(self.initial_modularity)
    }
}

pub fn louvain(g: &WeightedGraph, seed: u64) -> Result<Partition> {
    Ok(louvain_with(
        g,
        &LouvainConfig {
            seed,
            ..LouvainConfig::default()
        },
    )?
    .partition)
}

pub fn louvain_with(g: &WeightedGraph, cfg: &LouvainConfig) -> Result<LouvainRun> {
    let n = g.n_nodes();
    let initial_modularity = modularity(g, &(0..n).collect::<Vec<_>>())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut level_graph = g.clone();
    let mut original: Vec<usize> = (0..n).collect();
    let mut levels = Vec::new();
    let mut level_modularity = Vec::new();
    let mut moves = Vec::new();
    let mut q = initial_modularity;

    loop {
        let level = levels.len();
        let (comm, q_end, moved) =
            local_moves(&level_graph, q, &mut rng, cfg.audit.then_some((&mut moves, level)));
        if !moved {
            break;
        }
        let dense = densify(&comm);
        let n_comms = dense.iter().max().map_or(0, |&m| m + 1);
        for c in original.iter_mut() {
            *c = dense[*c];
        }
        levels.push(original.clone());
        level_modularity.push(q_end);
        let gain = q_end - q;
        q = q_end;
        if gain < cfg.min_level_gain || n_comms == level_graph.n_nodes() {
            break;
        }
        level_graph = level_graph.aggregate(&dense, n_comms);
    }

    let assignment = levels.last().cloned().unwrap_or_else(|| (0..n).collect());
    Ok(LouvainRun {
        partition: Partition {
            assignment,
            method: Method::Louvain,
            levels,
        },
        level_modularity,
        initial_modularity,
        moves,
    })
}

/// Phase one on a single level, starting from singletons with modularity
/// `q_start`. Returns the community of each node, the final modularity, and
/// whether anything moved.
fn local_moves(
    g: &WeightedGraph,
    q_start: f64,
    rng: &mut ChaCha8Rng,
    mut audit: Option<(&mut Vec<MoveRecord>, usize)>,
) -> (Vec<usize>, f64, bool) {
    let n = g.n_nodes();
    let m = g.two_m / 2.0;
    let mut comm: Vec<usize> = (0..n).collect();
    let mut total: Vec<f64> = g.strength.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    // Scratch: weight from the current node to each community.
    let mut link = vec![0.0f64; n];
    let mut seen = vec![false; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut q = q_start;
    let mut any_move = false;

    loop {
        let mut moved = false;
        for &i in &order {
            let own = comm[i];
            let k_i = g.strength[i];
            for &(j, w) in &g.adj[i] {
                if j != i {
                    let c = comm[j];
                    if !seen[c] {
                        seen[c] = true;
                        touched.push(c);
                    }
                    link[c] += w;
                }
            }
            total[own] -= k_i;
            let gain = |c: usize, link: &[f64]| link[c] / m - total[c] * k_i / (2.0 * m * m);
            let stay = gain(own, &link);
            let mut best = own;
            let mut best_gain = stay;
            touched.sort_unstable();
            for &c in &touched {
                let gc = gain(c, &link);
                if gc > best_gain || (gc == best_gain && c < best) {
                    best = c;
                    best_gain = gc;
                }
            }
            let delta = best_gain - stay;
            if best != own && delta > MOVE_EPS {
                comm[i] = best;
                total[best] += k_i;
                q += delta;
                moved = true;
                if let Some((records, level)) = audit.as_mut() {
                    let recomputed = modularity(g, &comm).expect("graph has edges");
                    records.push(MoveRecord {
                        level: *level,
                        node: i,
                        gain: delta,
                        tracked: q,
                        recomputed,
                    });
                }
            } else {
                total[own] += k_i;
            }
            for &c in &touched {
                link[c] = 0.0;
                seen[c] = false;
            }
            touched.clear();
        }
        if !moved {
            break;
        }
        any_move = true;
    }
    (comm, q, any_move)
}
