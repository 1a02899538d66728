//! k-means with k-means++ seeding and Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::partition::{Method, Partition};

/// Cluster count used when k-means is requested without an explicit k.
pub const DEFAULT_K: usize = 250;

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub partition: Partition,
    /// Row-major `k × D`.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the smaller index.
fn nearest(x: &[f64], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(d).enumerate() {
        let dd = dist2(x, centroid);
        if dd < best.1 {
            best = (c, dd);
        }
    }
    best
}

fn plus_plus_init(data: &[f64], n: usize, d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * d);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(&data[first * d..(first + 1) * d]);
    let mut closest: Vec<f64> = (0..n)
        .map(|i| dist2(&data[i * d..(i + 1) * d], &centroids[..d]))
        .collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in closest.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` just short of `target`
            pick.unwrap_or_else(|| closest.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every point coincides with a centroid: uniform among the rest
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let row = &data[pick * d..(pick + 1) * d];
        centroids.extend_from_slice(row);
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(dist2(&data[i * d..(i + 1) * d], row));
        }
    }
    centroids
}

/// Means of each cluster's members. Every cluster must be non-empty.
pub fn cluster_means(data: &[f64], d: usize, assignment: &[usize], k: usize) -> Vec<f64> {
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, x) in sums[c * d..(c + 1) * d].iter_mut().zip(&data[i * d..(i + 1) * d]) {
            *s += x;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        for s in &mut sums[c * d..(c + 1) * d] {
            *s /= count as f64;
        }
    }
    sums
}

fn inertia_of(data: &[f64], d: usize, assignment: &[usize], centroids: &[f64]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &c)| dist2(&data[i * d..(i + 1) * d], &centroids[c * d..(c + 1) * d]))
        .sum()
}

pub fn kmeans(m: &EmbeddingMatrix, k: usize, seed: u64, max_iter: usize) -> Result<KmeansResult> {
    let n = m.n_rows();
    let d = m.n_cols();
    if k == 0 {
        return Err(Error::Invalid("k must be ≥ 1".into()));
    }
    if k > n {
        return Err(Error::Invalid(format!("k={k} exceeds the number of points N={n}")));
    }
    if max_iter == 0 {
        return Err(Error::Invalid("max_iter must be ≥ 1".into()));
    }
    let data = m.to_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(&data, n, d, k, &mut rng);

    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let scored: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(&data[i * d..(i + 1) * d], &centroids, d))
            .collect();
        let mut next: Vec<usize> = scored.iter().map(|&(c, _)| c).collect();
        let mut cost: Vec<f64> = scored.iter().map(|&(_, dd)| dd).collect();

        // Re-seed empty clusters with the point farthest from its centroid.
        let mut counts = vec![0usize; k];
        for &c in &next {
            counts[c] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[next[i]] > 1)
                .max_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(b.cmp(&a)))
                .expect("k ≤ N leaves a cluster with a spare point");
            counts[next[far]] -= 1;
            counts[empty] = 1;
            next[far] = empty;
            cost[far] = 0.0;
            centroids[empty * d..(empty + 1) * d].copy_from_slice(&data[far * d..(far + 1) * d]);
        }

        history.push(cost.iter().sum());
        let converged = next == assignment;
        assignment = next;
        if converged {
            break;
        }
        centroids = cluster_means(&data, d, &assignment, k);
    }

    let centroids = cluster_means(&data, d, &assignment, k);
    let inertia = inertia_of(&data, d, &assignment, &centroids);
    Ok(KmeansResult {
        partition: Partition {
            assignment,
            method: Method::Kmeans,
            levels: Vec::new(),
        },
        centroids,
        inertia,
        iterations,
        inertia_history: history,
    })
}
