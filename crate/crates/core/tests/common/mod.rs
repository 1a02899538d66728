//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the code paths it checks.

#![allow(dead_code)]

use std::collections::HashMap;

/// All set partitions of `0..n` as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        let blocks = cur.iter().max().map_or(0, |&m| m + 1);
        for c in 0..=blocks {
            cur.push(c);
            rec(n, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Modularity straight from the definition on a dense adjacency matrix
/// (self-loop weight counted twice on the diagonal).
pub fn dense_modularity(n: usize, edges: &[(usize, usize, f64)], comm: &[usize]) -> f64 {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j, w) in edges {
        if i == j {
            a[i][i] += 2.0 * w;
        } else {
            a[i][j] += w;
            a[j][i] += w;
        }
    }
    let k: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if comm[i] == comm[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Best modularity over every partition of the nodes.
pub fn brute_force_optimum(n: usize, edges: &[(usize, usize, f64)]) -> (f64, Vec<usize>) {
    set_partitions(n)
        .into_iter()
        .map(|p| (dense_modularity(n, edges, &p), p))
        .fold((f64::NEG_INFINITY, vec![]), |best, cur| if cur.0 > best.0 { cur } else { best })
}

/// k nearest neighbors by full sort of directly computed squared distances.
pub fn naive_knn(rows: &[Vec<f32>], k: usize) -> Vec<Vec<usize>> {
    rows.iter()
        .enumerate()
        .map(|(i, x)| {
            let mut d: Vec<(f64, usize)> = rows
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, y)| {
                    let dist: f64 = x
                        .iter()
                        .zip(y)
                        .map(|(&a, &b)| {
                            let t = f64::from(a) - f64::from(b);
                            t * t
                        })
                        .sum();
                    (dist, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Purity and arithmetic-mean NMI from a hash-map contingency table.
pub fn oracle_purity_nmi(pred: &[usize], truth: &[usize]) -> (f64, f64) {
    let n = pred.len() as f64;
    let mut cells: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *cells.entry((p, t)).or_default() += 1.0;
        *rows.entry(p).or_default() += 1.0;
        *cols.entry(t).or_default() += 1.0;
    }
    let mut best: HashMap<usize, f64> = HashMap::new();
    for (&(p, _), &c) in &cells {
        let e = best.entry(p).or_default();
        if c > *e {
            *e = c;
        }
    }
    let purity = best.values().sum::<f64>() / n;
    let h = |m: &HashMap<usize, f64>| -> f64 { m.values().map(|&c| -(c / n) * (c / n).ln()).sum() };
    let (hp, ht) = (h(&rows), h(&cols));
    let nmi = if rows.len() == 1 && cols.len() == 1 {
        1.0
    } else if rows.len() == 1 || cols.len() == 1 {
        0.0
    } else {
        let mi: f64 = cells
            .iter()
            .map(|(&(p, t), &c)| (c / n) * ((n * c) / (rows[&p] * cols[&t])).ln())
            .sum();
        mi / ((hp + ht) / 2.0)
    };
    (purity, nmi)
}

/// Fraction of nodes in the majority generator label of their cluster.
pub fn purity_vs(pred: &[usize], truth: &[usize]) -> f64 {
    oracle_purity_nmi(pred, truth).0
}

/// Tiny deterministic generator (xorshift64*), independent of `rand`.
pub struct XorShift(pub u64);

impl XorShift {
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_f491_4f6c_dd1d)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Random undirected simple graph with at least one edge.
pub fn random_graph(n: usize, p: f64, rng: &mut XorShift) -> Vec<(usize, usize, f64)> {
    loop {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.unit() < p {
                    edges.push((i, j, 1.0));
                }
            }
        }
        if !edges.is_empty() {
            return edges;
        }
    }
}

/// Matrix product of row-major `a` (r×k) and `b` (k×c) by the textbook
/// triple loop.
pub fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            for t in 0..k {
                out[i * c + j] += a[i * k + t] * b[t * c + j];
            }
        }
    }
    out
}
