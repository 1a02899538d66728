mod common;

use proptest::prelude::*;
use textclust::knn::{build_knn_graph, knn_search, knn_search_blocked, Blocking, KnnGraph};
use textclust::synth::{gaussian_blobs, uniform_matrix};
use textclust::EmbeddingMatrix;

fn rows_of(m: &EmbeddingMatrix) -> Vec<Vec<f32>> {
    m.rows().map(<[f32]>::to_vec).collect()
}

#[test]
fn random_200_by_8_matches_naive() {
    let m = uniform_matrix(200, 8, 17);
    let got: Vec<Vec<usize>> = knn_search(&m, 10)
        .unwrap()
        .into_iter()
        .map(|l| l.into_iter().map(|n| n.index).collect())
        .collect();
    assert_eq!(got, common::naive_knn(&rows_of(&m), 10));
}

#[test]
fn independent_of_blocking_and_threads() {
    let m = uniform_matrix(300, 12, 5);
    let reference = knn_search(&m, 7).unwrap();
    for blocking in [
        Blocking { query_block: 1, corpus_tile: 1 },
        Blocking { query_block: 7, corpus_tile: 33 },
        Blocking { query_block: 1000, corpus_tile: 1000 },
    ] {
        assert_eq!(knn_search_blocked(&m, 7, blocking).unwrap(), reference);
    }
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        assert_eq!(pool.install(|| knn_search(&m, 7).unwrap()), reference);
    }
}

#[test]
fn separated_blobs_have_no_crossing_edges() {
    let centers = vec![vec![0.0f32; 4], vec![50.0f32; 4]];
    let (m, labels) = gaussian_blobs(&centers, 10, 1.0, 3);
    // distance oracle: every point's 3 nearest are in its own blob
    for (i, nn) in common::naive_knn(&rows_of(&m), 3).iter().enumerate() {
        assert!(nn.iter().all(|&j| labels[j] == labels[i]));
    }
    let g = build_knn_graph(&m, 3).unwrap();
    assert!(g.edges.iter().all(|&(i, j, _)| labels[i] == labels[j]));
}

fn check_graph_invariants(g: &KnnGraph, neighbors: &[Vec<usize>]) {
    let k = g.k_used;
    for w in g.edges.windows(2) {
        assert!((w[0].0, w[0].1) < (w[1].0, w[1].1), "sorted, no duplicates");
    }
    for &(i, j, w) in &g.edges {
        assert!(i < j);
        assert_eq!(w, 1.0);
        assert!(neighbors[i].contains(&j) || neighbors[j].contains(&i));
    }
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            let e = (i.min(j), i.max(j));
            assert!(g.edges.binary_search_by(|x| (x.0, x.1).cmp(&e)).is_ok());
        }
    }
    let degrees = g.degrees();
    assert!(degrees.iter().all(|&d| d >= 1));
    // at most k new edges per node, so the mean degree is at most 2k
    assert!(g.edges.len() <= g.n_nodes * k);
    assert!(degrees.iter().sum::<usize>() <= 2 * k * g.n_nodes);
}

#[test]
fn hub_degree_is_not_bounded_by_k() {
    // every point on the circle has the center as its unique nearest neighbor
    let mut rows = vec![vec![0.0f32, 0.0]];
    for t in 0..5 {
        let a = t as f32 * std::f32::consts::TAU / 5.0;
        rows.push(vec![a.cos(), a.sin()]);
    }
    let g = build_knn_graph(&EmbeddingMatrix::from_rows(&rows).unwrap(), 1).unwrap();
    assert_eq!(g.degrees()[0], 5);
    assert_eq!(g.edges.len(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn exact_against_naive(n in 2usize..120, d in 1usize..16, seed in any::<u64>(), kf in 0.0f64..1.0) {
        let k = 1 + ((n - 2) as f64 * kf) as usize;
        let m = uniform_matrix(n, d, seed);
        let naive = common::naive_knn(&rows_of(&m), k);
        let got: Vec<Vec<usize>> = knn_search(&m, k).unwrap()
            .into_iter()
            .map(|l| l.into_iter().map(|n| n.index).collect())
            .collect();
        prop_assert_eq!(&got, &naive);
        let g = build_knn_graph(&m, k).unwrap();
        check_graph_invariants(&g, &naive);
    }

    #[test]
    fn graph_symmetric_under_relabeling(n in 3usize..60, seed in any::<u64>()) {
        let m = uniform_matrix(n, 3, seed);
        let g = build_knn_graph(&m, 2).unwrap();
        let perm: Vec<usize> = (0..n).rev().collect();
        let permuted = m.select_rows(&perm);
        let h = build_knn_graph(&permuted, 2).unwrap();
        let mut mapped: Vec<(usize, usize)> = h.edges.iter()
            .map(|&(i, j, _)| (perm[i].min(perm[j]), perm[i].max(perm[j])))
            .collect();
        mapped.sort_unstable();
        let orig: Vec<(usize, usize)> = g.edges.iter().map(|&(i, j, _)| (i, j)).collect();
        prop_assert_eq!(mapped, orig);
    }
}
