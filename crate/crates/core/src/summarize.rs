//! Frequent-bigram summaries of clusters.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::partition::Partition;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BigramCount {
    pub bigram: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub size: usize,
    pub top_bigrams: Vec<BigramCount>,
}

/// Adjacent token pairs within each document, summed over documents, most
/// frequent first (ties lexicographic). Pairs touching a stopword are
/// skipped.
pub fn top_bigrams_filtered<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    n_top: usize,
    stopwords: Option<&BTreeSet<String>>,
) -> Vec<BigramCount> {
    let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
    for doc in docs {
        for pair in doc.tokens().windows(2) {
            let (a, b) = (pair[0].as_str(), pair[1].as_str());
            if let Some(stop) = stopwords {
                if stop.contains(a) || stop.contains(b) {
                    continue;
                }
            }
            *counts.entry((a, b)).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .map(|((a, b), c)| (format!("{a} {b}"), c))
        .collect();
    ranked.sort_unstable_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    ranked.truncate(n_top);
    ranked
        .into_iter()
        .map(|(bigram, count)| BigramCount { bigram, count })
        .collect()
}

pub fn top_bigrams<'a>(docs: impl IntoIterator<Item = &'a Document>, n_top: usize) -> Vec<BigramCount> {
    top_bigrams_filtered(docs, n_top, None)
}

/// Summaries of the `max_clusters` largest clusters (all when `None`),
/// largest first, ties by cluster id. `docs[i]` is node `i` of `p`.
pub fn summarize_partition(
    docs: &[&Document],
    p: &Partition,
    n_top: usize,
    max_clusters: Option<usize>,
    stopwords: Option<&BTreeSet<String>>,
) -> Vec<ClusterSummary> {
    let mut clusters: Vec<(usize, Vec<usize>)> = p.clusters().into_iter().enumerate().collect();
    clusters.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    clusters.truncate(max_clusters.unwrap_or(usize::MAX));
    clusters
        .par_iter()
        .map(|(id, members)| ClusterSummary {
            cluster_id: *id,
            size: members.len(),
            top_bigrams: top_bigrams_filtered(members.iter().map(|&i| docs[i]), n_top, stopwords),
        })
        .collect()
}
