//! Synthetic corpora and point clouds with planted structure, used by the
//! bench harness, the tests, and demos.
//!
//! Words are alphanumeric so they survive tokenization unchanged, e.g.
//! `g3w17` is word 17 of group 3.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Corpus, Document, EmbeddingMatrix};

/// Documents drawn from planted vocabulary groups.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedGroups {
    pub n_docs: usize,
    pub n_groups: usize,
    pub vocab_per_group: usize,
    /// Words shared by every group.
    pub background_vocab: usize,
    pub doc_len: usize,
    /// Probability that a token comes from the document's own group.
    pub group_prob: f64,
}

impl Default for PlantedGroups {
    fn default() -> Self {
        Self {
            n_docs: 1400,
            n_groups: 20,
            vocab_per_group: 30,
            background_vocab: 200,
            doc_len: 30,
            group_prob: 0.6,
        }
    }
}

impl PlantedGroups {
    /// Documents are assigned to groups round-robin; reference labels are
    /// `group<g>`.
    pub fn generate(&self, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs = (0..self.n_docs)
            .map(|i| {
                let g = i % self.n_groups;
                let words: Vec<String> = (0..self.doc_len)
                    .map(|_| {
                        if rng.random_bool(self.group_prob) {
                            format!("g{g}w{}", rng.random_range(0..self.vocab_per_group))
                        } else {
                            format!("bg{}", rng.random_range(0..self.background_vocab))
                        }
                    })
                    .collect();
                Document::new(format!("d{i}"), words.join(" "), Some(format!("group{g}")))
            })
            .collect();
        Corpus::new(docs).expect("generated ids are unique")
    }
}

/// Two-level hierarchy: every document belongs to a super group and one of
/// its sub groups. Reference labels name the sub group (`s<a>_<b>`).
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedHierarchy {
    pub n_docs: usize,
    pub n_super: usize,
    pub n_sub: usize,
    pub vocab: usize,
    /// Tokens drawn from the super group's vocabulary.
    pub super_tokens: usize,
    /// Tokens drawn from the sub group's vocabulary.
    pub sub_tokens: usize,
}

impl Default for PlantedHierarchy {
    fn default() -> Self {
        Self {
            n_docs: 400,
            n_super: 2,
            n_sub: 2,
            vocab: 10,
            super_tokens: 12,
            sub_tokens: 12,
        }
    }
}

impl PlantedHierarchy {
    pub fn generate(&self, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs = (0..self.n_docs)
            .map(|i| {
                let leaf = i % (self.n_super * self.n_sub);
                let (a, b) = (leaf / self.n_sub, leaf % self.n_sub);
                let mut words: Vec<String> = (0..self.super_tokens)
                    .map(|_| format!("sup{a}w{}", rng.random_range(0..self.vocab)))
                    .collect();
                for _ in 0..self.sub_tokens {
                    words.push(format!("sub{a}x{b}w{}", rng.random_range(0..self.vocab)));
                }
                shuffle(&mut words, &mut rng);
                Document::new(format!("d{i}"), words.join(" "), Some(format!("s{a}_{b}")))
            })
            .collect();
        Corpus::new(docs).expect("generated ids are unique")
    }
}

/// Documents mixing a dominant topic vocabulary with a weaker intent
/// vocabulary. Topic and intent are drawn independently, so grouping by
/// topic carries no information about intent.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentTopicMix {
    pub n_docs: usize,
    pub n_topics: usize,
    pub n_intents: usize,
    pub vocab: usize,
    pub topic_tokens: usize,
    pub intent_tokens: usize,
}

impl Default for IntentTopicMix {
    fn default() -> Self {
        Self {
            n_docs: 2000,
            n_topics: 4,
            n_intents: 4,
            vocab: 12,
            topic_tokens: 12,
            intent_tokens: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntentTopicCorpus {
    /// Reference labels are the intents (`intent<i>`).
    pub corpus: Corpus,
    pub topics: Vec<String>,
    pub intents: Vec<String>,
}

impl IntentTopicMix {
    pub fn generate(&self, seed: u64) -> IntentTopicCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut topics = Vec::with_capacity(self.n_docs);
        let mut intents = Vec::with_capacity(self.n_docs);
        let docs = (0..self.n_docs)
            .map(|i| {
                let t = rng.random_range(0..self.n_topics);
                let k = rng.random_range(0..self.n_intents);
                let mut words: Vec<String> = (0..self.topic_tokens)
                    .map(|_| format!("topic{t}w{}", rng.random_range(0..self.vocab)))
                    .collect();
                for _ in 0..self.intent_tokens {
                    words.push(format!("intent{k}w{}", rng.random_range(0..self.vocab)));
                }
                shuffle(&mut words, &mut rng);
                topics.push(format!("topic{t}"));
                intents.push(format!("intent{k}"));
                Document::new(format!("d{i}"), words.join(" "), Some(format!("intent{k}")))
            })
            .collect();
        IntentTopicCorpus {
            corpus: Corpus::new(docs).expect("generated ids are unique"),
            topics,
            intents,
        }
    }
}

fn shuffle<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}

/// Isotropic Gaussian blobs around `centers`, `per_blob` points each, in
/// blob order. Returns the points and each point's blob index.
pub fn gaussian_blobs(
    centers: &[Vec<f32>],
    per_blob: usize,
    std_dev: f32,
    seed: u64,
) -> (EmbeddingMatrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, std_dev).expect("valid std dev");
    let mut rows = Vec::with_capacity(centers.len() * per_blob);
    let mut labels = Vec::with_capacity(centers.len() * per_blob);
    for (b, c) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            rows.push(c.iter().map(|&x| x + normal.sample(&mut rng)).collect());
            labels.push(b);
        }
    }
    (EmbeddingMatrix::from_rows(&rows).expect("finite rows"), labels)
}

/// Uniform random matrix in `[-1, 1)`.
pub fn uniform_matrix(n_rows: usize, n_cols: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n_rows * n_cols)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    EmbeddingMatrix::new(n_rows, n_cols, values).expect("finite values")
}
