//! Document representations.
//!
//! The base representation mean-pools fixed pseudo-random unit vectors, one
//! per distinct token. On top of it an [`Adapter`] learns a linear
//! projection from the analyst's labeled documents: during training a
//! softmax classifier head sits on the projected vectors and both are
//! updated jointly under cross-entropy; afterwards the head is thrown away
//! and only the projection is kept.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_f32s, read_header, Corpus, Document, EmbeddingMatrix};
use crate::error::{Error, Result};

fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The fixed feature vector of `token`: entries are ±1/√dim with signs drawn
/// from a generator keyed on `(seed, token)`, so the vector has unit norm.
pub fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    let mut state = fnv1a64(seed, token.as_bytes());
    let mut out = Vec::with_capacity(dim);
    let mut bits = 0u64;
    for j in 0..dim {
        if j % 64 == 0 {
            bits = splitmix64(&mut state);
        }
        out.push(if bits & 1 == 1 { scale } else { -scale });
        bits >>= 1;
    }
    out
}

/// Mean-pooled hashed token vectors, one row per document. Documents without
/// tokens map to the zero row.
pub fn base_embed(docs: &[Document], dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if dim < 2 {
        return Err(Error::Invalid(format!("embedding dimension must be ≥ 2, got {dim}")));
    }
    if docs.is_empty() {
        return Err(Error::Invalid("cannot embed an empty document list".into()));
    }
    let vocab: BTreeSet<&str> = docs
        .iter()
        .flat_map(|d| d.tokens().iter().map(String::as_str))
        .collect();
    let table: HashMap<&str, Vec<f64>> = vocab
        .into_par_iter()
        .map(|t| (t, token_vector(t, dim, seed)))
        .collect();

    let rows: Vec<Vec<f32>> = docs
        .par_iter()
        .map(|doc| {
            let mut acc = vec![0.0f64; dim];
            for t in doc.tokens() {
                for (a, v) in acc.iter_mut().zip(&table[t.as_str()]) {
                    *a += v;
                }
            }
            let n = doc.tokens().len().max(1) as f64;
            acc.into_iter().map(|a| (a / n) as f32).collect()
        })
        .collect();
    let mut values = Vec::with_capacity(docs.len() * dim);
    for r in rows {
        values.extend(r);
    }
    EmbeddingMatrix::new(docs.len(), dim, values)
}

/// Hyper-parameters for adapter training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Output dimension of the projection; `None` keeps the input dimension.
    pub projection_dim: Option<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Minimum fraction of labeled documents before training is offered.
    pub labeled_fraction_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            projection_dim: None,
            learning_rate: 1.0,
            epochs: 300,
            batch_size: 16,
            seed: 0,
            labeled_fraction_threshold: 0.025,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be ≥ 1".into()));
        }
        if self.projection_dim == Some(0) {
            return Err(Error::Invalid("projection dimension must be ≥ 1".into()));
        }
        if !(self.labeled_fraction_threshold > 0.0 && self.labeled_fraction_threshold <= 1.0) {
            return Err(Error::Invalid(
                "labeled fraction threshold must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Trainable parameters: projection `w` (d_in × d_out) and the classifier
/// head `v` (d_out × classes) with bias `b`. All row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub d_in: usize,
    pub d_out: usize,
    pub n_classes: usize,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub b: Vec<f64>,
}

impl Params {
    /// Truncated identity plus uniform noise of scale 0.01/√d_in for the
    /// projection; zero head.
    pub fn init(d_in: usize, d_out: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.01 / (d_in as f64).sqrt();
        let mut w = vec![0.0; d_in * d_out];
        for i in 0..d_in {
            for j in 0..d_out {
                let eye = if i == j { 1.0 } else { 0.0 };
                w[i * d_out + j] = eye + scale * rng.random_range(-1.0..1.0);
            }
        }
        Self {
            d_in,
            d_out,
            n_classes,
            w,
            v: vec![0.0; d_out * n_classes],
            b: vec![0.0; n_classes],
        }
    }
}

/// Gradients with the same layout as [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub b: Vec<f64>,
}

/// Mean cross-entropy of the projection + softmax head over a fixed sample.
pub struct Objective<'a> {
    x: &'a [f64],
    y: &'a [usize],
    d_in: usize,
}

impl<'a> Objective<'a> {
    /// `x` is row-major with `y.len()` rows of `d_in` values.
    pub fn new(x: &'a [f64], y: &'a [usize], d_in: usize) -> Self {
        assert_eq!(x.len(), y.len() * d_in, "x/y shape mismatch");
        Self { x, y, d_in }
    }

    pub fn loss(&self, p: &Params) -> f64 {
        self.evaluate(p, None, false).0
    }

    pub fn loss_and_grad(&self, p: &Params) -> (f64, Grads) {
        let (loss, grads) = self.evaluate(p, None, true);
        (loss, grads.unwrap())
    }

    /// Loss (and optionally gradient) over the subset `rows` (all rows when
    /// `None`).
    fn evaluate(&self, p: &Params, rows: Option<&[usize]>, want_grad: bool) -> (f64, Option<Grads>) {
        let (d, dp, c) = (self.d_in, p.d_out, p.n_classes);
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..self.y.len()).collect();
                &all
            }
        };
        let inv_n = 1.0 / rows.len() as f64;
        let mut loss = 0.0;
        let mut grads = want_grad.then(|| Grads {
            w: vec![0.0; d * dp],
            v: vec![0.0; dp * c],
            b: vec![0.0; c],
        });
        let mut z = vec![0.0; dp];
        let mut logits = vec![0.0; c];
        let mut dz = vec![0.0; dp];
        for &r in rows {
            let x = &self.x[r * d..(r + 1) * d];
            z.iter_mut().for_each(|v| *v = 0.0);
            for (i, &xi) in x.iter().enumerate() {
                if xi != 0.0 {
                    for (zj, wij) in z.iter_mut().zip(&p.w[i * dp..(i + 1) * dp]) {
                        *zj += xi * wij;
                    }
                }
            }
            logits.copy_from_slice(&p.b);
            for (j, &zj) in z.iter().enumerate() {
                for (l, vjk) in logits.iter_mut().zip(&p.v[j * c..(j + 1) * c]) {
                    *l += zj * vjk;
                }
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let log_norm = max + sum.ln();
            let target = self.y[r];
            loss += (log_norm - logits[target]) * inv_n;

            if let Some(g) = grads.as_mut() {
                // dlogits = (softmax - onehot) / n, reuse `logits` for it
                for (k, l) in logits.iter_mut().enumerate() {
                    let prob = (*l - log_norm).exp();
                    *l = (prob - if k == target { 1.0 } else { 0.0 }) * inv_n;
                }
                for (gb, dl) in g.b.iter_mut().zip(&logits) {
                    *gb += dl;
                }
                for j in 0..dp {
                    let vrow = &p.v[j * c..(j + 1) * c];
                    let grow = &mut g.v[j * c..(j + 1) * c];
                    let mut acc = 0.0;
                    for k in 0..c {
                        grow[k] += z[j] * logits[k];
                        acc += logits[k] * vrow[k];
                    }
                    dz[j] = acc;
                }
                for (i, &xi) in x.iter().enumerate() {
                    if xi != 0.0 {
                        for (gw, dzj) in g.w[i * dp..(i + 1) * dp].iter_mut().zip(&dz) {
                            *gw += xi * dzj;
                        }
                    }
                }
            }
        }
        (loss, grads)
    }
}

/// A learned linear projection `d_in → d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    d_in: usize,
    d_out: usize,
    w: Vec<f32>,
    /// Number of labeled documents used for training.
    pub trained_on: usize,
    /// Mean cross-entropy per epoch.
    pub loss_history: Vec<f64>,
}

const ADAPTER_MAGIC: &[u8; 4] = b"ADP1";

impl Adapter {
    pub fn from_matrix(d_in: usize, d_out: usize, w: Vec<f32>) -> Result<Self> {
        if w.len() != d_in * d_out {
            return Err(Error::Shape(format!(
                "{} values for a {d_in}×{d_out} projection",
                w.len()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("projection contains non-finite values".into()));
        }
        Ok(Self {
            d_in,
            d_out,
            w,
            trained_on: 0,
            loss_history: Vec::new(),
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Self::from_matrix(dim, dim, w).unwrap()
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weights(&self) -> &[f32] {
        &self.w
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.w.len());
        out.extend_from_slice(ADAPTER_MAGIC);
        out.extend_from_slice(&(self.d_in as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_out as u32).to_le_bytes());
        for v in &self.w {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (d_in, d_out, body) = read_header(bytes, ADAPTER_MAGIC)?;
        Self::from_matrix(d_in, d_out, read_f32s(body, d_in * d_out)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Trains an adapter from `(row, class)` pairs.
///
/// Batches come from a seeded shuffle per epoch; each batch takes one plain
/// gradient step on projection and head together.
pub fn train_adapter_rows(
    m: &EmbeddingMatrix,
    samples: &[(usize, usize)],
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<Adapter> {
    cfg.validate()?;
    let distinct: BTreeSet<usize> = samples.iter().map(|&(_, c)| c).collect();
    if distinct.len() < 2 {
        return Err(Error::TooFewClasses(distinct.len()));
    }
    if let Some(&(_, c)) = samples.iter().find(|&&(_, c)| c >= n_classes) {
        return Err(Error::Invalid(format!("class {c} out of range for {n_classes} classes")));
    }
    if let Some(&(r, _)) = samples.iter().find(|&&(r, _)| r >= m.n_rows()) {
        return Err(Error::Invalid(format!("row {r} out of range for {} rows", m.n_rows())));
    }
    let d = m.n_cols();
    let d_out = cfg.projection_dim.unwrap_or(d);

    let mut x = Vec::with_capacity(samples.len() * d);
    for &(r, _) in samples {
        x.extend(m.row(r).iter().map(|&v| f64::from(v)));
    }
    let y: Vec<usize> = samples.iter().map(|&(_, c)| c).collect();
    let objective = Objective::new(&x, &y, d);

    let mut params = Params::init(d, d_out, n_classes, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, g) = objective.evaluate(&params, Some(batch), true);
            let g = g.unwrap();
            epoch_loss += loss * batch.len() as f64;
            let lr = cfg.learning_rate;
            for (p, gp) in params.w.iter_mut().zip(&g.w) {
                *p -= lr * gp;
            }
            for (p, gp) in params.v.iter_mut().zip(&g.v) {
                *p -= lr * gp;
            }
            for (p, gp) in params.b.iter_mut().zip(&g.b) {
                *p -= lr * gp;
            }
        }
        let mean = epoch_loss / samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::State(format!(
                "training diverged at epoch {} (loss {mean})",
                history.len() + 1
            )));
        }
        history.push(mean);
    }

    let w: Vec<f32> = params.w.iter().map(|&v| v as f32).collect();
    let mut adapter = Adapter::from_matrix(d, d_out, w)?;
    adapter.trained_on = samples.len();
    adapter.loss_history = history;
    Ok(adapter)
}

/// Trains an adapter from a map of document id → label. Classes are the
/// distinct labels in lexicographic order.
pub fn train_adapter(
    m: &EmbeddingMatrix,
    corpus: &Corpus,
    labels: &BTreeMap<String, String>,
    cfg: &TrainConfig,
) -> Result<Adapter> {
    let classes: BTreeSet<&str> = labels.values().map(String::as_str).collect();
    if classes.len() < 2 {
        return Err(Error::TooFewClasses(classes.len()));
    }
    let class_index: HashMap<&str, usize> =
        classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut samples = Vec::with_capacity(labels.len());
    for (id, label) in labels {
        let row = corpus
            .position(id)
            .filter(|&r| r < m.n_rows())
            .ok_or_else(|| Error::UnknownId(id.clone()))?;
        samples.push((row, class_index[label.as_str()]));
    }
    train_adapter_rows(m, &samples, classes.len(), cfg)
}

/// Projects every row: returns `m · W`.
pub fn apply_adapter(m: &EmbeddingMatrix, a: &Adapter) -> Result<EmbeddingMatrix> {
    if m.n_cols() != a.d_in {
        return Err(Error::Shape(format!(
            "embeddings are {}×{} but the adapter is {}×{}",
            m.n_rows(),
            m.n_cols(),
            a.d_in,
            a.d_out
        )));
    }
    let dp = a.d_out;
    let rows: Vec<Vec<f32>> = (0..m.n_rows())
        .into_par_iter()
        .map(|r| {
            let mut acc = vec![0.0f64; dp];
            for (i, &xi) in m.row(r).iter().enumerate() {
                let xi = f64::from(xi);
                for (o, &w) in acc.iter_mut().zip(&a.w[i * dp..(i + 1) * dp]) {
                    *o += xi * f64::from(w);
                }
            }
            acc.into_iter().map(|v| v as f32).collect()
        })
        .collect();
    let mut values = Vec::with_capacity(m.n_rows() * dp);
    for r in rows {
        values.extend(r);
    }
    EmbeddingMatrix::new(m.n_rows(), dp, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, text, None)
    }

    #[test]
    fn token_vectors_are_unit_and_deterministic() {
        let a = token_vector("world", 64, 7);
        let norm: f64 = a.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(a, token_vector("world", 64, 7));
        assert_ne!(a, token_vector("world", 64, 8));
        assert_ne!(a, token_vector("cup", 64, 7));
    }

    #[test]
    fn empty_document_is_zero_row() {
        let m = base_embed(&[doc("a", "!!"), doc("b", "x y")], 8, 1).unwrap();
        assert!(m.row(0).iter().all(|&v| v == 0.0));
        assert!(m.row(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn same_multiset_same_row() {
        let m = base_embed(&[doc("a", "b a c a"), doc("b", "a a c b")], 16, 3).unwrap();
        assert_eq!(m.row(0), m.row(1));
    }

    #[test]
    fn repeated_token_changes_mean() {
        let m = base_embed(&[doc("x", "a a b"), doc("y", "a b")], 16, 3).unwrap();
        let va = token_vector("a", 16, 3);
        let vb = token_vector("b", 16, 3);
        for j in 0..16 {
            let want0 = ((2.0 * va[j] + vb[j]) / 3.0) as f32;
            let want1 = ((va[j] + vb[j]) / 2.0) as f32;
            assert_eq!(m.row(0)[j], want0);
            assert_eq!(m.row(1)[j], want1);
        }
        assert_ne!(m.row(0), m.row(1));
    }

    #[test]
    fn base_embed_preconditions() {
        assert!(base_embed(&[doc("a", "x")], 1, 0).is_err());
        assert!(base_embed(&[], 8, 0).is_err());
    }

    #[test]
    fn zero_head_gives_log_c() {
        let x = vec![0.3, -0.2, 0.5, 0.1, 0.0, 0.9];
        let y = vec![0, 1, 2];
        let obj = Objective::new(&x, &y, 2);
        let p = Params::init(2, 2, 3, 5);
        assert!((obj.loss(&p) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn too_few_classes() {
        let m = EmbeddingMatrix::zeros(3, 2);
        let err = train_adapter_rows(&m, &[(0, 0), (1, 0)], 2, &TrainConfig::default());
        assert!(matches!(err, Err(Error::TooFewClasses(1))));
        assert!(err.unwrap_err().to_string().contains("need ≥2 labeled classes"));
    }

    #[test]
    fn unknown_labeled_id() {
        let corpus = Corpus::new(vec![doc("a", "x"), doc("b", "y")]).unwrap();
        let m = base_embed(corpus.docs(), 4, 0).unwrap();
        let labels: BTreeMap<String, String> = [("a", "p"), ("zz", "q")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        match train_adapter(&m, &corpus, &labels, &TrainConfig::default()) {
            Err(Error::UnknownId(id)) => assert_eq!(id, "zz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn separable_pair_trains_to_low_loss() {
        let m = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let cfg = TrainConfig {
            epochs: 2000,
            batch_size: 2,
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        let a = train_adapter_rows(&m, &[(0, 0), (1, 1)], 2, &cfg).unwrap();
        assert_eq!(a.loss_history.len(), 2000);
        assert!((a.loss_history[0] - 2f64.ln()).abs() < 1e-12);
        assert!(*a.loss_history.last().unwrap() < 0.01);
        assert_eq!(a.trained_on, 2);
    }

    #[test]
    fn training_is_deterministic() {
        let docs: Vec<Document> = (0..20)
            .map(|i| doc(&format!("d{i}"), &format!("w{} v{} common", i % 3, i % 5)))
            .collect();
        let m = base_embed(&docs, 16, 2).unwrap();
        let samples: Vec<(usize, usize)> = (0..20).map(|i| (i, i % 3)).collect();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train_adapter_rows(&m, &samples, 3, &cfg).unwrap();
        let b = train_adapter_rows(&m, &samples, 3, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn apply_identity_and_shape_error() {
        let m = EmbeddingMatrix::from_rows(&[vec![1.5, -2.0, 0.25], vec![0.0, 3.0, 1.0]]).unwrap();
        assert_eq!(apply_adapter(&m, &Adapter::identity(3)).unwrap(), m);
        let err = apply_adapter(&m, &Adapter::identity(2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2×3") && msg.contains("2×2"), "{msg}");
        let z = EmbeddingMatrix::zeros(4, 3);
        let a = Adapter::from_matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!(apply_adapter(&z, &a).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adapter_file_round_trip() {
        let a = Adapter::from_matrix(2, 3, vec![0.5, -1.0, 2.0, 1e-8, 3.25, -0.0]).unwrap();
        let back = Adapter::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back.weights(), a.weights());
        assert_eq!((back.d_in(), back.d_out()), (2, 3));
        assert!(Adapter::from_bytes(b"EMB1\0\0\0\0\0\0\0\0").is_err());
    }
}
