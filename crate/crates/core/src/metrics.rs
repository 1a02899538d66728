//! External cluster-quality metrics: purity and NMI.

use std::collections::BTreeMap;
use std::fmt::Display;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predicted-cluster × true-class counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency<T> {
    pub classes: Vec<T>,
    /// `table[cluster][class]`
    pub table: Vec<Vec<usize>>,
    pub n: usize,
}

impl<T: Ord + Clone> Contingency<T> {
    /// `truth[i]` is the reference class of node `i`; every node needs one.
    pub fn build(pred: &[usize], truth: &[Option<T>]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions but {} reference labels",
                pred.len(),
                truth.len()
            )));
        }
        let mut class_ids: BTreeMap<&T, usize> = BTreeMap::new();
        for (i, t) in truth.iter().enumerate() {
            let t = t.as_ref().ok_or(Error::MissingTruth(i))?;
            class_ids.entry(t).or_insert(0);
        }
        for (idx, v) in class_ids.values_mut().enumerate() {
            *v = idx;
        }
        let n_clusters = pred.iter().max().map_or(0, |&m| m + 1);
        let mut table = vec![vec![0usize; class_ids.len()]; n_clusters];
        for (&p, t) in pred.iter().zip(truth) {
            table[p][class_ids[t.as_ref().unwrap()]] += 1;
        }
        // drop cluster ids that never occur
        table.retain(|row| row.iter().any(|&c| c > 0));
        Ok(Self {
            classes: class_ids.into_keys().cloned().collect(),
            table,
            n: pred.len(),
        })
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.table.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.classes.len()];
        for row in &self.table {
            for (o, &c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    pub fn purity(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let majority: usize = self
            .table
            .iter()
            .map(|r| r.iter().copied().max().unwrap_or(0))
            .sum();
        majority as f64 / self.n as f64
    }

    /// Mutual information over arithmetic-mean entropy, natural log.
    pub fn nmi(&self) -> f64 {
        let n = self.n as f64;
        let entropy = |sizes: &[usize]| -> f64 {
            sizes
                .iter()
                .filter(|&&s| s > 0)
                .map(|&s| {
                    let p = s as f64 / n;
                    -p * p.ln()
                })
                .sum()
        };
        let rows = self.cluster_sizes();
        let cols = self.class_sizes();
        let h_pred = entropy(&rows);
        let h_true = entropy(&cols);
        if h_pred == 0.0 && h_true == 0.0 {
            return 1.0;
        }
        if h_pred == 0.0 || h_true == 0.0 {
            return 0.0;
        }
        let mut mi = 0.0;
        for (r, row) in self.table.iter().enumerate() {
            for (c, &count) in row.iter().enumerate() {
                if count > 0 {
                    let nkj = count as f64;
                    mi += nkj / n * (n * nkj / (rows[r] as f64 * cols[c] as f64)).ln();
                }
            }
        }
        (mi / ((h_pred + h_true) / 2.0)).clamp(0.0, 1.0)
    }
}

pub fn purity<T: Ord + Clone>(pred: &[usize], truth: &[Option<T>]) -> Result<f64> {
    Ok(Contingency::build(pred, truth)?.purity())
}

pub fn nmi<T: Ord + Clone>(pred: &[usize], truth: &[Option<T>]) -> Result<f64> {
    Ok(Contingency::build(pred, truth)?.nmi())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub purity: f64,
    pub nmi: f64,
    pub n_pred_clusters: usize,
    pub n_true_classes: usize,
    /// Class names, in the column order of `contingency`.
    pub classes: Vec<String>,
    pub contingency: Vec<Vec<usize>>,
}

pub fn evaluate<T: Ord + Clone + Display>(pred: &[usize], truth: &[Option<T>]) -> Result<EvalReport> {
    let table = Contingency::build(pred, truth)?;
    Ok(EvalReport {
        purity: table.purity(),
        nmi: table.nmi(),
        n_pred_clusters: table.table.len(),
        n_true_classes: table.classes.len(),
        classes: table.classes.iter().map(ToString::to_string).collect(),
        contingency: table.table,
    })
}
