use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Louvain,
    Kmeans,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Louvain => "louvain",
            Method::Kmeans => "kmeans",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "louvain" => Ok(Method::Louvain),
            "kmeans" => Ok(Method::Kmeans),
            other => Err(Error::Format(format!("unknown method {other:?}"))),
        }
    }
}

/// Assignment of every node to a cluster id in `0..n_clusters`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub method: Method,
    /// Louvain levels, finest first; each maps every original node to its
    /// community at that level. Empty for k-means.
    pub levels: Vec<Vec<usize>>,
}

/// Renumbers ids densely in order of first appearance.
pub fn densify(ids: &[usize]) -> Vec<usize> {
    let mut map = HashMap::new();
    ids.iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

impl Partition {
    /// Builds a partition; ids are kept when already dense, otherwise
    /// renumbered by first appearance.
    pub fn new(assignment: Vec<usize>, method: Method) -> Self {
        let assignment = if is_dense(&assignment) {
            assignment
        } else {
            densify(&assignment)
        };
        Self {
            assignment,
            method,
            levels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.assignment.iter().max().map_or(0, |&m| m + 1)
    }

    /// Members of each cluster, ascending node order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters()];
        for (node, &c) in self.assignment.iter().enumerate() {
            out[c].push(node);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_clusters()];
        for &c in &self.assignment {
            out[c] += 1;
        }
        out
    }

    /// Hex SHA-256 over the method and the assignment.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.method.to_string().as_bytes());
        for &c in &self.assignment {
            h.update((c as u64).to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }

    /// Text dump: a `# method=<m> levels=<n>` header, then one
    /// `node_index cluster_id` line per node.
    pub fn to_text(&self) -> String {
        let mut out = format!("# method={} levels={}\n", self.method, self.levels.len());
        for (i, c) in self.assignment.iter().enumerate() {
            writeln!(out, "{i} {c}").unwrap();
        }
        out
    }

    /// Parses [`Partition::to_text`] output. Level assignments are not part of
    /// the dump, so `levels` comes back empty.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("empty partition file".into()))?;
        let method = header
            .strip_prefix("# ")
            .and_then(|h| h.split_whitespace().find_map(|kv| kv.strip_prefix("method=")))
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "missing `# method=` header".into(),
            })?
            .parse()?;
        let mut assignment = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: &str| Error::Parse {
                line: lineno + 1,
                message: message.to_string(),
            };
            let mut parts = line.split_whitespace();
            let node: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad node index"))?;
            let cluster: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad cluster id"))?;
            if node != assignment.len() {
                return Err(bad("node indices must be consecutive from 0"));
            }
            assignment.push(cluster);
        }
        if !is_dense(&assignment) {
            return Err(Error::Format("cluster ids are not dense".into()));
        }
        Ok(Self {
            assignment,
            method,
            levels: Vec::new(),
        })
    }
}

fn is_dense(ids: &[usize]) -> bool {
    let Some(&max) = ids.iter().max() else {
        return true;
    };
    if max >= ids.len() {
        return false;
    }
    let mut seen = vec![false; max + 1];
    for &c in ids {
        seen[c] = true;
    }
    seen.into_iter().all(|s| s)
}
