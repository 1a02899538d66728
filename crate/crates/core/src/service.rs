//! Project state and the analyst loop: cluster, inspect, label, adapt,
//! re-cluster.
//!
//! A [`Project`] owns the corpus, its base embeddings, the optional adapter
//! with the adapted embeddings it produces, the analyst's label store, the
//! latest partition with its sub-cluster children, and the job history.
//! Clustering jobs go through three steps so that a caller can run the
//! expensive middle step without holding a lock on the project:
//! [`Project::submit_job`], [`Project::prepare_job`] + [`JobInput::run`],
//! and [`Project::finish_job`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::community::{louvain, WeightedGraph};
use crate::corpus::{Corpus, Document, EmbeddingMatrix};
use crate::embed::{apply_adapter, base_embed, train_adapter, Adapter, TrainConfig};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, DEFAULT_MAX_ITER};
use crate::knn::{build_knn_graph, DEFAULT_K};
use crate::metrics::{evaluate, EvalReport};
use crate::partition::Partition;
use crate::summarize::{summarize_partition, ClusterSummary};

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_TOP_BIGRAMS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    pub embed_dim: usize,
    pub embed_seed: u64,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            embed_dim: DEFAULT_EMBED_DIM,
            embed_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// k-NN graph + Louvain; the cluster count is discovered.
    Auto,
    /// k-means with a caller-chosen k.
    FixedK,
}

fn default_knn_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterJobRequest {
    pub mode: ClusterMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default)]
    pub seed: u64,
    /// Restrict the job to these document ids; all documents when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<Vec<String>>,
}

impl ClusterJobRequest {
    pub fn auto() -> Self {
        Self {
            mode: ClusterMode::Auto,
            k: None,
            knn_k: DEFAULT_K,
            seed: 0,
            scope: None,
        }
    }

    pub fn fixed_k(k: usize) -> Self {
        Self {
            mode: ClusterMode::FixedK,
            k: Some(k),
            ..Self::auto()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_knn_k(mut self, knn_k: usize) -> Self {
        self.knn_k = knn_k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, self.k) {
            (ClusterMode::FixedK, None) => Err(Error::Invalid("fixed_k mode requires k".into())),
            (ClusterMode::FixedK, Some(0)) => Err(Error::Invalid("k must be ≥ 1".into())),
            (ClusterMode::Auto, Some(_)) => {
                Err(Error::Invalid("k is only accepted in fixed_k mode".into()))
            }
            _ if self.knn_k == 0 => Err(Error::Invalid("knn_k must be ≥ 1".into())),
            _ => Ok(()),
        }
    }
}

/// Wall time per phase, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub embed_ms: f64,
    pub knn_ms: f64,
    pub cluster_ms: f64,
    pub total_ms: f64,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Clusters the rows of `m` as requested. Returns the partition together with
/// the k-NN and clustering phase times (embed time is left at zero).
pub fn cluster_embeddings(m: &EmbeddingMatrix, req: &ClusterJobRequest) -> Result<(Partition, Timings)> {
    req.validate()?;
    let n = m.n_rows();
    if n < 2 {
        return Err(Error::Invalid(format!("need at least 2 documents to cluster, got {n}")));
    }
    let mut timings = Timings::default();
    let partition = match req.mode {
        ClusterMode::Auto => {
            // a scope smaller than knn_k + 1 still gets a connected graph
            let knn_k = req.knn_k.min(n - 1);
            let t = Instant::now();
            let graph = build_knn_graph(m, knn_k)?;
            timings.knn_ms = ms_since(t);
            let t = Instant::now();
            let p = louvain(&WeightedGraph::from_knn(&graph), req.seed)?;
            timings.cluster_ms = ms_since(t);
            p
        }
        ClusterMode::FixedK => {
            let k = req.k.expect("validated");
            if k > n {
                return Err(Error::Invalid(format!("k={k} exceeds the scope size {n}")));
            }
            let t = Instant::now();
            let r = kmeans(m, k, req.seed, DEFAULT_MAX_ITER)?;
            timings.cluster_ms = ms_since(t);
            r.partition
        }
    };
    timings.total_ms = timings.knn_ms + timings.cluster_ms;
    Ok((partition, timings))
}

/// A finished clustering over a set of documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    /// Corpus positions of the clustered documents; node `i` of the
    /// partition is document `doc_indices[i]`.
    pub doc_indices: Vec<usize>,
    pub partition: Partition,
    pub summaries: Vec<ClusterSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
    pub timings: Timings,
}

impl ClusterOutcome {
    pub fn n_clusters(&self) -> usize {
        self.partition.n_clusters()
    }

    /// Corpus positions of the members of `cluster_id`.
    pub fn members(&self, cluster_id: usize) -> Option<Vec<usize>> {
        if cluster_id >= self.n_clusters() {
            return None;
        }
        Some(
            self.partition
                .assignment
                .iter()
                .zip(&self.doc_indices)
                .filter(|(&c, _)| c == cluster_id)
                .map(|(_, &d)| d)
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: u64,
    pub request: ClusterJobRequest,
    /// Set for sub-clustering jobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_cluster: Option<usize>,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timings: Timings,
    /// Digest of the embeddings the job read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_clusters: Option<usize>,
}

/// Everything a job needs, detached from the project.
#[derive(Debug, Clone)]
pub struct JobInput {
    pub job_id: u64,
    pub request: ClusterJobRequest,
    pub parent_cluster: Option<usize>,
    corpus: Arc<Corpus>,
    embeddings: Arc<EmbeddingMatrix>,
    doc_indices: Vec<usize>,
    top_bigrams: usize,
}

impl JobInput {
    pub fn run(&self) -> Result<ClusterOutcome> {
        let started = Instant::now();
        let t = Instant::now();
        let m = if self.doc_indices.len() == self.embeddings.n_rows() {
            None
        } else {
            Some(self.embeddings.select_rows(&self.doc_indices))
        };
        let m = m.as_ref().unwrap_or(&self.embeddings);
        let embed_ms = ms_since(t);
        let (partition, mut timings) = cluster_embeddings(m, &self.request)?;
        timings.embed_ms = embed_ms;

        let docs: Vec<&Document> = self.doc_indices.iter().map(|&i| &self.corpus.docs()[i]).collect();
        let summaries = summarize_partition(&docs, &partition, self.top_bigrams, None, None);
        let truth: Vec<Option<&str>> = docs.iter().map(|d| d.label.as_deref()).collect();
        let eval = if truth.iter().all(Option::is_some) {
            Some(evaluate(&partition.assignment, &truth)?)
        } else {
            None
        };
        timings.total_ms = ms_since(started);
        Ok(ClusterOutcome {
            doc_indices: self.doc_indices.clone(),
            partition,
            summaries,
            eval,
            timings,
        })
    }
}

/// Analyst labels keyed by document id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStore {
    pub revision: u64,
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterStats {
    pub trained_on: usize,
    pub n_classes: usize,
    pub labeled_fraction: f64,
    pub epochs: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone)]
pub struct Project {
    pub name: String,
    pub config: ProjectConfig,
    corpus: Arc<Corpus>,
    base: Arc<EmbeddingMatrix>,
    adapter: Option<Adapter>,
    adapted: Option<Arc<EmbeddingMatrix>>,
    labels: LabelStore,
    latest: Option<ClusterOutcome>,
    children: BTreeMap<usize, ClusterOutcome>,
    jobs: Vec<JobRecord>,
}

fn embedding_digest(m: &EmbeddingMatrix) -> String {
    format!("{:x}", Sha256::digest(m.to_bytes()))
}

impl Project {
    pub fn new(name: impl Into<String>, corpus: Corpus, config: ProjectConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Invalid("corpus is empty".into()));
        }
        let base = base_embed(corpus.docs(), config.embed_dim, config.embed_seed)?;
        Ok(Self {
            name: name.into(),
            config,
            corpus: Arc::new(corpus),
            base: Arc::new(base),
            adapter: None,
            adapted: None,
            labels: LabelStore::default(),
            latest: None,
            children: BTreeMap::new(),
            jobs: Vec::new(),
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn base_embeddings(&self) -> &EmbeddingMatrix {
        &self.base
    }

    /// Embeddings clustering jobs read: adapted when an adapter exists.
    pub fn embeddings(&self) -> &EmbeddingMatrix {
        self.adapted.as_deref().unwrap_or(&self.base)
    }

    pub fn adapter(&self) -> Option<&Adapter> {
        self.adapter.as_ref()
    }

    pub fn labels(&self) -> &LabelStore {
        &self.labels
    }

    pub fn latest(&self) -> Option<&ClusterOutcome> {
        self.latest.as_ref()
    }

    pub fn child(&self, parent_cluster: usize) -> Option<&ClusterOutcome> {
        self.children.get(&parent_cluster)
    }

    pub fn jobs(&self) -> &[JobRecord] {
        &self.jobs
    }

    pub fn job(&self, job_id: u64) -> Option<&JobRecord> {
        self.jobs.iter().find(|j| j.job_id == job_id)
    }

    pub fn labeled_fraction(&self) -> f64 {
        self.labels.labels.len() as f64 / self.corpus.len() as f64
    }

    fn resolve_scope(&self, scope: Option<&[String]>) -> Result<Vec<usize>> {
        match scope {
            None => Ok((0..self.corpus.len()).collect()),
            Some(ids) => {
                let mut seen = BTreeSet::new();
                ids.iter()
                    .map(|id| {
                        let pos = self
                            .corpus
                            .position(id)
                            .ok_or_else(|| Error::UnknownId(id.clone()))?;
                        if !seen.insert(pos) {
                            return Err(Error::Invalid(format!("document {id:?} repeated in scope")));
                        }
                        Ok(pos)
                    })
                    .collect()
            }
        }
    }

    /// Validates `req` and queues it. For a sub-clustering job the scope is
    /// replaced by the members of `parent_cluster` in the latest partition.
    pub fn submit_job(&mut self, mut req: ClusterJobRequest, parent_cluster: Option<usize>) -> Result<u64> {
        req.validate()?;
        if let Some(cid) = parent_cluster {
            let latest = self
                .latest
                .as_ref()
                .ok_or_else(|| Error::State("no partition yet".into()))?;
            let members = latest
                .members(cid)
                .ok_or_else(|| Error::Invalid(format!("unknown cluster {cid}")))?;
            if members.len() < 2 {
                return Err(Error::Invalid("nothing to sub-cluster".into()));
            }
            req.scope = Some(members.iter().map(|&i| self.corpus.docs()[i].id().to_string()).collect());
        }
        let scope = self.resolve_scope(req.scope.as_deref())?;
        if scope.len() < 2 {
            return Err(Error::Invalid(format!(
                "scope has {} document(s); at least 2 are needed",
                scope.len()
            )));
        }
        if let (ClusterMode::FixedK, Some(k)) = (req.mode, req.k) {
            if k > scope.len() {
                return Err(Error::Invalid(format!(
                    "k={k} exceeds the scope size {}",
                    scope.len()
                )));
            }
        }
        let job_id = self.jobs.last().map_or(1, |j| j.job_id + 1);
        self.jobs.push(JobRecord {
            job_id,
            request: req,
            parent_cluster,
            status: JobStatus::Queued,
            error: None,
            timings: Timings::default(),
            embedding_digest: None,
            partition_digest: None,
            n_clusters: None,
        });
        Ok(job_id)
    }

    fn job_mut(&mut self, job_id: u64) -> Result<&mut JobRecord> {
        self.jobs
            .iter_mut()
            .find(|j| j.job_id == job_id)
            .ok_or_else(|| Error::State(format!("unknown job {job_id}")))
    }

    /// Marks the job running and snapshots its inputs.
    pub fn prepare_job(&mut self, job_id: u64) -> Result<JobInput> {
        let corpus = Arc::clone(&self.corpus);
        let embeddings = Arc::clone(self.adapted.as_ref().unwrap_or(&self.base));
        let digest = embedding_digest(&embeddings);
        let record = self.job_mut(job_id)?;
        if record.status != JobStatus::Queued {
            return Err(Error::State(format!("job {job_id} is not queued")));
        }
        record.status = JobStatus::Running;
        record.embedding_digest = Some(digest);
        let request = record.request.clone();
        let parent_cluster = record.parent_cluster;
        let doc_indices = self.resolve_scope(request.scope.as_deref())?;
        Ok(JobInput {
            job_id,
            request,
            parent_cluster,
            corpus,
            embeddings,
            doc_indices,
            top_bigrams: DEFAULT_TOP_BIGRAMS,
        })
    }

    /// Records the outcome. A top-level result replaces the latest partition
    /// and drops its sub-cluster children; a sub-cluster result is stored
    /// under its parent cluster id.
    pub fn finish_job(&mut self, job_id: u64, outcome: Result<ClusterOutcome>) -> Result<&JobRecord> {
        let record = self.job_mut(job_id)?;
        let parent = record.parent_cluster;
        match outcome {
            Err(e) => {
                record.status = JobStatus::Failed;
                record.error = Some(e.to_string());
            }
            Ok(outcome) => {
                record.status = JobStatus::Done;
                record.timings = outcome.timings;
                record.partition_digest = Some(outcome.partition.digest());
                record.n_clusters = Some(outcome.n_clusters());
                match parent {
                    Some(cid) => {
                        self.children.insert(cid, outcome);
                    }
                    None => {
                        self.latest = Some(outcome);
                        self.children.clear();
                    }
                }
            }
        }
        self.job(job_id).ok_or_else(|| Error::State(format!("unknown job {job_id}")))
    }

    fn run_job(&mut self, req: ClusterJobRequest, parent: Option<usize>) -> Result<&ClusterOutcome> {
        let job_id = self.submit_job(req, parent)?;
        let input = self.prepare_job(job_id)?;
        let outcome = input.run();
        let failure = outcome.as_ref().err().map(|e| e.to_string());
        self.finish_job(job_id, outcome)?;
        if let Some(msg) = failure {
            return Err(Error::State(format!("job {job_id} failed: {msg}")));
        }
        Ok(match parent {
            Some(cid) => &self.children[&cid],
            None => self.latest.as_ref().unwrap(),
        })
    }

    /// Runs a clustering job to completion on the calling thread.
    pub fn run_cluster_job(&mut self, req: ClusterJobRequest) -> Result<&ClusterOutcome> {
        self.run_job(req, None)
    }

    /// Clusters the members of `cluster_id` from the latest partition.
    pub fn subcluster(&mut self, cluster_id: usize, req: ClusterJobRequest) -> Result<&ClusterOutcome> {
        self.run_job(req, Some(cluster_id))
    }

    /// Assigns `label` to every member of `cluster_id` in the latest
    /// partition. Returns how many documents were labeled.
    pub fn bulk_label(&mut self, cluster_id: usize, label: &str) -> Result<usize> {
        let latest = self
            .latest
            .as_ref()
            .ok_or_else(|| Error::State("no partition yet".into()))?;
        let members = latest
            .members(cluster_id)
            .ok_or_else(|| Error::Invalid(format!("unknown cluster {cluster_id}")))?;
        let ids: Vec<String> = members
            .iter()
            .map(|&i| self.corpus.docs()[i].id().to_string())
            .collect();
        self.label_docs(&ids, label)
    }

    /// Assigns `label` to the given documents; one revision per call.
    pub fn label_docs(&mut self, doc_ids: &[String], label: &str) -> Result<usize> {
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::Invalid("label must not be empty".into()));
        }
        if let Some(bad) = doc_ids.iter().find(|id| self.corpus.position(id).is_none()) {
            return Err(Error::UnknownId(bad.clone()));
        }
        for id in doc_ids {
            self.labels.labels.insert(id.clone(), label.to_string());
        }
        self.labels.revision += 1;
        Ok(doc_ids.len())
    }

    /// Trains a fresh adapter on the base embeddings and the current label
    /// store, then swaps in the adapted embeddings.
    pub fn retrain_adapter(&mut self, cfg: &TrainConfig) -> Result<AdapterStats> {
        cfg.validate()?;
        let fraction = self.labeled_fraction();
        if fraction < cfg.labeled_fraction_threshold {
            return Err(Error::BelowThreshold {
                fraction,
                threshold: cfg.labeled_fraction_threshold,
            });
        }
        let adapter = train_adapter(&self.base, &self.corpus, &self.labels.labels, cfg)?;
        let adapted = apply_adapter(&self.base, &adapter)?;
        let stats = AdapterStats {
            trained_on: adapter.trained_on,
            n_classes: self.labels.labels.values().collect::<BTreeSet<_>>().len(),
            labeled_fraction: fraction,
            epochs: adapter.loss_history.len(),
            first_loss: adapter.loss_history[0],
            final_loss: *adapter.loss_history.last().unwrap(),
            d_in: adapter.d_in(),
            d_out: adapter.d_out(),
        };
        self.adapter = Some(adapter);
        self.adapted = Some(Arc::new(adapted));
        Ok(stats)
    }

    /// Purity/NMI of the latest partition against the corpus reference
    /// labels, when every clustered document has one.
    pub fn evaluation(&self) -> Option<&EvalReport> {
        self.latest.as_ref().and_then(|o| o.eval.as_ref())
    }

    /// Writes the project as a directory of independently readable files.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("project.json"),
            serde_json::to_vec_pretty(&ProjectMeta {
                name: self.name.clone(),
                config: self.config.clone(),
            })
            .map_err(json_err)?,
        )?;
        self.corpus.save(dir.join("corpus.jsonl"))?;
        self.base.save(dir.join("base.emb"))?;
        let adapted_path = dir.join("adapted.emb");
        let adapter_path = dir.join("adapter.adp");
        match (&self.adapter, &self.adapted) {
            (Some(a), Some(m)) => {
                a.save(&adapter_path)?;
                m.save(&adapted_path)?;
            }
            _ => {
                remove_if_exists(&adapter_path)?;
                remove_if_exists(&adapted_path)?;
            }
        }
        fs::write(
            dir.join("labels.json"),
            serde_json::to_vec_pretty(&self.labels).map_err(json_err)?,
        )?;
        let mut jobs = fs::File::create(dir.join("jobs.jsonl"))?;
        for job in &self.jobs {
            serde_json::to_writer(&mut jobs, job).map_err(json_err)?;
            jobs.write_all(b"\n")?;
        }
        let state = PartitionState {
            latest: self.latest.clone(),
            children: self.children.clone(),
        };
        fs::write(
            dir.join("partitions.json"),
            serde_json::to_vec(&state).map_err(json_err)?,
        )?;
        if let Some(latest) = &self.latest {
            fs::write(dir.join("partition.txt"), latest.partition.to_text())?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: ProjectMeta =
            serde_json::from_slice(&fs::read(dir.join("project.json"))?).map_err(json_err)?;
        let corpus = Corpus::load(dir.join("corpus.jsonl"))?;
        let base = EmbeddingMatrix::load(dir.join("base.emb"))?;
        if base.n_rows() != corpus.len() {
            return Err(Error::Format(format!(
                "base embeddings have {} rows for {} documents",
                base.n_rows(),
                corpus.len()
            )));
        }
        let adapter_path = dir.join("adapter.adp");
        let (adapter, adapted) = if adapter_path.exists() {
            let adapter = Adapter::load(&adapter_path)?;
            let adapted = EmbeddingMatrix::load(dir.join("adapted.emb"))?;
            (Some(adapter), Some(Arc::new(adapted)))
        } else {
            (None, None)
        };
        let labels: LabelStore =
            serde_json::from_slice(&fs::read(dir.join("labels.json"))?).map_err(json_err)?;
        if let Some(id) = labels.labels.keys().find(|id| corpus.position(id).is_none()) {
            return Err(Error::UnknownId(id.clone()));
        }
        let mut jobs = Vec::new();
        for (i, line) in fs::read_to_string(dir.join("jobs.jsonl"))?.lines().enumerate() {
            if !line.trim().is_empty() {
                jobs.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?);
            }
        }
        let state: PartitionState =
            serde_json::from_slice(&fs::read(dir.join("partitions.json"))?).map_err(json_err)?;
        Ok(Self {
            name: meta.name,
            config: meta.config,
            corpus: Arc::new(corpus),
            base: Arc::new(base),
            adapter,
            adapted,
            labels,
            latest: state.latest,
            children: state.children,
            jobs,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ProjectMeta {
    name: String,
    config: ProjectConfig,
}

#[derive(Serialize, Deserialize)]
struct PartitionState {
    latest: Option<ClusterOutcome>,
    children: BTreeMap<usize, ClusterOutcome>,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Format(e.to_string())
}

fn remove_if_exists(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}
