//! HTTP/JSON API over in-memory projects.
//!
//! Clustering jobs are accepted immediately and run in the background on the
//! blocking pool, one at a time per project. The project lock is held only
//! while a job is queued, snapshotted and recorded, never while it runs.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use textclust::embed::TrainConfig;
use textclust::service::{
    AdapterStats, ClusterJobRequest, ClusterOutcome, JobStatus, Project, ProjectConfig, Timings, DEFAULT_TOP_BIGRAMS,
};
use textclust::summarize::{summarize_partition, ClusterSummary};
use textclust::{Corpus, Document, Error};

pub const DEFAULT_PAGE: usize = 50;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Error::State(_) => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(json!({ "error": self.message }))).into_response()
    }
}

macro_rules! rejection_to_error {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(r: $t) -> Self {
                Self::new(r.status(), r.body_text())
            }
        }
    )*};
}

rejection_to_error!(JsonRejection, PathRejection, QueryRejection);

type ApiResult<T> = Result<T, ApiError>;

// Extractors whose rejections use the JSON error body.

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
struct Json<T>(T);

impl<T: Serialize> IntoResponse for Json<T> {
    fn into_response(self) -> Response {
        axum::Json(self.0).into_response()
    }
}

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Path), rejection(ApiError))]
struct Path<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
struct Query<T>(T);

struct ProjectSlot {
    name: String,
    config: ProjectConfig,
    /// `None` until a corpus is uploaded.
    project: Mutex<Option<Project>>,
    /// Held for the whole run of a job, so jobs execute one at a time in
    /// submission order.
    job_queue: tokio::sync::Mutex<()>,
}

impl ProjectSlot {
    fn lock(&self) -> MutexGuard<'_, Option<Project>> {
        self.project.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Default)]
pub struct AppState {
    projects: RwLock<BTreeMap<u64, Arc<ProjectSlot>>>,
}

impl AppState {
    fn slot(&self, id: u64) -> ApiResult<Arc<ProjectSlot>> {
        self.projects
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown project {id}")))
    }
}

/// Runs `f` on the project, failing when no corpus has been uploaded yet.
fn with_project<T>(slot: &ProjectSlot, f: impl FnOnce(&mut Project) -> ApiResult<T>) -> ApiResult<T> {
    let mut guard = slot.lock();
    let project = guard
        .as_mut()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no corpus uploaded"))?;
    f(project)
}

pub fn router() -> Router {
    router_with(Arc::new(AppState::default()))
}

pub fn router_with(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/projects", post(create_project))
        .route("/projects/{id}/corpus", post(upload_corpus))
        .route("/projects/{id}/jobs", post(submit_job))
        .route("/projects/{id}/jobs/{job_id}", get(job_status))
        .route("/projects/{id}/clusters", get(list_clusters))
        .route("/projects/{id}/clusters/{cid}/docs", get(cluster_docs))
        .route("/projects/{id}/clusters/{cid}/subcluster", post(subcluster))
        .route("/projects/{id}/labels", post(label))
        .route("/projects/{id}/adapt", post(adapt))
        .route("/projects/{id}/metrics", get(metrics))
        .with_state(state)
}

#[derive(Deserialize)]
struct CreateProject {
    name: String,
    #[serde(default)]
    config: ProjectConfig,
}

async fn create_project(State(state): State<Arc<AppState>>, Json(req): Json<CreateProject>) -> ApiResult<Json<Value>> {
    if req.name.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "name must not be empty"));
    }
    let mut projects = state.projects.write().unwrap_or_else(|e| e.into_inner());
    let id = projects.keys().next_back().map_or(1, |k| k + 1);
    projects.insert(
        id,
        Arc::new(ProjectSlot {
            name: req.name,
            config: req.config,
            project: Mutex::new(None),
            job_queue: tokio::sync::Mutex::new(()),
        }),
    );
    Ok(Json(json!({ "project_id": id })))
}

/// Replaces the project's corpus and resets everything derived from it.
async fn upload_corpus(State(state): State<Arc<AppState>>, Path(id): Path<u64>, body: String) -> ApiResult<Json<Value>> {
    let slot = state.slot(id)?;
    let corpus = Corpus::parse(&body)?;
    let (name, config) = (slot.name.clone(), slot.config.clone());
    let project = tokio::task::spawn_blocking(move || Project::new(name, corpus, config))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let _queue = slot.job_queue.lock().await;
    let n_docs = project.corpus().len();
    *slot.lock() = Some(project);
    Ok(Json(json!({ "n_docs": n_docs })))
}

fn spawn_job(slot: Arc<ProjectSlot>, job_id: u64) {
    tokio::spawn(async move {
        let _queue = slot.job_queue.lock().await;
        let worker = Arc::clone(&slot);
        let _ = tokio::task::spawn_blocking(move || {
            let input = match worker.lock().as_mut() {
                Some(p) => p.prepare_job(job_id),
                None => return,
            };
            let outcome = match input {
                Ok(input) => input.run(),
                Err(e) => Err(e),
            };
            if let Some(p) = worker.lock().as_mut() {
                let _ = p.finish_job(job_id, outcome);
            }
        })
        .await;
    });
}

async fn queue_job(
    state: &AppState,
    id: u64,
    req: ClusterJobRequest,
    parent: Option<usize>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let slot = state.slot(id)?;
    let job_id = with_project(&slot, |p| Ok(p.submit_job(req, parent)?))?;
    spawn_job(slot, job_id);
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))))
}

async fn submit_job(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Json(req): Json<ClusterJobRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    queue_job(&state, id, req, None).await
}

async fn subcluster(
    State(state): State<Arc<AppState>>,
    Path((id, cid)): Path<(u64, usize)>,
    Json(req): Json<ClusterJobRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    queue_job(&state, id, req, Some(cid)).await
}

#[derive(Serialize)]
struct JobView {
    job_id: u64,
    status: JobStatus,
    timings: Timings,
    partition_digest: Option<String>,
    n_clusters: Option<usize>,
    parent_cluster: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

async fn job_status(State(state): State<Arc<AppState>>, Path((id, job_id)): Path<(u64, u64)>) -> ApiResult<Json<JobView>> {
    let slot = state.slot(id)?;
    with_project(&slot, |p| {
        let j = p
            .job(job_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown job {job_id}")))?;
        Ok(Json(JobView {
            job_id: j.job_id,
            status: j.status,
            timings: j.timings,
            partition_digest: j.partition_digest.clone(),
            n_clusters: j.n_clusters,
            parent_cluster: j.parent_cluster,
            error: j.error.clone(),
        }))
    })
}

#[derive(Deserialize)]
struct ClusterQuery {
    max: Option<usize>,
    top_bigrams: Option<usize>,
    /// Browse the sub-clusters of this cluster instead of the top level.
    parent: Option<usize>,
}

fn outcome<'a>(p: &'a Project, parent: Option<usize>) -> ApiResult<&'a ClusterOutcome> {
    match parent {
        None => p.latest().ok_or_else(|| ApiError::not_found("no partition yet")),
        Some(cid) => p
            .child(cid)
            .ok_or_else(|| ApiError::not_found(format!("cluster {cid} has no sub-clusters"))),
    }
}

async fn list_clusters(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Query(q): Query<ClusterQuery>,
) -> ApiResult<Json<Vec<ClusterSummary>>> {
    let slot = state.slot(id)?;
    with_project(&slot, |p| {
        let o = outcome(p, q.parent)?;
        let summaries = match q.top_bigrams {
            Some(n) if n != DEFAULT_TOP_BIGRAMS => {
                let docs: Vec<&Document> = o.doc_indices.iter().map(|&i| &p.corpus().docs()[i]).collect();
                summarize_partition(&docs, &o.partition, n, q.max, None)
            }
            _ => o.summaries.iter().take(q.max.unwrap_or(usize::MAX)).cloned().collect(),
        };
        Ok(Json(summaries))
    })
}

#[derive(Deserialize)]
struct PageQuery {
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
    parent: Option<usize>,
}

#[derive(Serialize)]
struct DocView {
    id: String,
    text: String,
    /// Label from the uploaded corpus.
    reference_label: Option<String>,
    /// Label assigned by the analyst.
    label: Option<String>,
}

async fn cluster_docs(
    State(state): State<Arc<AppState>>,
    Path((id, cid)): Path<(u64, usize)>,
    Query(q): Query<PageQuery>,
) -> ApiResult<Json<Value>> {
    let slot = state.slot(id)?;
    with_project(&slot, |p| {
        let o = outcome(p, q.parent)?;
        let members = o
            .members(cid)
            .ok_or_else(|| ApiError::not_found(format!("unknown cluster {cid}")))?;
        let docs: Vec<DocView> = members
            .iter()
            .skip(q.offset)
            .take(q.limit.unwrap_or(DEFAULT_PAGE))
            .map(|&i| {
                let d = &p.corpus().docs()[i];
                DocView {
                    id: d.id().to_string(),
                    text: d.text().to_string(),
                    reference_label: d.label.clone(),
                    label: p.labels().labels.get(d.id()).cloned(),
                }
            })
            .collect();
        Ok(Json(json!({
            "cluster_id": cid,
            "total": members.len(),
            "offset": q.offset,
            "docs": docs,
        })))
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelRequest {
    Cluster { cluster_id: usize, label: String },
    Docs { doc_ids: Vec<String>, label: String },
}

async fn label(State(state): State<Arc<AppState>>, Path(id): Path<u64>, Json(req): Json<LabelRequest>) -> ApiResult<Json<Value>> {
    let slot = state.slot(id)?;
    with_project(&slot, |p| {
        let labeled_count = match req {
            LabelRequest::Cluster { cluster_id, label } => p.bulk_label(cluster_id, &label)?,
            LabelRequest::Docs { doc_ids, label } => p.label_docs(&doc_ids, &label)?,
        };
        Ok(Json(json!({
            "labeled_count": labeled_count,
            "revision": p.labels().revision,
            "labeled_fraction": p.labeled_fraction(),
        })))
    })
}

async fn adapt(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    body: axum::body::Bytes,
) -> ApiResult<Json<Value>> {
    let slot = state.slot(id)?;
    // an empty body means the default configuration
    let cfg: TrainConfig = if body.is_empty() {
        TrainConfig::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?
    };
    let stats: AdapterStats = tokio::task::spawn_blocking(move || with_project(&slot, |p| Ok(p.retrain_adapter(&cfg)?)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(json!({ "adapter_stats": stats })))
}

async fn metrics(State(state): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    let slot = state.slot(id)?;
    with_project(&slot, |p| {
        let report = p
            .evaluation()
            .ok_or_else(|| ApiError::not_found("no reference labels for the latest partition"))?;
        Ok(Json(serde_json::to_value(report).expect("report serializes")))
    })
}
