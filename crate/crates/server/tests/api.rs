use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use textclust::synth::PlantedGroups;
use textclust::{Corpus, Document};

async fn call(app: &Router, method: Method, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body.to_string())).await
}

/// Three topics of 10 documents each with disjoint vocabularies.
fn three_topic_corpus() -> Corpus {
    let topics = [
        ("billing", "payment failed card declined refund please"),
        ("delivery", "parcel shipping delayed tracking courier today"),
        ("account", "password reset login locked account email"),
    ];
    let docs = topics
        .iter()
        .flat_map(|(label, text)| {
            (0..10).map(move |i| Document::new(format!("{label}{i}"), format!("{text} n{i}"), Some(label.to_string())))
        })
        .collect();
    Corpus::new(docs).unwrap()
}

async fn project_with(app: &Router, corpus: &Corpus) -> u64 {
    let (status, body) = post(app, "/projects", json!({ "name": "demo" })).await;
    assert_eq!(status, StatusCode::OK);
    let id = body["project_id"].as_u64().unwrap();
    let (status, body) = call(app, Method::POST, &format!("/projects/{id}/corpus"), Some(corpus.to_jsonl())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["n_docs"].as_u64().unwrap() as usize, corpus.len());
    id
}

async fn wait_for(app: &Router, project: u64, job: u64) -> Value {
    for _ in 0..2000 {
        let (status, body) = get(app, &format!("/projects/{project}/jobs/{job}")).await;
        assert_eq!(status, StatusCode::OK);
        if body["status"] == "done" || body["status"] == "failed" {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("job {job} did not finish");
}

async fn run_job(app: &Router, uri: &str, req: Value) -> (u64, Value) {
    let (status, body) = post(app, uri, req).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    let job = body["job_id"].as_u64().unwrap();
    let project = uri.split('/').nth(2).unwrap().parse().unwrap();
    (job, wait_for(app, project, job).await)
}

#[tokio::test(flavor = "multi_thread")]
async fn analyst_loop_end_to_end() {
    let app = textclust_server::api::router();
    let id = project_with(&app, &three_topic_corpus()).await;

    let (_, job) = run_job(&app, &format!("/projects/{id}/jobs"), json!({ "mode": "auto", "knn_k": 5 })).await;
    assert_eq!(job["status"], "done");
    assert_eq!(job["n_clusters"], 3);
    assert_eq!(job["partition_digest"].as_str().unwrap().len(), 64);
    assert!(job["timings"]["total_ms"].as_f64().unwrap() > 0.0);

    let (status, clusters) = get(&app, &format!("/projects/{id}/clusters")).await;
    assert_eq!(status, StatusCode::OK);
    let clusters = clusters.as_array().unwrap();
    assert_eq!(clusters.len(), 3);
    for c in clusters {
        assert_eq!(c["size"], 10);
        assert_eq!(c["top_bigrams"].as_array().unwrap().len(), 5);
    }
    let (_, fewer) = get(&app, &format!("/projects/{id}/clusters?max=2&top_bigrams=2")).await;
    assert_eq!(fewer.as_array().unwrap().len(), 2);
    assert!(fewer.as_array().unwrap().iter().all(|c| c["top_bigrams"].as_array().unwrap().len() == 2));

    let (_, metrics) = get(&app, &format!("/projects/{id}/metrics")).await;
    assert_eq!(metrics["purity"], 1.0);
    assert_eq!(metrics["n_pred_clusters"], 3);

    // browse one cluster in pages
    let cid = clusters[0]["cluster_id"].as_u64().unwrap();
    let (_, page) = get(&app, &format!("/projects/{id}/clusters/{cid}/docs?offset=8&limit=5")).await;
    assert_eq!(page["total"], 10);
    let docs = page["docs"].as_array().unwrap();
    assert_eq!(docs.len(), 2);
    let topic = docs[0]["reference_label"].clone();
    assert!(docs.iter().all(|d| d["reference_label"] == topic && d["label"].is_null()));

    // two bulk labels on disjoint clusters
    let other = clusters[1]["cluster_id"].as_u64().unwrap();
    let (_, a) = post(&app, &format!("/projects/{id}/labels"), json!({ "cluster_id": cid, "label": "first" })).await;
    let (_, b) = post(&app, &format!("/projects/{id}/labels"), json!({ "cluster_id": other, "label": "second" })).await;
    assert_eq!(a["labeled_count"], 10);
    assert_eq!(b["labeled_count"], 10);
    assert_eq!(b["revision"].as_u64().unwrap(), a["revision"].as_u64().unwrap() + 1);
    assert!((b["labeled_fraction"].as_f64().unwrap() - 20.0 / 30.0).abs() < 1e-12);
    let (_, page) = get(&app, &format!("/projects/{id}/clusters/{cid}/docs")).await;
    assert!(page["docs"].as_array().unwrap().iter().all(|d| d["label"] == "first"));

    let (_, c) = post(&app, &format!("/projects/{id}/labels"), json!({ "doc_ids": ["billing0", "delivery0"], "label": "x" })).await;
    assert_eq!(c["labeled_count"], 2);

    // sub-clusters are browsed through the parent query parameter
    let (_, sub) = run_job(
        &app,
        &format!("/projects/{id}/clusters/{cid}/subcluster"),
        json!({ "mode": "fixed_k", "k": 2 }),
    )
    .await;
    assert_eq!(sub["status"], "done");
    assert_eq!(sub["parent_cluster"], cid);
    let (_, children) = get(&app, &format!("/projects/{id}/clusters?parent={cid}")).await;
    let sizes: u64 = children.as_array().unwrap().iter().map(|c| c["size"].as_u64().unwrap()).sum();
    assert_eq!(sizes, 10);
    let (status, _) = get(&app, &format!("/projects/{id}/clusters?parent={other}")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn request_errors_map_to_status_codes() {
    let app = textclust_server::api::router();
    assert_eq!(post(&app, "/projects", json!({ "name": " " })).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/projects/9/clusters").await.0, StatusCode::NOT_FOUND);

    let (_, body) = post(&app, "/projects", json!({ "name": "empty" })).await;
    let id = body["project_id"].as_u64().unwrap();
    assert_eq!(post(&app, &format!("/projects/{id}/jobs"), json!({ "mode": "auto" })).await.0, StatusCode::CONFLICT);
    let (status, body) = call(&app, Method::POST, &format!("/projects/{id}/corpus"), Some("{\"id\":1}".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("line 1"));

    let id = project_with(&app, &three_topic_corpus()).await;
    let jobs = format!("/projects/{id}/jobs");
    for bad in [
        json!({ "mode": "fixed_k" }),
        json!({ "mode": "fixed_k", "k": 0 }),
        json!({ "mode": "fixed_k", "k": 31 }),
        json!({ "mode": "auto", "k": 3 }),
        json!({ "mode": "auto", "knn_k": 0 }),
        json!({ "mode": "auto", "scope": ["billing0", "nope"] }),
    ] {
        let (status, body) = post(&app, &jobs, bad.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad} -> {body}");
        assert!(body["error"].is_string());
    }
    assert_eq!(post(&app, &jobs, json!({ "mode": "sideways" })).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(get(&app, &format!("/projects/{id}/clusters")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, &format!("/projects/{id}/jobs/1")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(
        post(&app, &format!("/projects/{id}/clusters/0/subcluster"), json!({ "mode": "auto" })).await.0,
        StatusCode::CONFLICT
    );

    // fixed_k with k equal to the scope size gives singletons, which cannot be split
    let (_, job) = run_job(&app, &jobs, json!({ "mode": "fixed_k", "k": 30 })).await;
    assert_eq!(job["n_clusters"], 30);
    let (status, body) = post(&app, &format!("/projects/{id}/clusters/0/subcluster"), json!({ "mode": "auto" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("nothing to sub-cluster"));

    let labels = format!("/projects/{id}/labels");
    assert_eq!(post(&app, &labels, json!({ "cluster_id": 0, "label": "  " })).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, &labels, json!({ "cluster_id": 99, "label": "a" })).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, &labels, json!({ "label": "a" })).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread")]
async fn metrics_need_reference_labels() {
    let app = textclust_server::api::router();
    let unlabeled = Corpus::new(
        three_topic_corpus()
            .docs()
            .iter()
            .map(|d| Document::new(d.id(), d.text(), None))
            .collect(),
    )
    .unwrap();
    let id = project_with(&app, &unlabeled).await;
    run_job(&app, &format!("/projects/{id}/jobs"), json!({ "mode": "fixed_k", "k": 3 })).await;
    assert_eq!(get(&app, &format!("/projects/{id}/metrics")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn adapt_enforces_threshold_then_trains() {
    let app = textclust_server::api::router();
    let corpus = PlantedGroups { n_docs: 400, n_groups: 4, ..PlantedGroups::default() }.generate(2);
    let id = project_with(&app, &corpus).await;
    let adapt = format!("/projects/{id}/adapt");

    let (status, body) = post(&app, &adapt, json!({})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let msg = body["error"].as_str().unwrap();
    assert!(msg.contains("0.025") || msg.contains("2.5"), "{msg}");

    for (i, d) in corpus.docs().iter().take(20).enumerate() {
        let label = if i % 2 == 0 { "even" } else { "odd" };
        post(&app, &format!("/projects/{id}/labels"), json!({ "doc_ids": [d.id()], "label": label })).await;
    }
    let (status, body) = post(&app, &adapt, json!({ "epochs": 5 })).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let stats = &body["adapter_stats"];
    assert_eq!(stats["trained_on"], 20);
    assert_eq!(stats["n_classes"], 2);
    assert_eq!(stats["epochs"], 5);

    // subsequent jobs run on the adapted embeddings
    let (_, job) = run_job(&app, &format!("/projects/{id}/jobs"), json!({ "mode": "auto" })).await;
    assert_eq!(job["status"], "done");
}

#[tokio::test(flavor = "multi_thread")]
async fn queued_jobs_run_in_order_and_replay() {
    let app = textclust_server::api::router();
    let corpus = PlantedGroups { n_docs: 300, n_groups: 5, ..PlantedGroups::default() }.generate(4);
    let id = project_with(&app, &corpus).await;
    let jobs = format!("/projects/{id}/jobs");
    let mut ids = Vec::new();
    for _ in 0..4 {
        let (status, body) = post(&app, &jobs, json!({ "mode": "auto", "seed": 7 })).await;
        assert_eq!(status, StatusCode::ACCEPTED);
        ids.push(body["job_id"].as_u64().unwrap());
    }
    assert_eq!(ids, [1, 2, 3, 4]);
    let mut digests = Vec::new();
    for job in ids {
        let body = wait_for(&app, id, job).await;
        assert_eq!(body["status"], "done");
        digests.push(body["partition_digest"].clone());
    }
    assert!(digests.windows(2).all(|w| w[0] == w[1]));
}
