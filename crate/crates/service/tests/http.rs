mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use common::{create, gauss5_doc, logistic_doc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use wynn_service::{router, Registry};

struct Client {
    app: Router,
}

impl Client {
    fn new(dir: &std::path::Path) -> Self {
        Self {
            app: router(Arc::new(Registry::open(dir).unwrap())),
        }
    }

    async fn raw(&self, method: Method, uri: &str, body: Option<String>) -> (StatusCode, String) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map(Body::from).unwrap_or_else(Body::empty))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, text) = self.raw(method, uri, body.map(|b| b.to_string())).await;
        let v = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() };
        (status, v)
    }

    async fn observe(&self, id: &str, index: u64, y: f64, seq: u64) -> (StatusCode, Value) {
        self.call(
            Method::POST,
            &format!("/sessions/{id}/observations"),
            Some(json!({ "index": index, "y": y, "suggestion_seq": seq })),
        )
        .await
    }
}

fn body(req: wynn_service::CreateSession) -> Value {
    serde_json::to_value(req).unwrap()
}

#[tokio::test]
async fn session_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new(dir.path());
    let (st, v) = c
        .call(Method::POST, "/sessions", Some(body(create(logistic_doc(), &["-2", "-1", "1", "2"]))))
        .await;
    assert_eq!(st, StatusCode::CREATED, "{v}");
    let id = v["id"].as_str().unwrap().to_string();
    assert_eq!(v["phase"], "awaiting_start_responses");
    assert_eq!(v["n"], 4);
    assert_eq!(v["pending"].as_array().unwrap().len(), 4);
    assert_eq!(v["start"][0]["label"], "-2");

    let (st, v) = c.call(Method::GET, &format!("/sessions/{id}/suggest"), None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(v["error"], "sequencing");

    let pending: Vec<u64> = c.call(Method::GET, &format!("/sessions/{id}"), None).await.1["pending"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["index"].as_u64().unwrap())
        .collect();

    // Bernoulli support and stale tokens
    let (st, v) = c.observe(&id, pending[0], 2.0, 0).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "response_domain");
    let (st, v) = c.observe(&id, pending[0], 1.0, 5).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(v["error"], "stale_suggestion");

    for (seq, (&k, y)) in pending.iter().zip([0.0, 1.0, 0.0, 1.0]).enumerate() {
        let (st, v) = c.observe(&id, k, y, seq as u64).await;
        assert_eq!(st, StatusCode::OK, "{v}");
        assert_eq!(v["observed"], seq + 1);
    }
    // replaying the same token is rejected, not applied twice
    let (st, _) = c.observe(&id, pending[3], 1.0, 3).await;
    assert_eq!(st, StatusCode::CONFLICT);

    let (st, a) = c.raw(Method::GET, &format!("/sessions/{id}/suggest"), None).await;
    assert_eq!(st, StatusCode::OK);
    let (_, b) = c.raw(Method::GET, &format!("/sessions/{id}/suggest"), None).await;
    assert_eq!(a, b);
    let sug: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(sug["suggestion_seq"], 4);
    assert_eq!(sug["sensitivity"].as_array().unwrap().len(), 81);
    let k = sug["index"].as_u64().unwrap();

    let (st, v) = c.observe(&id, (k + 1) % 81, 1.0, 4).await;
    assert_eq!(st, StatusCode::CONFLICT, "{v}");
    let (st, v) = c.observe(&id, k, 1.0, 4).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["n"], 5);
    assert_eq!(v["phase"], "adaptive");

    let (st, est) = c.call(Method::GET, &format!("/sessions/{id}/estimate"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(est["standard_errors"].as_array().unwrap().len(), 2);
    assert_eq!(est["boundary_flags"].as_array().unwrap().len(), 2);

    let (st, sens) = c.call(Method::GET, &format!("/sessions/{id}/sensitivity"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(sens["p"], 2);

    let (st, hist) = c.call(Method::GET, &format!("/sessions/{id}/history"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(hist["history"].as_array().unwrap().len(), 5);
    assert_eq!(hist["series"].as_array().unwrap().len(), 2);
    assert!(hist["series"][0]["delta_theta_norm"].is_null());

    let (st, _) = c.call(Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::NO_CONTENT);
    let (st, v) = c.call(Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "not_found");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[tokio::test]
async fn creation_errors_and_ids() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new(dir.path());
    let (st, v) = c.call(Method::POST, "/sessions", Some(body(create(gauss5_doc(), &["1"])))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "start_design");
    assert_eq!(v["details"]["rank"], 1);

    let mut bad = gauss5_doc();
    bad.theta_box.lower[0] = 5.0;
    let (st, v) = c.call(Method::POST, "/sessions", Some(body(create(bad, &["-1", "1"])))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "validation");
    assert_eq!(v["details"]["failures"][0]["failure"], "box_inverted");

    let (st, v) = c.call(Method::POST, "/sessions", Some(json!({ "spec": 3 }))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert!(v["message"].as_str().unwrap().contains("spec"));

    let req = body(create(gauss5_doc(), &["-1", "1"]));
    let a = c.call(Method::POST, "/sessions", Some(req.clone())).await.1;
    let b = c.call(Method::POST, "/sessions", Some(req)).await.1;
    assert_ne!(a["id"], b["id"]);
}

#[tokio::test]
async fn floats_use_seventeen_digits() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new(dir.path());
    let (_, v) = c.call(Method::POST, "/sessions", Some(body(create(gauss5_doc(), &["-1", "0"])))).await;
    let id = v["id"].as_str().unwrap().to_string();
    c.observe(&id, 0, 0.1, 0).await;
    c.observe(&id, 2, 0.7, 1).await;
    let (_, text) = c.raw(Method::GET, &format!("/sessions/{id}/history"), None).await;
    assert!(text.contains("\"y\":0.10000000000000001"), "{text}");
    let (_, sug) = c.call(Method::GET, &format!("/sessions/{id}/suggest"), None).await;
    assert_eq!(sug["label"], "1");
}
