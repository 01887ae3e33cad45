//! Drives the session API in-process: create, add views, solve, read stats.

use axum::body::Body;
use axum::http::{Method, Request};
use entropy_pooling::service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn send(app: &axum::Router, method: Method, uri: &str, body: Value) -> Value {
    let req = Request::builder()
        .method(method.clone())
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value: Value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    println!("{method} {uri} -> {status}");
    value
}

#[tokio::main]
async fn main() {
    let app = router(AppState::new());
    let rows: Vec<Vec<f64>> = (0..500)
        .map(|k| vec![(k as f64 * 0.7).sin(), (k as f64 * 0.3).cos()])
        .collect();
    let created = send(
        &app,
        Method::POST,
        "/sessions",
        json!({"factor_names": ["a", "b"], "rows": rows}),
    )
    .await;
    let id = created["session_id"].as_str().unwrap().to_owned();
    let view = json!({"kind": "MeanLocation", "columns": ["a"], "direction": ">=", "target": {"mode": "KappaSigma", "value": 0.5}});
    send(
        &app,
        Method::PUT,
        &format!("/sessions/{id}/users/desk/views"),
        json!({"views": [view], "overall_confidence": 0.6}),
    )
    .await;
    let stale = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/solve"),
        json!({"expected_revision": 1}),
    )
    .await;
    println!("  {}", stale["error"]);
    let solved = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/solve"),
        json!({}),
    )
    .await;
    println!(
        "  revision {} pooled {}",
        solved["revision"], solved["pooled"]
    );
    let req = Request::get(format!("/sessions/{id}/stats?columns=a,b"))
        .body(Body::empty())
        .unwrap();
    let bytes = app
        .clone()
        .oneshot(req)
        .await
        .unwrap()
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes();
    let stats: Value = serde_json::from_slice(&bytes).unwrap();
    for (prior, post) in stats["prior"]
        .as_array()
        .unwrap()
        .iter()
        .zip(stats["posterior"].as_array().unwrap())
    {
        println!(
            "  {}: mean {:.4} -> {:.4}",
            prior["label"],
            prior["mean"].as_f64().unwrap(),
            post["mean"].as_f64().unwrap()
        );
    }
}
