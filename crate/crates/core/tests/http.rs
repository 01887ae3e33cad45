use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use entropy_pooling::case_study;
use entropy_pooling::options::{kernel_bootstrap, BootstrapConfig};
use entropy_pooling::service::{router, AppState};

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => builder.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn raw(app: &Router, method: Method, uri: &str, body: &str) -> StatusCode {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_owned()))
        .unwrap();
    app.clone().oneshot(req).await.unwrap().status()
}

fn grid_rows(j: usize) -> Vec<Vec<f64>> {
    (0..j)
        .map(|k| vec![(k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()])
        .collect()
}

async fn new_session(app: &Router, j: usize) -> String {
    let (status, body) = call(
        app,
        Method::POST,
        "/sessions",
        Some(json!({"factor_names": ["a", "b"], "rows": grid_rows(j)})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["revision"], 1);
    body["session_id"].as_str().unwrap().to_owned()
}

fn mean_view(column: &str, value: f64) -> Value {
    json!({"kind": "MeanLocation", "columns": [column], "direction": "=", "target": {"mode": "Absolute", "value": value}})
}

#[tokio::test]
async fn solve_without_views_returns_the_prior() {
    let app = router(AppState::new());
    let id = new_session(&app, 200).await;
    let (status, solved) = call(&app, Method::POST, &format!("/sessions/{id}/solve"), None).await;
    assert_eq!(status, StatusCode::OK, "{solved}");
    assert_eq!(solved["revision"], 2);
    assert_eq!(solved["pooled"]["relative_entropy"], 0.0);
    let (_, stats) = call(&app, Method::GET, &format!("/sessions/{id}/stats"), None).await;
    assert_eq!(stats["solved"], true);
    assert_eq!(stats["prior"], stats["posterior"]);
    assert_eq!(stats["prior"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn revisions_track_mutations_only() {
    let app = router(AppState::new());
    let id = new_session(&app, 200).await;
    let views = format!("/sessions/{id}/users/u1/views");
    let (status, put) = call(
        &app,
        Method::PUT,
        &views,
        Some(json!({"views": [mean_view("a", 0.1)]})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{put}");
    assert_eq!(put["revision"], 2);

    for uri in [
        format!("/sessions/{id}"),
        format!("/sessions/{id}/stats"),
        views.clone(),
        format!("/sessions/{id}/histogram/a"),
    ] {
        let (status, body) = call(&app, Method::GET, &uri, None).await;
        assert_eq!(status, StatusCode::OK, "{uri}: {body}");
        assert_eq!(body["revision"], 2, "{uri}");
    }
    let (_, stats) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/stats?columns=a,a%20-%20b"),
        None,
    )
    .await;
    assert_eq!(stats["posterior"], Value::Null);
    assert_eq!(stats["prior"][1]["label"], "a - b");

    let (status, solved) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/solve"),
        Some(json!({"expected_revision": 2})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{solved}");
    assert_eq!(solved["revision"], 3);
    let (_, stats) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/stats?columns=a"),
        None,
    )
    .await;
    assert!((stats["posterior"][0]["mean"].as_f64().unwrap() - 0.1).abs() < 1e-8);

    let (status, del) = call(
        &app,
        Method::DELETE,
        &format!("{views}?expected_revision=3"),
        None,
    )
    .await;
    assert_eq!(
        (status, del["revision"].as_u64()),
        (StatusCode::OK, Some(4))
    );
    let (_, summary) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(summary["solved"], false);
    assert_eq!(summary["users"], json!([]));
}

#[tokio::test]
async fn error_statuses() {
    let app = router(AppState::new());
    let id = new_session(&app, 100).await;
    let views = format!("/sessions/{id}/users/u1/views");

    assert_eq!(
        raw(&app, Method::PUT, &views, "{not json").await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        raw(&app, Method::PUT, &views, r#"{"views": [], "bogus": 1}"#).await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        raw(
            &app,
            Method::POST,
            "/sessions",
            r#"{"factor_names": ["a"], "rows": [[1.0, 2.0]]}"#
        )
        .await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        raw(&app, Method::POST, &format!("/sessions/{id}/solve"), "[").await,
        StatusCode::BAD_REQUEST
    );
    let (status, body) = call(
        &app,
        Method::PUT,
        &views,
        Some(json!({"views": [mean_view("zz", 0.0)]})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["revision"], 1);
    let (status, b) = call(
        &app,
        Method::PUT,
        &views,
        Some(json!({"views": [], "overall_confidence": 0.7})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{b}");
    let (status, _) = call(
        &app,
        Method::PUT,
        &format!("/sessions/{id}/users/u2/views"),
        Some(json!({"views": [], "overall_confidence": 0.4})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = call(
        &app,
        Method::PUT,
        &views,
        Some(json!({"views": [], "expected_revision": 1})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["revision"], 2);
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/solve"),
        Some(json!({"expected_revision": 7})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let contradictory =
        json!({"views": [mean_view("a", 0.1), mean_view("a", 0.3)], "expected_revision": 2});
    let (status, _) = call(&app, Method::PUT, &views, Some(contradictory)).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, Method::POST, &format!("/sessions/{id}/solve"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert_eq!(body["revision"], 3);
    let (_, summary) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(
        (summary["revision"].as_u64(), &summary["solved"]),
        (Some(3), &json!(false))
    );

    assert_eq!(
        call(&app, Method::GET, "/sessions/s999", None).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        call(
            &app,
            Method::GET,
            &format!("/sessions/{id}/users/nobody/views"),
            None
        )
        .await
        .0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        call(&app, Method::GET, &format!("/sessions/{id}/frontier"), None)
            .await
            .0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        call(
            &app,
            Method::GET,
            &format!("/sessions/{id}/histogram/zz"),
            None
        )
        .await
        .0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn histogram_defaults_and_mass() {
    let app = router(AppState::new());
    let id = new_session(&app, 300).await;
    let (status, h) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/histogram/a"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{h}");
    assert_eq!(h["edges"].as_array().unwrap().len(), 51);
    let prior: Vec<f64> = serde_json::from_value(h["prior"].clone()).unwrap();
    assert_eq!(prior.len(), 50);
    assert!((prior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(h["posterior"], Value::Null);

    call(
        &app,
        Method::PUT,
        &format!("/sessions/{id}/users/u/views"),
        Some(json!({"views": [mean_view("a", 0.2)]})),
    )
    .await;
    call(&app, Method::POST, &format!("/sessions/{id}/solve"), None).await;
    let (_, h) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/histogram/a%20%2B%20b?bins=7"),
        None,
    )
    .await;
    let post: Vec<f64> = serde_json::from_value(h["posterior"].clone()).unwrap();
    assert_eq!(post.len(), 7);
    assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(
        call(
            &app,
            Method::GET,
            &format!("/sessions/{id}/histogram/a?bins=0"),
            None
        )
        .await
        .0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn frontier_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::with_snapshot_dir(dir.path()));
    let history = case_study::synthetic_history(250, 3).unwrap();
    let (panel, _) = kernel_bootstrap(
        &history,
        &BootstrapConfig {
            epsilon: 0.15,
            num_scenarios: 1500,
            seed: 3,
        },
    )
    .unwrap();
    let rows: Vec<Vec<f64>> = panel.rows().map(<[f64]>::to_vec).collect();
    let (status, created) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"factor_names": panel.factor_names(), "rows": rows})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{created}");
    let id = created["session_id"].as_str().unwrap().to_owned();
    for user in case_study::analyst_views() {
        let body = json!({"views": user.views, "overall_confidence": user.overall_confidence});
        let (status, resp) = call(
            &app,
            Method::PUT,
            &format!("/sessions/{id}/users/{}/views", user.user_id),
            Some(body),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{resp}");
    }
    let request = json!({"book": case_study::standard_book(), "lambdas": [0.0, 0.1, 1000.0], "notional": 1000.0});
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/frontier"),
        Some(request.clone()),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, solved) = call(&app, Method::POST, &format!("/sessions/{id}/solve"), None).await;
    assert_eq!(status, StatusCode::OK, "{solved}");
    assert_eq!(solved["users"].as_array().unwrap().len(), 3);
    assert_eq!(solved["revision"], 5);

    let (status, posted) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/frontier"),
        Some(request),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{posted}");
    assert_eq!(posted["revision"], 6);
    let points = posted["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    let last: Vec<f64> = serde_json::from_value(points[2]["weights"].clone()).unwrap();
    assert!(last.iter().all(|w| *w == 0.0));
    let (_, fetched) = call(&app, Method::GET, &format!("/sessions/{id}/frontier"), None).await;
    assert_eq!(fetched, posted);

    let (status, snap) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/snapshot"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(snap["revision"], 6);
    let path = snap["path"].as_str().unwrap();
    assert!(path.ends_with(&format!("{id}-r6.json")));
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(on_disk, snap["snapshot"]);
    assert_eq!(on_disk["users"].as_array().unwrap().len(), 3);
    assert_eq!(on_disk["posterior"].as_array().unwrap().len(), 1500);
    assert_eq!(on_disk["frontier"].as_array().unwrap().len(), 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_puts_get_contiguous_revisions() {
    let app = router(AppState::new());
    let id = new_session(&app, 100).await;
    let n = 24;
    let handles: Vec<_> = (0..n)
        .map(|k| {
            let app = app.clone();
            let uri = format!("/sessions/{id}/users/u{k}/views");
            tokio::spawn(async move {
                let body =
                    json!({"views": [mean_view("a", 0.01 * k as f64)], "overall_confidence": 0.01});
                call(&app, Method::PUT, &uri, Some(body)).await
            })
        })
        .collect();
    let mut revisions = Vec::new();
    for h in handles {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK, "{body}");
        revisions.push(body["revision"].as_u64().unwrap());
    }
    revisions.sort_unstable();
    assert_eq!(revisions, (2..2 + n as u64).collect::<Vec<_>>());
    let (_, summary) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(summary["revision"], 1 + n as u64);
    assert_eq!(summary["users"].as_array().unwrap().len(), n);
}
