mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use common::*;
use http_body_util::BodyExt;
use mkedg_cli::commands::load_for_inference;
use mkedg_cli::server::{router, AppState, HEALTH_BODY};
use tower::ServiceExt;

fn app(toy: &Toy, static_dir: Option<std::path::PathBuf>) -> Router {
    let (model, kb) = load_for_inference(&toy.settings(), &Default::default()).unwrap();
    router(
        Arc::new(AppState {
            model,
            kb,
            max_steps: 30,
        }),
        static_dir,
    )
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn chat_request(body: &str) -> Request<Body> {
    Request::post("/api/chat")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn error_message(body: &[u8]) -> String {
    let v: serde_json::Value = serde_json::from_slice(body).unwrap();
    v["error"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn health_body_is_exact() {
    let toy = Toy::trained(16, 1);
    let (status, body) = call(
        &app(&toy, None),
        Request::get("/api/health").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, br#"{"status":"ok","model":"MKEDG1"}"#);
    assert_eq!(HEALTH_BODY.as_bytes(), body.as_slice());
}

#[tokio::test]
async fn chat_errors() {
    let toy = Toy::trained(16, 1);
    let app = app(&toy, None);
    let (s, b) = call(&app, chat_request(r#"{"history": []}"#)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(!error_message(&b).is_empty());
    let (s, _) = call(&app, chat_request(r#"{"history": ["  "]}"#)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    for malformed in ["{not json", r#"{"history": "hi"}"#, r#"{"turns": ["hi"]}"#, ""] {
        let (s, b) = call(&app, chat_request(malformed)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{malformed}");
        error_message(&b);
    }
    let long = "a".repeat(513);
    let (s, b) = call(&app, chat_request(&format!(r#"{{"history": ["hi", "{long}"]}}"#))).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert!(error_message(&b).contains("utterance 1"));
}

#[tokio::test]
async fn decode_failure_is_internal_error() {
    let toy = Toy::trained(16, 1);
    let (mut model, kb) = load_for_inference(&toy.settings(), &Default::default()).unwrap();
    model.config.vocab_size = 5;
    let app = router(
        Arc::new(AppState {
            model,
            kb,
            max_steps: 30,
        }),
        None,
    );
    let (s, b) = call(&app, chat_request(r#"{"history": ["my dog won a prize"]}"#)).await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    error_message(&b);
}

#[tokio::test]
async fn chat_is_deterministic_and_matches_generate() {
    let toy = Toy::trained(16, 20);
    let app = app(&toy, None);
    let body =
        r#"{"history": ["last week my dog won a prize .", "oh really ? what happened next ?", "i am so proud ."]}"#;
    let (s1, a) = call(&app, chat_request(body)).await;
    let (s2, b) = call(&app, chat_request(body)).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, b);

    let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let dist = v["emotion_distribution"].as_object().unwrap();
    let total: f64 = dist.values().map(|p| p.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-4);
    let best = dist
        .iter()
        .max_by(|x, y| x.1.as_f64().unwrap().total_cmp(&y.1.as_f64().unwrap()))
        .unwrap()
        .0;
    assert_eq!(v["emotion"].as_str().unwrap(), best);
    assert_eq!(
        v["copied_tokens"].as_array().unwrap().len(),
        v["response"].as_str().unwrap().split_whitespace().count()
    );

    let o = toy.run(&[
        "generate",
        "--json",
        "--history",
        "last week my dog won a prize .",
        "--history",
        "oh really ? what happened next ?",
        "--history",
        "i am so proud .",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim_end().as_bytes(), a.as_slice());
}

#[tokio::test]
async fn static_files_and_cors() {
    let toy = Toy::trained(16, 1);
    let web = toy.path("web");
    std::fs::create_dir_all(&web).unwrap();
    std::fs::write(web.join("index.html"), "<title>chat</title>").unwrap();
    let app = app(&toy, Some(web));
    let (s, b) = call(&app, Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b, b"<title>chat</title>");

    let none = self::app(&toy, Some(toy.path("missing")));
    let (s, _) = call(&none, Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let preflight = Request::options("/api/chat")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(preflight).await.unwrap();
    assert_eq!(
        resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN],
        "http://localhost:5173"
    );
    let foreign = Request::get("/api/health")
        .header(header::ORIGIN, "https://example.com")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(foreign).await.unwrap();
    assert!(resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
}

#[tokio::test]
async fn concurrent_requests_agree() {
    let toy = Toy::trained(16, 1);
    let app = app(&toy, None);
    let body = r#"{"history": ["my exam went badly"]}"#;
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move { call(&app, chat_request(body)).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        let (s, b) = h.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        bodies.push(b);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}
