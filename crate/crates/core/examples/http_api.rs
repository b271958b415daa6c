//! The console's HTTP API on a generated scenario. Requests go through the
//! router in-process; pass a port to keep serving afterwards, e.g.
//! `curl -N localhost:7878/events` then `curl -XPOST localhost:7878/step -d '{"ticks":50}' -H 'content-type: application/json'`.
//!
//! cargo run --example http_api [port]

use axum::body::{to_bytes, Body};
use axum::http::Request;
use p2pxml::api;
use p2pxml::engine::{Engine, ScenarioConfig};
use tower::ServiceExt;

const CONFIG: &str = r#"{"mode":"adaptive","seed":7,"peers":6,"budget_bytes":3000,
  "corpus":{"synthetic":{"documents":30}},"workload":{"generated":{}},
  "ticks":200,"tau_ticks":50}"#;

async fn call(app: &axum::Router, method: &str, path: &str, body: &str) -> String {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), 1 << 20).await.unwrap();
    let text = String::from_utf8_lossy(&bytes);
    format!("{method} {path} -> {status} {}", &text[..text.len().min(400)])
}

#[tokio::main]
async fn main() {
    let handle = api::spawn(Engine::new(ScenarioConfig::from_json(CONFIG).unwrap()).unwrap(), None);
    let app = api::router(handle.clone());
    let mut events = handle.subscribe();

    println!("{}", call(&app, "POST", "/step", r#"{"ticks":60}"#).await);
    println!("{}", call(&app, "POST", "/config", r#"{"theta":1.5}"#).await);
    println!("{}", call(&app, "POST", "/queries", r#"{"peer":"p02","query":"(//book (/title {val}))"}"#).await);
    println!("{}", call(&app, "GET", "/peers/p00/views", "").await);
    println!("{}", call(&app, "GET", "/peers/p00/stats", "").await);
    println!("{}", call(&app, "GET", "/plans/recent", "").await);
    println!("{}", call(&app, "GET", "/peers/nobody/views", "").await);
    let mut n = 0;
    while events.try_recv().is_ok() {
        n += 1;
    }
    println!("{n} metrics events broadcast");

    if let Some(port) = std::env::args().nth(1).and_then(|a| a.parse().ok()) {
        println!("serving on 127.0.0.1:{port}");
        api::serve(handle, port).await.unwrap();
    }
}
