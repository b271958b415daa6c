//! HTTP control surface. One simulation thread owns the [`Engine`];
//! handlers read published snapshots and send mutations through a queue.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::io::Write;
use std::net::SocketAddr;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use crate::engine::{peer_json, ConfigPatch, Engine, EngineError, MetricsRecord, Summary};

/// Read-only state published after every command.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub tick: u64,
    pub round: u64,
    pub peers: Vec<Value>,
    pub views: BTreeMap<String, Vec<Value>>,
    pub stats: BTreeMap<String, Value>,
    pub plans: Vec<Value>,
}

impl Snapshot {
    pub fn of(e: &Engine) -> Self {
        let mut views = BTreeMap::new();
        let mut stats = BTreeMap::new();
        for p in e.peers() {
            views.insert(p.name.clone(), e.catalog().views_of(p).map(|v| v.to_json()).collect());
            let window: Vec<Value> = e
                .stats(p)
                .map(|s| {
                    s.entries()
                        .map(|x| {
                            json!({
                                "query": x.query.canonical(),
                                "asker": x.asker.name,
                                "role": if x.asker == *p { "asker" } else { "helper" },
                                "count": x.count,
                            })
                        })
                        .collect()
                })
                .unwrap_or_default();
            stats.insert(
                p.name.clone(),
                json!({
                    "peer": p.name,
                    "window": window,
                    "used_bytes": e.used_bytes(p),
                    "capacity_bytes": e.config().capacity(&p.name),
                    "counters": e.catalog().overlay().metrics().per_peer.get(&p.name).map(|c| c.to_json()),
                    "last_report": e.last_report(&p.name),
                    "pending_config": e.pending(),
                }),
            );
        }
        Snapshot {
            tick: e.tick(),
            round: e.round(),
            peers: e.peers().iter().map(|p| peer_json(e, p)).collect(),
            views,
            stats,
            plans: e.recent_plans().map(|p| serde_json::to_value(p).expect("plan record")).collect(),
        }
    }
}

type Reply<T> = oneshot::Sender<Result<T, EngineError>>;

pub enum Command {
    Step { ticks: u64, reply: Reply<Value> },
    Query { peer: String, query: String, reply: Reply<Value> },
    Config { patch: ConfigPatch, reply: Reply<Value> },
    Summary { reply: Reply<Summary> },
}

/// Handle to a running simulation thread.
#[derive(Clone)]
pub struct SimHandle {
    commands: mpsc::Sender<Command>,
    snapshots: watch::Receiver<Snapshot>,
    events: broadcast::Sender<String>,
}

impl SimHandle {
    pub fn snapshot(&self) -> Snapshot {
        self.snapshots.borrow().clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<String> {
        self.events.subscribe()
    }

    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(make(tx)).await.map_err(|_| ApiError::Stopped)?;
        rx.await.map_err(|_| ApiError::Stopped)?.map_err(ApiError::Engine)
    }

    pub async fn step(&self, ticks: u64) -> Result<Value, ApiError> {
        self.call(|reply| Command::Step { ticks, reply }).await
    }

    pub async fn summary(&self) -> Result<Summary, ApiError> {
        self.call(|reply| Command::Summary { reply }).await
    }
}

/// Starts the simulation thread. Every metrics record is broadcast to SSE
/// subscribers and, if given, appended to `sink` as one JSON line.
pub fn spawn(engine: Engine, sink: Option<Box<dyn Write + Send>>) -> SimHandle {
    let (commands, mut rx) = mpsc::channel::<Command>(64);
    let (snap_tx, snapshots) = watch::channel(Snapshot::of(&engine));
    let (events, _) = broadcast::channel(1024);
    let ev = events.clone();
    std::thread::spawn(move || {
        let mut engine = engine;
        let mut sink = sink;
        let mut emit = |recs: Vec<MetricsRecord>| {
            for r in recs {
                let line = serde_json::to_string(&r).expect("records serialize");
                if let Some(w) = sink.as_mut() {
                    if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                        tracing::error!("metrics sink: {e}");
                    }
                }
                let _ = ev.send(line);
            }
        };
        while let Some(cmd) = rx.blocking_recv() {
            match cmd {
                Command::Step { ticks, reply } => {
                    let res = engine.step(ticks).map(|recs| {
                        let n = recs.len();
                        emit(recs);
                        json!({"tick": engine.tick(), "round": engine.round(), "records": n})
                    });
                    snap_tx.send_replace(Snapshot::of(&engine));
                    let _ = reply.send(res);
                }
                Command::Query { peer, query, reply } => {
                    let res = engine.submit_query(&peer, &query).map(|o| {
                        json!({
                            "table": o.table.to_json(),
                            "plan": o.plan.to_json(),
                            "record": o.record,
                        })
                    });
                    snap_tx.send_replace(Snapshot::of(&engine));
                    let _ = reply.send(res);
                }
                Command::Config { patch, reply } => {
                    let res = engine
                        .queue_config(patch)
                        .map(|_| json!({"pending": engine.pending(), "applies_at_tick": engine.next_boundary()}));
                    snap_tx.send_replace(Snapshot::of(&engine));
                    let _ = reply.send(res);
                }
                Command::Summary { reply } => {
                    let _ = reply.send(Ok(engine.summary()));
                }
            }
        }
    });
    SimHandle {
        commands,
        snapshots,
        events,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Engine(EngineError),
    #[error("simulation stopped")]
    Stopped,
    #[error("unknown peer {0}")]
    NotFound(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            ApiError::Engine(EngineError::UnknownPeer(_)) | ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Engine(EngineError::Query(_) | EngineError::Config(_)) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({"error": self.to_string()}))).into_response()
    }
}

#[derive(Deserialize)]
struct QueryBody {
    peer: String,
    query: String,
}

#[derive(Deserialize)]
struct StepBody {
    ticks: u64,
}

async fn peers(State(h): State<SimHandle>) -> Json<Value> {
    Json(Value::Array(h.snapshot().peers))
}

async fn peer_views(State(h): State<SimHandle>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    h.snapshot()
        .views
        .remove(&id)
        .map(|v| Json(Value::Array(v)))
        .ok_or(ApiError::NotFound(id))
}

async fn peer_stats(State(h): State<SimHandle>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    h.snapshot().stats.remove(&id).map(Json).ok_or(ApiError::NotFound(id))
}

async fn recent_plans(State(h): State<SimHandle>) -> Json<Value> {
    Json(Value::Array(h.snapshot().plans))
}

async fn post_query(State(h): State<SimHandle>, Json(b): Json<QueryBody>) -> Result<Json<Value>, ApiError> {
    h.call(|reply| Command::Query {
        peer: b.peer,
        query: b.query,
        reply,
    })
    .await
    .map(Json)
}

async fn post_config(State(h): State<SimHandle>, Json(patch): Json<ConfigPatch>) -> Result<(StatusCode, Json<Value>), ApiError> {
    let v = h.call(|reply| Command::Config { patch, reply }).await?;
    Ok((StatusCode::ACCEPTED, Json(v)))
}

async fn post_step(State(h): State<SimHandle>, Json(b): Json<StepBody>) -> Result<Json<Value>, ApiError> {
    h.step(b.ticks).await.map(Json)
}

async fn events(State(h): State<SimHandle>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = h.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(line) => return Some((Ok(Event::default().event("metrics").data(line)), rx)),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!("sse subscriber lagged by {n} records");
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

pub fn router(h: SimHandle) -> Router {
    Router::new()
        .route("/peers", get(peers))
        .route("/peers/{id}/views", get(peer_views))
        .route("/peers/{id}/stats", get(peer_stats))
        .route("/plans/recent", get(recent_plans))
        .route("/queries", post(post_query))
        .route("/config", post(post_config))
        .route("/step", post(post_step))
        .route("/events", get(events))
        .with_state(h)
}

/// Binds `port` on localhost and serves until the process ends.
pub async fn serve(h: SimHandle, port: u16) -> std::io::Result<()> {
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(h)).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{CorpusConfig, Mode, ScenarioConfig, WorkloadConfig};
    use axum::body::Body;
    use axum::http::Request;
    use futures::StreamExt;
    use tower::ServiceExt;

    fn handle() -> SimHandle {
        let mut cfg = ScenarioConfig::from_json(
            r#"{"mode":"adaptive","peers":3,"budget_bytes":5000,"corpus":{"synthetic":{"documents":6}},
                "workload":{"events":[]},"ticks":100,"tau_ticks":4}"#,
        )
        .unwrap();
        cfg.workload = WorkloadConfig::Events(
            (0..8)
                .map(|t| crate::engine::Event {
                    tick: t,
                    peer: "p01".into(),
                    query: "(//book (/title {val}))".into(),
                })
                .collect(),
        );
        assert_eq!(cfg.mode, Mode::Adaptive);
        assert!(matches!(cfg.corpus, CorpusConfig::Synthetic { .. }));
        spawn(Engine::new(cfg).unwrap(), None)
    }

    async fn call(h: &SimHandle, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
            .unwrap();
        let resp = router(h.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    #[tokio::test]
    async fn endpoints() {
        let h = handle();
        let (s, peers) = call(&h, "GET", "/peers", None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(peers.as_array().unwrap().len(), 3);

        let (s, _) = call(&h, "GET", "/peers/p09/views", None).await;
        assert_eq!(s, StatusCode::NOT_FOUND);

        let (s, r) = call(&h, "POST", "/step", Some(json!({"ticks": 8}))).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(r["round"], 2);

        let (_, views) = call(&h, "GET", "/peers/p01/views", None).await;
        let patterns: Vec<&str> = views.as_array().unwrap().iter().map(|v| v["pattern"].as_str().unwrap()).collect();
        assert!(patterns.contains(&"(//book (/title {val}))"), "{patterns:?}");

        let (s, out) = call(&h, "POST", "/queries", Some(json!({"peer": "p01", "query": "(//book (/title {val}))"}))).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(out["plan"]["operator"], "Project");
        assert!(out["table"]["rows"].is_array());

        let (s, err) = call(&h, "POST", "/queries", Some(json!({"peer": "p01", "query": "(//book"}))).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        assert!(err["error"].as_str().unwrap().len() > 3);

        let (_, plans) = call(&h, "GET", "/plans/recent", None).await;
        assert!(!plans.as_array().unwrap().is_empty());
        let (_, stats) = call(&h, "GET", "/peers/p01/stats", None).await;
        assert_eq!(stats["capacity_bytes"], 5000);
    }

    #[tokio::test]
    async fn config_applies_at_next_round() {
        let h = handle();
        h.step(1).await.unwrap();
        let (s, r) = call(&h, "POST", "/config", Some(json!({"tau_ticks": 2, "theta": 1.5}))).await;
        assert_eq!(s, StatusCode::ACCEPTED);
        assert_eq!(r["pending"]["tau_ticks"], 2);
        assert_eq!(r["applies_at_tick"], 4);
        let (s, _) = call(&h, "POST", "/config", Some(json!({"tau_ticks": 0}))).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);

        let mut events = h.subscribe();
        h.step(3).await.unwrap();
        let mut boundary = None;
        while let Ok(line) = events.try_recv() {
            let v: Value = serde_json::from_str(&line).unwrap();
            if v["boundary"].is_object() {
                boundary = Some(v["boundary"].clone());
            }
        }
        let b = boundary.expect("boundary record");
        assert_eq!(b["config"]["tau_ticks"], 2);
        assert_eq!(b["config"]["theta"], 1.5);
        assert_eq!(b["applied"]["tau_ticks"], 2);
        h.step(2).await.unwrap();
        assert_eq!(h.snapshot().round, 2);
    }

    #[tokio::test]
    async fn event_stream_carries_records() {
        let h = handle();
        let req = Request::builder().uri("/events").body(Body::empty()).unwrap();
        let resp = router(h.clone()).oneshot(req).await.unwrap();
        assert_eq!(resp.headers()["content-type"], "text/event-stream");
        let mut body = resp.into_body().into_data_stream();
        h.step(1).await.unwrap();
        let chunk = body.next().await.unwrap().unwrap();
        let text = String::from_utf8(chunk.to_vec()).unwrap();
        assert!(text.starts_with("event: metrics\ndata: {\"tick\":0"), "{text}");
    }
}
