//! Routes, bearer auth, the server-sent event stream and the thread that
//! owns the [`Engine`].

use crate::engine::{Action, ApiError, Engine, OptimizeRequest, Snapshot};
use crate::frames::{Frame, FrameHub};
use crate::proposal::Move;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream, StreamExt};
use resched_core::event::EventDraft;
use resched_core::ids::{Family, LineId, RecipeId};
use resched_core::model::Minutes;
use resched_core::optimizer::Contingency;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;
use tokio::sync::{oneshot, watch};
use tokio_stream::wrappers::BroadcastStream;

type Reply = oneshot::Sender<Result<Value, ApiError>>;

enum Command {
    Request(crate::engine::Request, Reply),
    Install(u64, Result<BTreeMap<LineId, Contingency>, String>),
    Tick,
    Stop,
}

/// Shared by every handler.
#[derive(Clone)]
pub struct AppState {
    commands: mpsc::Sender<Command>,
    snapshot: watch::Receiver<Arc<Snapshot>>,
    frames: Arc<FrameHub>,
    tokens: Arc<BTreeMap<String, String>>,
}

impl AppState {
    fn authorized(&self, token: Option<&str>) -> bool {
        token.is_some_and(|t| self.tokens.values().any(|x| x == t))
    }

    fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.borrow().clone()
    }
}

/// A running engine thread plus the state handlers need to reach it.
pub struct Service {
    state: AppState,
    worker: Option<JoinHandle<Engine>>,
    ticker: Option<JoinHandle<()>>,
}

impl Service {
    /// Moves `engine` onto its own thread.
    pub fn start(engine: Engine) -> Self {
        let (tx, rx) = mpsc::channel();
        let initial = Arc::new(engine.snapshot());
        let (snap_tx, snap_rx) = watch::channel(initial);
        let state = AppState {
            commands: tx.clone(),
            snapshot: snap_rx,
            frames: engine.frames(),
            tokens: Arc::new(engine.config().tokens.clone()),
        };
        let realtime = engine.config().realtime_ms_per_minute;
        let worker = std::thread::Builder::new()
            .name("engine".into())
            .spawn(move || command_loop(engine, rx, tx, snap_tx))
            .expect("spawn engine thread");
        let ticker = realtime.map(|ms| {
            let tx = state.commands.clone();
            std::thread::spawn(move || loop {
                std::thread::sleep(Duration::from_millis(ms.max(1)));
                if tx.send(Command::Tick).is_err() {
                    break;
                }
            })
        });
        Self {
            state,
            worker: Some(worker),
            ticker,
        }
    }

    pub fn router(&self) -> Router {
        router(self.state.clone())
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    /// Latest published snapshot.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.state.snapshot()
    }

    /// Stops the engine thread and hands the engine back.
    pub fn stop(mut self) -> Engine {
        let _ = self.state.commands.send(Command::Stop);
        let engine = self.worker.take().expect("running").join().expect("engine thread panicked");
        drop(self.ticker.take());
        engine
    }
}

fn command_loop(
    mut engine: Engine,
    rx: mpsc::Receiver<Command>,
    tx: mpsc::Sender<Command>,
    snapshot: watch::Sender<Arc<Snapshot>>,
) -> Engine {
    // Contingency jobs are numbered so a slow one cannot overwrite a newer one.
    let mut issued = 0u64;
    let mut running = false;
    // Log head at the last failed refresh; no retry until new events arrive.
    let mut failed_at = None;
    loop {
        if !running && failed_at != Some(engine.log_head()) {
            if let Some(job) = engine.contingency_job() {
                issued += 1;
                running = true;
                let (tx, id) = (tx.clone(), issued);
                std::thread::spawn(move || {
                    let r = job.run().map_err(|e| e.to_string());
                    let _ = tx.send(Command::Install(id, r));
                });
            }
        }
        let Ok(cmd) = rx.recv() else { break };
        match cmd {
            Command::Request(req, reply) => {
                let out = engine.handle(req);
                // Publish first so a read issued after the reply sees the write.
                snapshot.send_replace(Arc::new(engine.snapshot()));
                let _ = reply.send(out);
                continue;
            }
            Command::Install(id, result) => {
                running = false;
                match result {
                    Ok(entries) if id == issued => engine.install_contingencies(entries),
                    Ok(_) => {}
                    Err(e) => {
                        tracing::warn!(error = %e, "contingency refresh failed");
                        failed_at = Some(engine.log_head());
                    }
                }
            }
            Command::Tick => {
                let next = engine.simulator().clock() + 1;
                if let Err(e) = engine.tick(next) {
                    tracing::error!(error = %e, "clock tick failed");
                }
            }
            Command::Stop => break,
        }
        snapshot.send_replace(Arc::new(engine.snapshot()));
    }
    engine
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/api/events", post(post_events))
        .route("/api/optimize", post(post_optimize))
        .route("/api/proposals", get(get_proposals))
        .route("/api/proposals/{id}", get(get_proposal))
        .route("/api/proposals/{id}/adjust", post(post_adjust))
        .route("/api/proposals/{id}/execute", post(post_execute))
        .route("/api/proposals/{id}/reject", post(post_reject))
        .route("/api/situations", get(get_situations))
        .route("/api/situations/{id}/ack", post(post_ack))
        .route("/api/schedule/current", get(get_schedule))
        .route("/api/analytics/failure-rates", get(get_failure_rates))
        .route("/api/lines", get(get_lines))
        .route("/api/metrics", get(get_metrics))
        .route("/api/state", get(get_state))
        .route("/api/contingencies", get(get_contingencies))
        .route("/api/sim/advance", post(post_advance))
        .route("/api/sim/failure", post(post_failure))
        .route("/api/sim/recover", post(post_recover))
        .route("/api/stream", get(get_stream))
        .with_state(state)
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (code, Json(self)).into_response()
    }
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let v = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    v.strip_prefix("Bearer ").map(|t| t.trim().to_owned())
}

fn unauthorized() -> ApiError {
    ApiError::new(401, "missing or unknown bearer token")
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, String> {
    serde_json::from_slice(body).map_err(|e| format!("malformed body: {e}"))
}

fn parse_or_empty<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, String> {
    if body.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse(body)
    }
}

async fn submit(
    state: &AppState,
    headers: &HeaderMap,
    action: &str,
    body: Result<Action, String>,
    summary: String,
) -> Response {
    let req = crate::engine::Request {
        token: bearer(headers),
        action: action.to_owned(),
        summary,
        body,
    };
    let (tx, rx) = oneshot::channel();
    if state.commands.send(Command::Request(req, tx)).is_err() {
        return ApiError::new(503, "engine stopped").into_response();
    }
    match rx.await {
        Ok(Ok(v)) => Json(v).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(_) => ApiError::new(503, "engine stopped").into_response(),
    }
}

fn summary_of(body: &Result<Action, String>, raw: &Bytes) -> String {
    match body {
        Ok(a) => crate::engine::Request::new(None, "", a.clone()).summary,
        Err(_) => format!("{} bytes, unparsed", raw.len()),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EventBatch {
    Wrapped { events: Vec<EventDraft> },
    Bare(Vec<EventDraft>),
}

/// One event per line; `None` unless every non-blank line parses.
fn parse_ndjson(body: &Bytes) -> Option<Vec<EventDraft>> {
    let text = std::str::from_utf8(body).ok()?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).ok())
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty())
}

async fn post_events(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let action = parse::<EventBatch>(&body)
        .map(|b| match b {
            EventBatch::Wrapped { events } | EventBatch::Bare(events) => events,
        })
        .or_else(|e| parse_ndjson(&body).ok_or(e))
        .map(Action::Ingest);
    let summary = summary_of(&action, &body);
    submit(&s, &headers, "POST /api/events", action, summary).await
}

async fn post_optimize(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let action = parse_or_empty::<OptimizeRequest>(&body).map(Action::Optimize);
    let summary = summary_of(&action, &body);
    submit(&s, &headers, "POST /api/optimize", action, summary).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdjustBody {
    moves: Vec<Move>,
}

async fn post_adjust(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    let action = parse::<AdjustBody>(&body).map(|b| Action::Adjust {
        id: id.clone(),
        moves: b.moves,
    });
    let summary = summary_of(&action, &body);
    submit(&s, &headers, "POST /api/proposals/{id}/adjust", action, summary).await
}

async fn post_execute(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    let action = Ok(Action::Execute { id });
    let summary = summary_of(&action, &Bytes::new());
    submit(&s, &headers, "POST /api/proposals/{id}/execute", action, summary).await
}

async fn post_reject(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    let action = Ok(Action::Reject { id });
    let summary = summary_of(&action, &Bytes::new());
    submit(&s, &headers, "POST /api/proposals/{id}/reject", action, summary).await
}

async fn post_ack(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    let action = Ok(Action::Acknowledge { id });
    let summary = summary_of(&action, &Bytes::new());
    submit(&s, &headers, "POST /api/situations/{id}/ack", action, summary).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceBody {
    until: Minutes,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LineBody {
    line_id: LineId,
    #[serde(default)]
    at: Option<Minutes>,
}

async fn post_advance(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let action = parse::<AdvanceBody>(&body).map(|b| Action::Advance { until: b.until });
    let summary = summary_of(&action, &body);
    submit(&s, &headers, "POST /api/sim/advance", action, summary).await
}

async fn post_failure(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let action = parse::<LineBody>(&body).map(|b| Action::InjectFailure { line: b.line_id, at: b.at });
    let summary = summary_of(&action, &body);
    submit(&s, &headers, "POST /api/sim/failure", action, summary).await
}

async fn post_recover(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let action = parse::<LineBody>(&body).map(|b| Action::Recover { line: b.line_id, at: b.at });
    let summary = summary_of(&action, &body);
    submit(&s, &headers, "POST /api/sim/recover", action, summary).await
}

/// Reads go to the latest snapshot and are authenticated but not audited.
fn read<F>(s: &AppState, headers: &HeaderMap, f: F) -> Response
where
    F: FnOnce(&Snapshot) -> Result<Value, ApiError>,
{
    if !s.authorized(bearer(headers).as_deref()) {
        return unauthorized().into_response();
    }
    match f(&s.snapshot()) {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

fn value(x: impl serde::Serialize) -> Result<Value, ApiError> {
    serde_json::to_value(x).map_err(|e| ApiError::new(500, e.to_string()))
}

async fn get_proposals(State(s): State<AppState>, headers: HeaderMap) -> Response {
    read(&s, &headers, |snap| value(snap.proposals.values().collect::<Vec<_>>()))
}

async fn get_proposal(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    read(&s, &headers, |snap| match snap.proposals.get(&id) {
        Some(p) => value(p),
        None => Err(ApiError::new(404, format!("no proposal {id}"))),
    })
}

#[derive(Deserialize)]
struct SituationQuery {
    #[serde(default)]
    since: u64,
    #[serde(default)]
    active: bool,
}

async fn get_situations(State(s): State<AppState>, Query(q): Query<SituationQuery>, headers: HeaderMap) -> Response {
    read(&s, &headers, |snap| {
        value(
            snap.situations
                .iter()
                .filter(|x| x.detected_seq > q.since)
                .filter(|x| !q.active || snap.active.contains(&x.id))
                .collect::<Vec<_>>(),
        )
    })
}

async fn get_schedule(State(s): State<AppState>, headers: HeaderMap) -> Response {
    read(&s, &headers, |snap| Ok(json!({ "clock": snap.state.clock, "schedule": snap.committed })))
}

#[derive(Deserialize)]
struct RateQuery {
    recipe: Option<RecipeId>,
    line: Option<LineId>,
    prev: Option<Family>,
}

async fn get_failure_rates(State(s): State<AppState>, Query(q): Query<RateQuery>, headers: HeaderMap) -> Response {
    read(&s, &headers, |snap| match (&q.recipe, &q.line) {
        (Some(r), Some(l)) => value(snap.analytics.failure_rate(r, l, q.prev.as_ref())),
        (None, None) if q.prev.is_none() => value(snap.analytics.rate_table()),
        _ => Err(ApiError::new(400, "recipe and line go together")),
    })
}

async fn get_lines(State(s): State<AppState>, headers: HeaderMap) -> Response {
    read(&s, &headers, |snap| value(&snap.lines))
}

async fn get_metrics(State(s): State<AppState>, headers: HeaderMap) -> Response {
    read(&s, &headers, |snap| value(&snap.metrics))
}

async fn get_state(State(s): State<AppState>, headers: HeaderMap) -> Response {
    read(&s, &headers, |snap| value(&snap.state))
}

async fn get_contingencies(State(s): State<AppState>, headers: HeaderMap) -> Response {
    read(&s, &headers, |snap| value(&snap.contingencies))
}

#[derive(Deserialize)]
struct StreamQuery {
    since: Option<u64>,
    token: Option<String>,
}

fn sse_event(f: &Frame) -> SseEvent {
    SseEvent::default()
        .id(f.seq.to_string())
        .event(f.kind.as_str())
        .json_data(f)
        .expect("frame serializes")
}

/// Frames after `since` (or the `Last-Event-ID` header), then live frames.
/// A subscriber that falls behind is disconnected and resumes by id.
async fn get_stream(State(s): State<AppState>, Query(q): Query<StreamQuery>, headers: HeaderMap) -> Response {
    let token = bearer(&headers).or(q.token);
    if !s.authorized(token.as_deref()) {
        return unauthorized().into_response();
    }
    let last_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok());
    let since = q.since.or(last_id).unwrap_or(0);
    sse(s.frames.subscribe(since), since).into_response()
}

fn sse(
    (backlog, rx): (Vec<Frame>, tokio::sync::broadcast::Receiver<Frame>),
    since: u64,
) -> Sse<impl Stream<Item = Result<SseEvent, Infallible>>> {
    let upto = backlog.last().map_or(since, |f| f.seq);
    let live = BroadcastStream::new(rx)
        .take_while(|r| std::future::ready(r.is_ok()))
        .filter_map(move |r| std::future::ready(r.ok().filter(|f| f.seq > upto)));
    let frames = stream::iter(backlog).chain(live).map(|f| Ok(sse_event(&f)));
    Sse::new(frames).keep_alive(KeepAlive::default())
}

/// Serves until Ctrl-C, then prints the final state hash and log head.
pub async fn serve(engine: Engine) -> std::io::Result<()> {
    let addr = format!("{}:{}", engine.config().bind, engine.config().port);
    let service = Service::start(engine);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!(%addr, "listening");
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, service.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    let engine = tokio::task::spawn_blocking(move || service.stop())
        .await
        .map_err(std::io::Error::other)?;
    let st = engine.state_view();
    println!("state_hash={} head={}", st.state_hash, st.head);
    Ok(())
}
