//! Live control endpoint for an [`Engine`].
//!
//! The engine runs on its own thread, paced against the wall clock, and is
//! the only owner of simulation state. HTTP handlers talk to it through a
//! command queue (parameter updates, each answered on a oneshot channel)
//! and read snapshots it publishes: the metrics stream, the latest received
//! frame and the effective configuration.
//!
//! Routes:
//!
//! | method | path            | body / response                                   |
//! |--------|-----------------|---------------------------------------------------|
//! | POST   | `/params`       | `ParamUpdate` JSON; 200 applied values, 400, 422  |
//! | GET    | `/metrics`      | newline-delimited `MetricsRecord` JSON, streamed  |
//! | GET    | `/ws`           | WebSocket: records out, `ParamUpdate` JSON in     |
//! | GET    | `/frame/latest` | most recent received frame, binary PGM            |
//! | GET    | `/config`       | effective scenario config JSON                    |
//!
//! A metrics subscriber first receives every record emitted so far, then
//! live records, and finally the run summary line, after which the stream
//! ends.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, Stream, StreamExt};
use serde::Serialize;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use fsolink::runtime::{
    record_line, summary_line, Engine, ParamUpdate, ParamsInEffect, RunSummary, RuntimeError, ScenarioConfig,
};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("engine thread panicked")]
    EnginePanicked,
}

#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    /// Simulated seconds per wall-clock second; `f64::INFINITY` runs
    /// unpaced.
    pub speed: f64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { speed: 1.0 }
    }
}

/// Why an update was not applied.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdateRejection {
    Invalid(String),
    Finished,
}

type UpdateReply = Result<ParamsInEffect, UpdateRejection>;

struct Command {
    update: ParamUpdate,
    reply: oneshot::Sender<UpdateReply>,
}

#[derive(Debug, Clone)]
enum Line {
    Record(Arc<str>),
    Summary(Arc<str>),
}

/// Append-only metrics log with live fan-out.
struct Hub {
    state: Mutex<(Vec<Line>, bool)>,
    live: broadcast::Sender<Line>,
}

impl Hub {
    fn new() -> Self {
        Self { state: Mutex::new((Vec::new(), false)), live: broadcast::channel(4096).0 }
    }

    fn publish(&self, line: Line) {
        let mut state = self.state.lock().expect("hub lock");
        if matches!(line, Line::Summary(_)) {
            state.1 = true;
        }
        state.0.push(line.clone());
        let _ = self.live.send(line);
    }

    /// History so far plus a receiver for what follows; `None` once the
    /// summary has been published.
    fn subscribe(&self) -> (Vec<Line>, Option<broadcast::Receiver<Line>>) {
        let state = self.state.lock().expect("hub lock");
        let rx = (!state.1).then(|| self.live.subscribe());
        (state.0.clone(), rx)
    }

    fn stream(&self) -> impl Stream<Item = Line> + Send + 'static {
        let (history, rx) = self.subscribe();
        let live = futures::stream::unfold(rx, |rx| async move {
            let mut rx = rx?;
            loop {
                match rx.recv().await {
                    Ok(line @ Line::Summary(_)) => return Some((line, None)),
                    Ok(line) => return Some((line, Some(rx))),
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        });
        futures::stream::iter(history).chain(live)
    }
}

impl Line {
    fn text(&self) -> &str {
        match self {
            Line::Record(s) | Line::Summary(s) => s,
        }
    }
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<Command>,
    hub: Arc<Hub>,
    frame: watch::Receiver<Option<Arc<Vec<u8>>>>,
    config: watch::Receiver<ScenarioConfig>,
}

/// A running control endpoint.
pub struct RunningServer {
    addr: SocketAddr,
    engine: Option<std::thread::JoinHandle<Result<RunSummary, RuntimeError>>>,
    server: tokio::task::JoinHandle<()>,
}

impl RunningServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Waits for the simulation to finish; the HTTP side keeps serving.
    /// Returns `None` if the result was already taken.
    pub async fn wait_engine(&mut self) -> Option<Result<RunSummary, ServeError>> {
        let engine = self.engine.take()?;
        while !engine.is_finished() {
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        Some(engine.join().map_err(|_| ServeError::EnginePanicked).and_then(|r| r.map_err(Into::into)))
    }

    pub fn shutdown(self) {
        self.server.abort();
    }
}

/// Binds `bind_address`, starts the engine thread and serves the control
/// API on the current tokio runtime.
pub async fn serve_control(engine: Engine, bind_address: &str, opts: ServeOptions) -> Result<RunningServer, ServeError> {
    let listener = TcpListener::bind(bind_address)
        .await
        .map_err(|source| ServeError::Bind { addr: bind_address.to_string(), source })?;
    let addr = listener.local_addr().map_err(|source| ServeError::Bind { addr: bind_address.to_string(), source })?;

    let (cmd_tx, cmd_rx) = mpsc::channel(64);
    let hub = Arc::new(Hub::new());
    let (frame_tx, frame_rx) = watch::channel(None);
    let (config_tx, config_rx) = watch::channel(engine.config().clone());

    let engine_hub = hub.clone();
    let engine = std::thread::Builder::new()
        .name("fsolink-engine".into())
        .spawn(move || drive(engine, opts, cmd_rx, engine_hub, frame_tx, config_tx))
        .expect("spawn engine thread");

    let app = router(AppState { commands: cmd_tx, hub, frame: frame_rx, config: config_rx });
    let server = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok(RunningServer { addr, engine: Some(engine), server })
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/params", post(post_params))
        .route("/metrics", get(get_metrics))
        .route("/ws", get(get_ws))
        .route("/frame/latest", get(get_frame))
        .route("/config", get(get_config))
        .with_state(state)
}

fn drive(
    mut engine: Engine,
    opts: ServeOptions,
    mut commands: mpsc::Receiver<Command>,
    hub: Arc<Hub>,
    frame_tx: watch::Sender<Option<Arc<Vec<u8>>>>,
    config_tx: watch::Sender<ScenarioConfig>,
) -> Result<RunSummary, RuntimeError> {
    let start = Instant::now();
    let tick = engine.config().channel.tick_interval;
    let mut config_dirty = false;
    let result = loop {
        while let Ok(cmd) = commands.try_recv() {
            let reply = engine.apply_update(cmd.update).map_err(|e| UpdateRejection::Invalid(e.to_string()));
            config_dirty |= reply.is_ok();
            let _ = cmd.reply.send(reply);
        }
        if engine.is_done() {
            let (_, summary) = engine.finish();
            hub.publish(Line::Summary(summary_line(&summary).into()));
            break Ok(summary);
        }
        let out = match engine.step() {
            Ok(out) => out,
            Err(e) => break Err(e),
        };
        if config_dirty {
            config_tx.send_replace(engine.config().clone());
            config_dirty = false;
        }
        if let Some(frame) = out.frames.last() {
            if let Some(video) = engine.source().to_video(&frame.bytes) {
                frame_tx.send_replace(Some(Arc::new(video.to_pgm())));
            }
        }
        if let Some(record) = out.record {
            hub.publish(Line::Record(record_line(&record).into()));
        }
        if opts.speed.is_finite() {
            let due = Duration::from_secs_f64(engine.tick() as f64 * tick / opts.speed);
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    };
    // Answer late updates until every handle is gone.
    std::thread::spawn(move || {
        while let Some(cmd) = commands.blocking_recv() {
            let _ = cmd.reply.send(Err(UpdateRejection::Finished));
        }
    });
    result
}

#[derive(Serialize)]
struct Applied {
    applied: ParamsInEffect,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

async fn submit(state: &AppState, update: ParamUpdate) -> UpdateReply {
    let (reply, rx) = oneshot::channel();
    if state.commands.send(Command { update, reply }).await.is_err() {
        return Err(UpdateRejection::Finished);
    }
    rx.await.unwrap_or(Err(UpdateRejection::Finished))
}

async fn post_params(State(state): State<AppState>, body: Bytes) -> Response {
    let update: ParamUpdate = match serde_json::from_slice(&body) {
        Ok(u) => u,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed update: {e}")),
    };
    match submit(&state, update).await {
        Ok(applied) => Json(Applied { applied }).into_response(),
        Err(UpdateRejection::Invalid(reason)) => error(StatusCode::UNPROCESSABLE_ENTITY, reason),
        Err(UpdateRejection::Finished) => error(StatusCode::CONFLICT, "run finished"),
    }
}

async fn get_metrics(State(state): State<AppState>) -> Response {
    let body = state
        .hub
        .stream()
        .map(|line| Ok::<_, Infallible>(Bytes::from(format!("{}\n", line.text()))));
    Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .body(Body::from_stream(body))
        .expect("valid response")
}

async fn get_frame(State(state): State<AppState>) -> Response {
    match state.frame.borrow().clone() {
        Some(pgm) => ([(header::CONTENT_TYPE, "image/x-portable-graymap")], pgm.as_ref().clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, "no frame received yet"),
    }
}

async fn get_config(State(state): State<AppState>) -> Response {
    Json(state.config.borrow().clone()).into_response()
}

async fn get_ws(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| websocket(socket, state))
}

#[derive(Serialize)]
#[serde(untagged)]
enum Ack {
    Ok { ok: bool, applied: ParamsInEffect },
    Err { ok: bool, error: String },
}

async fn websocket(socket: WebSocket, state: AppState) {
    let (mut sink, mut inbound) = socket.split();
    let (out_tx, mut out_rx) = mpsc::channel::<String>(64);

    let updates = {
        let state = state.clone();
        tokio::spawn(async move {
            while let Some(Ok(msg)) = inbound.next().await {
                let text = match msg {
                    Message::Text(t) => t.to_string(),
                    Message::Close(_) => break,
                    _ => continue,
                };
                let ack = match serde_json::from_str::<ParamUpdate>(&text) {
                    Err(e) => Ack::Err { ok: false, error: format!("malformed update: {e}") },
                    Ok(update) => match submit(&state, update).await {
                        Ok(applied) => Ack::Ok { ok: true, applied },
                        Err(UpdateRejection::Invalid(error)) => Ack::Err { ok: false, error },
                        Err(UpdateRejection::Finished) => Ack::Err { ok: false, error: "run finished".into() },
                    },
                };
                if out_tx.send(serde_json::to_string(&ack).expect("ack serializes")).await.is_err() {
                    break;
                }
            }
        })
    };

    let mut records = Box::pin(state.hub.stream());
    loop {
        tokio::select! {
            line = records.next() => match line {
                Some(line) => {
                    if sink.send(Message::Text(line.text().into())).await.is_err() {
                        break;
                    }
                }
                None => {
                    // records are done; keep acknowledging updates until the client leaves
                    while let Some(ack) = out_rx.recv().await {
                        if sink.send(Message::Text(ack.into())).await.is_err() {
                            break;
                        }
                    }
                    break;
                }
            },
            ack = out_rx.recv() => match ack {
                Some(ack) => {
                    if sink.send(Message::Text(ack.into())).await.is_err() {
                        break;
                    }
                }
                None => break,
            },
        }
    }
    updates.abort();
}
