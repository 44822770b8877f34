//! HTTP API for observers and steering: run list, transcripts, memory,
//! feedback, loop control, an SSE event stream and the console's static
//! files.

use std::collections::VecDeque;
use std::future::IntoFuture;
use std::io;
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot};
use tower_http::services::ServeDir;

use crate::events::{EventBus, LoopEvent};
use crate::orchestrator::{ControlCommand, LoopHandle};

#[derive(Clone)]
struct AppState {
    handle: LoopHandle,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

/// The API routes, plus `static_dir` under `/` when given.
pub fn router(handle: LoopHandle, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/memory", get(get_memory))
        .route("/api/feedback", get(list_feedback).post(post_feedback))
        .route("/api/control", get(get_control).post(post_control))
        .route("/api/events", get(events))
        .route("/api/status", get(get_status))
        .with_state(AppState { handle });
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Finished runs, newest first.
async fn list_runs(State(s): State<AppState>) -> Response {
    Json(s.handle.runs()).into_response()
}

/// The run's transcript as a message array; works for the live run too.
async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    match s.handle.messages(&id) {
        Some(messages) => Json(messages).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown run {id}")),
    }
}

/// Memory records in file order.
async fn get_memory(State(s): State<AppState>) -> Response {
    Json(s.handle.memory()).into_response()
}

async fn get_status(State(s): State<AppState>) -> Json<Value> {
    Json(json!({
        "current_run": s.handle.current_run(),
        "control": s.handle.control.state(),
        "stream_closed": s.handle.events.is_closed(),
        "last_seq": s.handle.events.last_seq(),
    }))
}

#[derive(Deserialize)]
struct FeedbackBody {
    text: String,
}

async fn list_feedback(State(s): State<AppState>) -> Json<Value> {
    Json(json!({ "pending": s.handle.mailbox.pending() }))
}

async fn post_feedback(State(s): State<AppState>, body: Result<Json<FeedbackBody>, JsonRejection>) -> Response {
    let Ok(Json(body)) = body else {
        return error(StatusCode::BAD_REQUEST, "expected {\"text\": \"...\"}");
    };
    match s.handle.mailbox.submit(&body.text) {
        Ok(item) => (StatusCode::ACCEPTED, Json(item)).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

#[derive(Deserialize)]
struct ControlBody {
    command: ControlCommand,
}

async fn get_control(State(s): State<AppState>) -> Json<Value> {
    Json(json!(s.handle.control.state()))
}

async fn post_control(State(s): State<AppState>, body: Result<Json<ControlBody>, JsonRejection>) -> Response {
    let Ok(Json(body)) = body else {
        return error(StatusCode::BAD_REQUEST, "expected {\"command\": \"pause|resume|stop|step\"}");
    };
    s.handle.control.apply(body.command);
    Json(json!(s.handle.control.state())).into_response()
}

#[derive(Deserialize)]
struct EventsQuery {
    after: Option<u64>,
}

/// `id:` is the seq, `event:` the kind, `data:` the payload.
fn sse_event(e: &LoopEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.kind.as_str())
        .data(e.payload.as_str())
}

struct Follow {
    bus: Arc<EventBus>,
    rx: broadcast::Receiver<LoopEvent>,
    last: u64,
    pending: VecDeque<LoopEvent>,
}

/// Live events after the backlog. A lagging receiver catches up from the
/// bus history, so no event is skipped.
fn follow(bus: Arc<EventBus>, rx: broadcast::Receiver<LoopEvent>, last: u64) -> impl Stream<Item = LoopEvent> {
    let state = Follow {
        bus,
        rx,
        last,
        pending: VecDeque::new(),
    };
    stream::unfold(state, |mut st| async move {
        loop {
            if let Some(e) = st.pending.pop_front() {
                st.last = e.seq;
                return Some((e, st));
            }
            match st.rx.recv().await {
                Ok(e) if e.seq > st.last => {
                    st.last = e.seq;
                    return Some((e, st));
                }
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    st.pending = st.bus.since(st.last).into();
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
}

/// Replays events after `Last-Event-ID` (or `?after=`), then follows live
/// until the loop exits.
async fn events(
    State(s): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<EventsQuery>,
) -> Sse<impl Stream<Item = Result<Event, std::convert::Infallible>>> {
    let after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
        .or(q.after)
        .unwrap_or(0);
    let bus = Arc::clone(&s.handle.events);
    let (backlog, rx) = bus.subscribe(after);
    let last = backlog.last().map_or(after, |e| e.seq);
    let live = match rx {
        Some(rx) => follow(Arc::clone(&bus), rx, last).boxed(),
        None => stream::empty().boxed(),
    };
    let all = stream::iter(backlog).chain(live).map(|e| Ok(sse_event(&e)));
    Sse::new(all).keep_alive(KeepAlive::default())
}

/// A running server; dropped or shut down, it stops accepting and closes
/// open connections.
pub struct ServiceHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("BindError: cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error("cannot start service runtime: {0}")]
    Runtime(#[from] io::Error),
}

/// Binds `addr` (port 0 picks a free one) and serves on a background
/// thread with its own runtime.
pub fn serve(handle: LoopHandle, addr: SocketAddr, static_dir: Option<PathBuf>) -> Result<ServiceHandle, ServiceError> {
    let listener = TcpListener::bind(addr).map_err(|source| ServiceError::Bind { addr, source })?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let (tx, rx) = oneshot::channel();
    let app = router(handle, static_dir);
    let thread = thread::Builder::new().name("openloop-http".into()).spawn(move || {
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => l,
                Err(e) => {
                    log::error!("cannot start service: {e}");
                    return;
                }
            };
            let server = axum::serve(listener, app).into_future();
            futures::future::select(Box::pin(server), rx).await;
        });
        runtime.shutdown_timeout(Duration::from_secs(1));
    })?;
    log::info!("service listening on http://{addr}");
    Ok(ServiceHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
