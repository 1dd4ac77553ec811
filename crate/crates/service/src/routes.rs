use crate::error::ApiError;
use crate::session::{Reply, SessionHandle};
use crate::state::AppState;
use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use futures::Stream;
use reasonweave_core::chain::NodeId;
use reasonweave_core::operators::LinkMap;
use reasonweave_core::script::Command;
use reasonweave_core::session::{Phase, SessionEvent};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::convert::Infallible;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub fn router(state: AppState, cors_origin: Option<&str>) -> Router {
    let mutating = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/pause", post(pause))
        .route("/sessions/{id}/resume", post(resume))
        .route("/sessions/{id}/answer", post(answer))
        .route("/nodes/{id}", patch(set_text).delete(delete_node))
        .route("/nodes/{id}/branch", post(branch))
        .route("/nodes/{id}/regenerate", post(regenerate))
        .route("/nodes/{id}/collapse", post(collapse))
        .route("/nodes/{id}/expand", post(expand))
        .route("/nodes/{id}/feedback", post(feedback))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let reads = Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/links", get(links));
    let mut app = mutating.merge(reads).with_state(state);
    if let Some(origin) = cors_origin {
        match HeaderValue::from_str(origin) {
            Ok(v) => {
                app = app.layer(
                    CorsLayer::new()
                        .allow_origin(AllowOrigin::exact(v))
                        .allow_methods([Method::GET, Method::POST, Method::PATCH, Method::DELETE])
                        .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE, "last-event-id".parse().unwrap()]),
                )
            }
            Err(_) => tracing::warn!(origin, "ignoring unparseable CORS origin"),
        }
    }
    app
}

fn same(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(expected) = state.token() {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if !given.is_some_and(|g| same(g.as_bytes(), expected.as_bytes())) {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(req).await
}

/// Parses a JSON body; an empty body reads as `{}`.
fn body<T: DeserializeOwned>(raw: &Bytes) -> Result<T, ApiError> {
    let raw: &[u8] = if raw.iter().all(|b| b.is_ascii_whitespace()) { b"{}" } else { raw };
    serde_json::from_slice(raw).map_err(|e| ApiError::validation(format!("invalid request body: {e}")))
}

fn node_id(raw: &str) -> Result<NodeId, ApiError> {
    raw.parse::<u64>()
        .map(NodeId)
        .map_err(|_| ApiError::validation(format!("node id must be a non-negative integer, got {raw:?}")))
}

#[derive(Deserialize)]
struct NodeQuery {
    session: Option<String>,
}

fn node_session(state: &AppState, q: &NodeQuery) -> Result<SessionHandle, ApiError> {
    let id = q
        .session
        .as_deref()
        .ok_or_else(|| ApiError::validation("the session query parameter is required"))?;
    Ok(state.get(id)?)
}

fn node_reply(reply: Reply) -> Response {
    match reply {
        Reply::Node(n) => Json(n).into_response(),
        Reply::Done => StatusCode::OK.into_response(),
    }
}

#[derive(Deserialize)]
struct CreateBody {
    #[serde(default)]
    prompt: String,
}

#[derive(Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

async fn create_session(State(state): State<AppState>, raw: Bytes) -> Result<Response, ApiError> {
    let b: CreateBody = body(&raw)?;
    let id = state.create(&b.prompt).await?;
    Ok((StatusCode::CREATED, Json(Created { session_id: id.to_string() })).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let h = state.get(&id)?;
    Ok(Json(h.shared.document()).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    from: Option<u64>,
}

fn sse_event(ev: &SessionEvent) -> Event {
    let data = serde_json::to_string(ev).expect("event serializes");
    let kind = serde_json::to_value(&ev.kind)
        .ok()
        .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(str::to_string))
        .unwrap_or_else(|| "event".into());
    Event::default().id(ev.seq.to_string()).event(kind).data(data)
}

/// Replays the log from `from`, then follows it live.
pub fn event_stream(
    h: SessionHandle,
    from: u64,
    stop: tokio::sync::watch::Receiver<bool>,
) -> impl Stream<Item = Result<Event, Infallible>> {
    let (backlog, rx) = h.shared.subscribe(from);
    let buf: VecDeque<SessionEvent> = backlog.into();
    futures::stream::unfold((h, rx, from, buf, stop), |(h, mut rx, mut next, mut buf, mut stop)| async move {
        loop {
            if *stop.borrow() {
                return None;
            }
            if let Some(ev) = buf.pop_front() {
                if ev.seq < next {
                    continue;
                }
                next = ev.seq + 1;
                let out = sse_event(&ev);
                return Some((Ok(out), (h, rx, next, buf, stop)));
            }
            tokio::select! {
                r = rx.recv() => match r {
                    Ok(()) | Err(tokio::sync::broadcast::error::RecvError::Lagged(_)) => {
                        buf.extend(h.shared.events_from(next));
                    }
                    Err(tokio::sync::broadcast::error::RecvError::Closed) => return None,
                },
                r = stop.changed() => {
                    if r.is_err() {
                        return None;
                    }
                }
            }
        }
    })
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let h = state.get(&id)?;
    // A reconnecting EventSource resends the last id it saw.
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(|last| last + 1);
    let from = q.from.or(resume).unwrap_or(0);
    Ok(Sse::new(event_stream(h, from, state.stopping())).keep_alive(KeepAlive::default()).into_response())
}

async fn pause(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    state.get(&id)?.run(Command::Pause).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn resume(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    state.get(&id)?.run(Command::Resume).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn answer(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    state.get(&id)?.accept(Command::GenerateAnswer).await?;
    Ok(StatusCode::ACCEPTED)
}

async fn links(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<LinkMap>, ApiError> {
    let h = state.get(&id)?;
    h.shared.view(|s| match (s.phase, &s.links) {
        (Phase::Answered, links) => Ok(Json(links.clone().unwrap_or_default())),
        (phase, _) => Err(reasonweave_core::engine::EngineError::InvalidPhase {
            operation: "links".into(),
            phase,
        }
        .into()),
    })
}

#[derive(Deserialize)]
struct TextBody {
    text: String,
}

async fn set_text(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<NodeQuery>,
    raw: Bytes,
) -> Result<Response, ApiError> {
    let id = node_id(&id)?;
    let b: TextBody = body(&raw)?;
    let h = node_session(&state, &q)?;
    Ok(node_reply(h.run(Command::SetText { id, text: b.text }).await?))
}

async fn delete_node(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<NodeQuery>,
) -> Result<StatusCode, ApiError> {
    let id = node_id(&id)?;
    node_session(&state, &q)?.run(Command::Delete { id }).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct PromptBody {
    #[serde(default)]
    prompt: String,
}

async fn branch(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<NodeQuery>,
    raw: Bytes,
) -> Result<Response, ApiError> {
    let id = node_id(&id)?;
    let b: PromptBody = body(&raw)?;
    let h = node_session(&state, &q)?;
    let reply = h.run(Command::BranchOut { id, prompt: b.prompt }).await?;
    Ok((StatusCode::CREATED, node_reply(reply)).into_response())
}

async fn regenerate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<NodeQuery>,
) -> Result<StatusCode, ApiError> {
    let id = node_id(&id)?;
    node_session(&state, &q)?.accept(Command::Regenerate { id }).await?;
    Ok(StatusCode::ACCEPTED)
}

async fn collapse(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<NodeQuery>,
) -> Result<Response, ApiError> {
    let id = node_id(&id)?;
    Ok(node_reply(node_session(&state, &q)?.run(Command::Collapse { id }).await?))
}

async fn expand(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<NodeQuery>,
) -> Result<Response, ApiError> {
    let id = node_id(&id)?;
    Ok(node_reply(node_session(&state, &q)?.run(Command::Expand { id }).await?))
}

#[derive(Deserialize)]
struct FeedbackBody {
    #[serde(default)]
    answer: Option<String>,
}

async fn feedback(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<NodeQuery>,
    raw: Bytes,
) -> Result<StatusCode, ApiError> {
    let id = node_id(&id)?;
    let b: FeedbackBody = body(&raw)?;
    node_session(&state, &q)?.accept(Command::Feedback { id, answer: b.answer }).await?;
    Ok(StatusCode::ACCEPTED)
}
