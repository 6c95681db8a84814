//! HTTP front end: sessions, uploads, turns and live trace streaming.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/v1/sessions` | create a session (optional limit overrides) |
//! | GET | `/v1/sessions/{id}` | config and visible transcript |
//! | POST | `/v1/sessions/{id}/messages` | multipart `text` plus file attachments; runs one turn |
//! | GET | `/v1/sessions/{id}/events` | server-sent trace events of the current or next turn |
//! | GET | `/v1/sessions/{id}/trace` | every recorded trace event, one JSON record per line (`?turn=N` for one turn) |

pub mod store;

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use mmreact_core::orchestrate::{export_trace, Engine, TraceEvent, TraceKind, TurnError};
use mmreact_core::session::{MediaHandle, MediaKind, Message, SessionConfig, SessionState};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use store::{Record, Store, StoreError};

pub const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;
pub const HEARTBEAT: Duration = Duration::from_secs(15);

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Busy(String),
    BadRequest(String),
    Unauthorized,
    Backend(String),
    Storage(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "unknown_session", m),
            ApiError::Busy(m) => (StatusCode::CONFLICT, "session_busy", m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "invalid_request", m),
            ApiError::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token".into()),
            ApiError::Backend(m) => (StatusCode::BAD_GATEWAY, "backend_error", m),
            ApiError::Storage(m) => (StatusCode::INTERNAL_SERVER_ERROR, "storage_failure", m),
        };
        (status, Json(serde_json::json!({ "error": code, "message": message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::Storage(e.to_string())
    }
}

/// What a live subscriber receives.
#[derive(Debug, Clone)]
enum Live {
    Event(TraceEvent),
    Aborted(String),
}

#[derive(Default)]
struct TurnFeed {
    running: bool,
    events: Vec<TraceEvent>,
}

struct Slot {
    created_at: u64,
    /// Last committed state; turns work on a copy.
    state: RwLock<SessionState>,
    turns: RwLock<Vec<Vec<TraceEvent>>>,
    busy: AtomicBool,
    feed: Mutex<TurnFeed>,
    live: broadcast::Sender<Live>,
}

impl Slot {
    fn new(state: SessionState, created_at: u64, turns: Vec<Vec<TraceEvent>>) -> Arc<Self> {
        let (live, _) = broadcast::channel(1024);
        Arc::new(Self {
            created_at,
            state: RwLock::new(state),
            turns: RwLock::new(turns),
            busy: AtomicBool::new(false),
            feed: Mutex::new(TurnFeed::default()),
            live,
        })
    }

    fn publish(&self, event: &TraceEvent) {
        let mut feed = self.feed.lock().expect("feed lock");
        feed.events.push(event.clone());
        let _ = self.live.send(Live::Event(event.clone()));
    }
}

struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

pub struct AppState {
    engine: Engine,
    store: Store,
    defaults: SessionConfig,
    token: Option<String>,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
}

impl AppState {
    /// Open the data directory and reload every persisted session.
    pub fn open(engine: Engine, store: Store, defaults: SessionConfig, token: Option<String>) -> Result<Arc<Self>, StoreError> {
        let mut sessions = HashMap::new();
        for r in store.replay_all()? {
            sessions.insert(r.state.session_id.clone(), Slot::new(r.state, r.created_at, r.turns));
        }
        tracing::info!(sessions = sessions.len(), "loaded persisted sessions");
        Ok(Arc::new(Self {
            engine,
            store,
            defaults,
            token,
            sessions: RwLock::new(sessions),
        }))
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))
    }

    fn authorize(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        let Some(token) = &self.token else { return Ok(()) };
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given == Some(token.as_str()) {
            Ok(())
        } else {
            Err(ApiError::Unauthorized)
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/sessions/{id}/events", get(stream_events))
        .route("/v1/sessions/{id}/trace", get(get_trace))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub max_steps: Option<u32>,
    pub token_budget: Option<u32>,
    pub reserved_for_completion: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub config: SessionConfig,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Option<Json<CreateSession>>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    app.authorize(&headers)?;
    let overrides = body.map(|Json(b)| b).unwrap_or_default();
    let config = SessionConfig {
        max_steps: overrides.max_steps.unwrap_or(app.defaults.max_steps),
        token_budget: overrides.token_budget.unwrap_or(app.defaults.token_budget),
        reserved_for_completion: overrides
            .reserved_for_completion
            .unwrap_or(app.defaults.reserved_for_completion),
    };
    let state = SessionState::new(config).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let created_at = now();
    let id = state.session_id.clone();
    let store = app.store.clone();
    let record = Record::Created {
        session_id: id.clone(),
        created_at,
        config,
    };
    let rec_id = id.clone();
    tokio::task::spawn_blocking(move || store.append(&rec_id, &[record]))
        .await
        .map_err(|e| ApiError::Storage(e.to_string()))??;
    app.sessions
        .write()
        .expect("sessions lock")
        .insert(id.clone(), Slot::new(state, created_at, Vec::new()));
    Ok((StatusCode::CREATED, Json(Created { session_id: id, config })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: mmreact_core::session::Role,
    pub text: String,
    pub media: Vec<MediaHandle>,
    pub timestamp: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub created_at: u64,
    pub config: SessionConfig,
    pub turns: u64,
    pub busy: bool,
    pub transcript: Vec<TranscriptEntry>,
}

fn transcript(state: &SessionState) -> Vec<TranscriptEntry> {
    state
        .visible_transcript()
        .into_iter()
        .map(|m: &Message| TranscriptEntry {
            role: m.role,
            text: m.text.clone(),
            media: m.media.iter().filter_map(|id| state.media(id).cloned()).collect(),
            timestamp: m.timestamp,
        })
        .collect()
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    app.authorize(&headers)?;
    let slot = app.slot(&id)?;
    let state = slot.state.read().expect("state lock");
    Ok(Json(SessionView {
        session_id: state.session_id.clone(),
        created_at: slot.created_at,
        config: state.config,
        turns: state.turn_counter,
        busy: slot.busy.load(Ordering::SeqCst),
        transcript: transcript(&state),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TurnSummary {
    pub turn: u64,
    pub final_text: String,
    pub steps_used: u32,
    pub media_ids: Vec<String>,
}

struct Upload {
    name: String,
    bytes: Vec<u8>,
}

async fn read_message(mut form: Multipart) -> Result<(String, Vec<Upload>), ApiError> {
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::BadRequest(e.to_string());
    let mut text = String::new();
    let mut uploads = Vec::new();
    while let Some(field) = form.next_field().await.map_err(bad)? {
        let file_name = field.file_name().map(str::to_string);
        let field_name = field.name().unwrap_or_default().to_string();
        match file_name {
            Some(name) => uploads.push(Upload {
                name,
                bytes: field.bytes().await.map_err(bad)?.to_vec(),
            }),
            None if field_name == "text" => text = field.text().await.map_err(bad)?,
            None => return Err(ApiError::BadRequest(format!("unexpected field {field_name:?}"))),
        }
    }
    if text.trim().is_empty() && uploads.is_empty() {
        return Err(ApiError::BadRequest("a message needs text or an attachment".into()));
    }
    Ok((text, uploads))
}

async fn post_message(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    form: Multipart,
) -> Result<Json<TurnSummary>, ApiError> {
    app.authorize(&headers)?;
    let slot = app.slot(&id)?;
    let (text, uploads) = read_message(form).await?;
    if slot
        .busy
        .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
        .is_err()
    {
        return Err(ApiError::Busy(format!("session {id} is already running a turn")));
    }

    let app2 = app.clone();
    let slot2 = slot.clone();
    tokio::task::spawn_blocking(move || run_turn_blocking(&app2, &slot2, &text, uploads))
        .await
        .map_err(|e| ApiError::Storage(e.to_string()))?
        .map(Json)
}

fn run_turn_blocking(app: &AppState, slot: &Slot, text: &str, uploads: Vec<Upload>) -> Result<TurnSummary, ApiError> {
    let _busy = BusyGuard(&slot.busy);
    let mut media: Vec<(String, MediaKind)> = Vec::new();
    for u in &uploads {
        let path = app.store.put_media(&u.bytes, &u.name)?;
        let path = path.to_string_lossy().to_string();
        if !media.iter().any(|(p, _)| *p == path) {
            let kind = MediaKind::from_path(&u.name);
            media.push((path, kind));
        }
    }

    let before = slot.state.read().expect("state lock").clone();
    let mut working = before.clone();
    {
        let mut feed = slot.feed.lock().expect("feed lock");
        feed.running = true;
        feed.events.clear();
    }
    let outcome = app
        .engine
        .run_turn(&mut working, text, &media, &mut |event| slot.publish(event));

    let finish = |message: Option<String>| {
        let mut feed = slot.feed.lock().expect("feed lock");
        feed.running = false;
        if let Some(m) = message {
            let _ = slot.live.send(Live::Aborted(m));
        }
    };

    let result = match outcome {
        Ok(r) => r,
        Err(e) => {
            finish(Some(e.to_string()));
            return Err(match e {
                TurnError::Backend(e) => ApiError::Backend(e.to_string()),
                other => ApiError::BadRequest(other.to_string()),
            });
        }
    };

    let mut records: Vec<Record> = working
        .media_handles()
        .filter(|h| before.media(&h.id).is_none())
        .map(|h| Record::Media { handle: h.clone() })
        .collect();
    records.extend(
        working.messages()[before.messages().len()..]
            .iter()
            .map(|m| Record::Message { message: m.clone() }),
    );
    records.push(Record::Turn {
        turn: working.turn_counter,
        trace: result.trace.clone(),
    });
    if let Err(e) = app.store.append(&working.session_id, &records) {
        finish(Some(e.to_string()));
        return Err(e.into());
    }

    let media_ids = media
        .iter()
        .filter_map(|(p, _)| working.media_by_path(p).map(|h| h.id.0.clone()))
        .collect();
    let turn = working.turn_counter;
    *slot.state.write().expect("state lock") = working;
    slot.turns.write().expect("turns lock").push(result.trace.clone());
    finish(None);
    Ok(TurnSummary {
        turn,
        final_text: result.final_text,
        steps_used: result.steps_used,
        media_ids,
    })
}

struct FeedState {
    replay: std::collections::VecDeque<TraceEvent>,
    rx: broadcast::Receiver<Live>,
    heartbeat_first: bool,
    done: bool,
}

fn sse_event(event: &TraceEvent) -> Event {
    Event::default()
        .event(event.kind().as_str())
        .id(event.step.to_string())
        .data(serde_json::to_string(event).expect("trace events serialize"))
}

async fn stream_events(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    app.authorize(&headers)?;
    let slot = app.slot(&id)?;
    let initial = {
        let feed = slot.feed.lock().expect("feed lock");
        let rx = slot.live.subscribe();
        FeedState {
            replay: if feed.running { feed.events.iter().cloned().collect() } else { Default::default() },
            rx,
            heartbeat_first: !feed.running,
            done: false,
        }
    };
    let events = stream::unfold(initial, |mut st| async move {
        if st.done {
            return None;
        }
        if st.heartbeat_first {
            st.heartbeat_first = false;
            return Some((Ok(Event::default().comment("heartbeat")), st));
        }
        loop {
            let event = match st.replay.pop_front() {
                Some(e) => e,
                None => match st.rx.recv().await {
                    Ok(Live::Event(e)) => e,
                    Ok(Live::Aborted(message)) => {
                        st.done = true;
                        return Some((Ok(Event::default().event("error").data(message)), st));
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return None,
                },
            };
            if event.kind() == TraceKind::FinalResponse {
                st.done = true;
            }
            return Some((Ok(sse_event(&event)), st));
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::new().interval(HEARTBEAT).text("heartbeat")))
}

#[derive(Debug, Deserialize)]
pub struct TraceQuery {
    pub turn: Option<usize>,
}

async fn get_trace(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<TraceQuery>,
) -> Result<Response, ApiError> {
    app.authorize(&headers)?;
    let slot = app.slot(&id)?;
    let turns = slot.turns.read().expect("turns lock");
    let body = match q.turn {
        Some(n) => {
            let trace = n
                .checked_sub(1)
                .and_then(|i| turns.get(i))
                .ok_or_else(|| ApiError::BadRequest(format!("session has {} turns, not {n}", turns.len())))?;
            export_trace(trace)
        }
        None => turns.iter().map(|t| export_trace(t)).collect(),
    };
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
