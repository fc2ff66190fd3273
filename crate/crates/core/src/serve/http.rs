use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::corpus::{normalize_whitespace, Turn};
use crate::generate::{generate_reply, ChatSession, GenerateError, SamplerConfig};
use crate::model::InferenceModel;
use crate::tokenizer::Vocabulary;

use super::ServeError;

pub const MIN_TEMPERATURE: f64 = 0.05;
pub const MAX_TEMPERATURE: f64 = 5.0;

/// A checkpoint ready to serve.
pub struct LoadedModel {
    pub model: InferenceModel<f32>,
    pub vocab: Vocabulary,
    pub source: String,
    pub parameters: usize,
    pub quantized: bool,
}

impl LoadedModel {
    pub fn from_checkpoint(ck: &Checkpoint<f32>, source: impl Into<String>) -> Result<Self, ServeError> {
        Ok(Self {
            model: InferenceModel::new(&ck.state)?,
            vocab: ck.vocab.clone(),
            source: source.into(),
            parameters: ck.state.parameter_count() + ck.state.adapter_parameter_count(),
            quantized: ck.state.is_quantized(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ServeError> {
        let ck = Checkpoint::<f32>::load(path)?;
        Self::from_checkpoint(&ck, path.display().to_string())
    }
}

struct Slot {
    session: ChatSession,
    busy: bool,
}

/// Shared service state.
pub struct AppState {
    model: Option<Arc<LoadedModel>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Slot>>>>,
    max_sessions: usize,
    default_seed: u64,
    request_log: Option<Mutex<File>>,
    transcript_dir: Option<PathBuf>,
    reply_delay: Duration,
}

impl AppState {
    pub fn new(model: Option<LoadedModel>) -> Self {
        Self {
            model: model.map(Arc::new),
            sessions: Mutex::new(HashMap::new()),
            max_sessions: 64,
            default_seed: 0,
            request_log: None,
            transcript_dir: None,
            reply_delay: Duration::ZERO,
        }
    }

    pub fn max_sessions(mut self, n: usize) -> Self {
        self.max_sessions = n;
        self
    }

    /// Seed for sessions created without one.
    pub fn default_seed(mut self, seed: u64) -> Self {
        self.default_seed = seed;
        self
    }

    /// Appends one JSON line per request to `path`.
    pub fn request_log(mut self, path: &Path) -> Result<Self, ServeError> {
        let f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| ServeError::io(path, e))?;
        self.request_log = Some(Mutex::new(f));
        Ok(self)
    }

    /// Appends every turn to `{dir}/{session_id}.jsonl`.
    pub fn transcript_dir(mut self, dir: &Path) -> Result<Self, ServeError> {
        std::fs::create_dir_all(dir).map_err(|e| ServeError::io(dir, e))?;
        self.transcript_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    /// Every reply takes at least this long. Lets clients observe the busy state.
    pub fn reply_delay(mut self, d: Duration) -> Self {
        self.reply_delay = d;
        self
    }

    fn log(&self, line: Value) {
        if let Some(f) = &self.request_log {
            let mut f = f.lock().expect("log lock");
            let _ = writeln!(f, "{line}");
        }
    }

    fn persist(&self, session_id: &str, turns: &[Turn]) {
        let Some(dir) = &self.transcript_dir else {
            return;
        };
        let path = dir.join(format!("{session_id}.jsonl"));
        let written = OpenOptions::new().create(true).append(true).open(&path).and_then(|mut f| {
            for t in turns {
                writeln!(f, "{}", serde_json::to_string(t).expect("turn serializes"))?;
            }
            Ok(())
        });
        if let Err(e) = written {
            tracing::warn!(path = %path.display(), error = %e, "transcript write failed");
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session {id}"))
    }

    fn unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "ModelUnavailable", "no model is loaded")
    }

    fn bad(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.message, "code": self.code});
        let mut resp = (self.status, Json(body)).into_response();
        resp.extensions_mut().insert(LogFields(json!({"error": self.code})));
        resp
    }
}

/// Extra fields a handler wants in its request-log line.
#[derive(Clone)]
struct LogFields(Value);

fn with_log(resp: impl IntoResponse, fields: Value) -> Response {
    let mut r = resp.into_response();
    r.extensions_mut().insert(LogFields(fields));
    r
}

/// Per-request sampler settings. Values outside the allowed ranges are clamped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerOverrides {
    pub k: Option<usize>,
    pub temperature: Option<f64>,
    pub max_new_tokens: Option<usize>,
}

impl SamplerOverrides {
    fn apply(&self, mut s: SamplerConfig, vocab_size: usize, context_len: usize) -> Result<SamplerConfig, ApiError> {
        if let Some(k) = self.k {
            s.k = k.clamp(1, vocab_size);
        }
        if let Some(t) = self.temperature {
            if !t.is_finite() {
                return Err(ApiError::bad("InvalidOverrides", "temperature must be finite"));
            }
            s.temperature = t.clamp(MIN_TEMPERATURE, MAX_TEMPERATURE);
        }
        if let Some(n) = self.max_new_tokens {
            s.max_new_tokens = n.clamp(1, context_len);
        }
        Ok(s)
    }

    fn to_log(&self) -> Value {
        json!({"k": self.k, "temperature": self.temperature, "max_new_tokens": self.max_new_tokens})
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct SessionRequest {
    #[serde(flatten)]
    pub overrides: SamplerOverrides,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Deserialize)]
pub struct ChatRequest {
    pub session_id: String,
    pub message: String,
    #[serde(flatten)]
    pub overrides: SamplerOverrides,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatResponse {
    pub session_id: String,
    pub reply: String,
    /// Index of the reply in the transcript.
    pub turn_index: usize,
    pub elapsed_ms: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub created_at: u64,
    pub turns: Vec<Turn>,
}

fn parse_json<T: serde::de::DeserializeOwned>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v).map_err(|e| ApiError::bad("BadRequest", e.body_text()))
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: SessionRequest = if body.iter().all(u8::is_ascii_whitespace) {
        SessionRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad("BadRequest", e.to_string()))?
    };
    let model = app.model.clone().ok_or_else(ApiError::unavailable)?;
    let base = SamplerConfig {
        seed: req.seed.unwrap_or(app.default_seed),
        ..Default::default()
    };
    let sampler = req.overrides.apply(base, model.vocab.len(), model.model.config().context_len)?;
    let id = uuid::Uuid::new_v4().to_string();
    {
        let mut sessions = app.sessions.lock().expect("sessions lock");
        if sessions.len() >= app.max_sessions {
            return Err(ApiError::new(
                StatusCode::TOO_MANY_REQUESTS,
                "TooManySessions",
                format!("session limit {} reached", app.max_sessions),
            ));
        }
        let slot = Slot {
            session: ChatSession::new(id.clone(), sampler.clone()),
            busy: false,
        };
        sessions.insert(id.clone(), Arc::new(Mutex::new(slot)));
    }
    let log = json!({"session_id": id, "overrides": req.overrides.to_log(), "seed": sampler.seed});
    Ok(with_log(
        (StatusCode::CREATED, Json(SessionCreated { session_id: id, sampler })),
        log,
    ))
}

/// Clears the busy flag however the request ends.
struct BusyGuard(Arc<Mutex<Slot>>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        if let Ok(mut s) = self.0.lock() {
            s.busy = false;
        }
    }
}

async fn chat(State(app): State<Arc<AppState>>, body: Result<Json<ChatRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let req = parse_json(body)?;
    let model = app.model.clone().ok_or_else(ApiError::unavailable)?;
    let slot = app
        .sessions
        .lock()
        .expect("sessions lock")
        .get(&req.session_id)
        .cloned()
        .ok_or_else(|| ApiError::unknown_session(&req.session_id))?;
    let message = normalize_whitespace(&req.message);
    if message.is_empty() {
        return Err(ApiError::bad("EmptyMessage", "message is empty"));
    }
    let (snapshot, sampler) = {
        let mut s = slot.lock().expect("slot lock");
        if s.busy {
            return Err(ApiError::new(StatusCode::CONFLICT, "SessionBusy", "session is generating a reply"));
        }
        let sampler = req
            .overrides
            .apply(s.session.sampler.clone(), model.vocab.len(), model.model.config().context_len)?;
        s.busy = true;
        (s.session.clone(), sampler)
    };
    let guard = BusyGuard(slot.clone());
    let started = Instant::now();
    let worker = {
        let model = model.clone();
        let mut session = snapshot;
        session.sampler = sampler.clone();
        tokio::task::spawn_blocking(move || {
            generate_reply(&model.model, &model.vocab, &mut session, &message).map(|reply| (reply, session))
        })
    };
    let result = worker.await.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?;
    if let Some(rest) = app.reply_delay.checked_sub(started.elapsed()) {
        tokio::time::sleep(rest).await;
    }
    let (reply, updated) = result.map_err(|e| match e {
        GenerateError::EmptyMessage => ApiError::bad("EmptyMessage", e.to_string()),
        GenerateError::MessageTooLong { .. } => ApiError::bad("MessageTooLong", e.to_string()),
        GenerateError::InvalidSampler(_) => ApiError::bad("InvalidOverrides", e.to_string()),
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", other.to_string()),
    })?;
    let turn_index = {
        let mut s = slot.lock().expect("slot lock");
        let new_turns = updated.turns[s.session.turns.len()..].to_vec();
        s.session.turns.extend(new_turns.iter().cloned());
        app.persist(&req.session_id, &new_turns);
        s.session.turns.len() - 1
    };
    drop(guard);
    let elapsed_ms = started.elapsed().as_millis() as u64;
    let log = json!({
        "session_id": req.session_id,
        "overrides": req.overrides.to_log(),
        "sampler": {"k": sampler.k, "temperature": sampler.temperature, "max_new_tokens": sampler.max_new_tokens},
        "turn_index": turn_index,
    });
    Ok(with_log(
        Json(ChatResponse {
            session_id: req.session_id,
            reply,
            turn_index,
            elapsed_ms,
        }),
        log,
    ))
}

async fn transcript(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Transcript>, ApiError> {
    let slot = app
        .sessions
        .lock()
        .expect("sessions lock")
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::unknown_session(&id))?;
    let s = slot.lock().expect("slot lock");
    Ok(Json(Transcript {
        session_id: id,
        created_at: s.session.created_at,
        turns: s.session.turns.clone(),
    }))
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Value> {
    let sessions = app.sessions.lock().expect("sessions lock").len();
    Json(match &app.model {
        Some(m) => json!({
            "status": "ok",
            "model_loaded": true,
            "checkpoint": m.source,
            "vocab_size": m.vocab.len(),
            "parameters": m.parameters,
            "quantized": m.quantized,
            "context_len": m.model.config().context_len,
            "sessions": sessions,
        }),
        None => json!({"status": "no-model", "model_loaded": false, "sessions": sessions}),
    })
}

async fn log_requests(State(app): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let method = req.method().to_string();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let resp = next.run(req).await;
    if app.request_log.is_some() {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        let mut line = json!({
            "ts_ms": ts,
            "method": method,
            "path": path,
            "status": resp.status().as_u16(),
            "elapsed_ms": started.elapsed().as_millis() as u64,
        });
        if let (Some(LogFields(Value::Object(extra))), Value::Object(obj)) = (resp.extensions().get::<LogFields>(), &mut line) {
            obj.extend(extra.clone());
        }
        app.log(line);
    }
    resp
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}", get(transcript))
        .route("/api/chat", post(chat))
        .route("/api/health", get(health))
        .layer(middleware::from_fn_with_state(state.clone(), log_requests))
        .with_state(state)
}

/// Serves `state` on `listener` until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> Result<(), ServeError> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServeError::Http(e.to_string()))
}
