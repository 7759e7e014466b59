//! HTTP API over a single session.
//!
//! Embedding sets and groupings are loaded once and never change. Log appends
//! go through one async mutex, so they are serialized and each POST either
//! lands all its entries or none. Readers work from the latest committed
//! snapshot of the log and never wait on a writer.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dsattr_core::selection::{recommend, DecisionLog, LadderOutcome};
use dsattr_core::{ClassGrouping, ColorChoice, ColorMode, Error, Procedure};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::config::SetKey;
use crate::error::{Failure, Outcome};
use crate::workspace::{
    self, choose_color, evaluate, record_ladder, working_color, working_grouping, LogStore, Workspace,
};

pub struct Session {
    ws: Workspace,
    writer: Mutex<LogStore>,
    snapshot: RwLock<Arc<DecisionLog<f64>>>,
}

impl Session {
    pub fn new(ws: Workspace, store: LogStore) -> Arc<Self> {
        let snapshot = RwLock::new(Arc::new(store.log().clone()));
        Arc::new(Self {
            ws,
            writer: Mutex::new(store),
            snapshot,
        })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    /// Latest committed log.
    pub fn log(&self) -> Arc<DecisionLog<f64>> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Runs `f` under the writer lock after checking the caller's view of the
    /// log is current, then publishes the new snapshot.
    async fn append<R>(
        &self,
        expected_len: Option<usize>,
        f: impl FnOnce(&mut DecisionLog<f64>) -> dsattr_core::Result<R>,
    ) -> Result<R, ApiError> {
        let mut store = self.writer.lock().await;
        let actual = store.log().len();
        if let Some(expected) = expected_len {
            if expected != actual {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "log_conflict",
                    format!("log has {actual} entries, request expected {expected}; reload and retry"),
                ));
            }
        }
        let out = store.commit(f)?;
        *self.snapshot.write().expect("snapshot lock") = Arc::new(store.log().clone());
        Ok(out)
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error,
                message: message.into(),
                field: None,
            },
        }
    }

    fn field(mut self, field: impl Into<String>) -> Self {
        self.body.field = Some(field.into());
        self
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::UnknownClass(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_class"),
            Error::State(_) => (StatusCode::PRECONDITION_FAILED, "precondition_failed"),
            Error::Io { .. } | Error::Checksum { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            _ => (StatusCode::BAD_REQUEST, "invalid_request"),
        };
        let field = match &e {
            Error::UnknownClass(c) => Some(format!("grouping.mapping.{c}")),
            _ => None,
        };
        let mut err = ApiError::new(status, code, e.to_string());
        err.body.field = field;
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Parses a JSON body, naming the offending field on failure.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        let err = ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", message);
        if path == "." {
            err
        } else {
            err.field(path)
        }
    })
}

type ApiResult<T> = Result<Json<T>, ApiError>;

impl Session {
    fn key(&self, config: Option<&str>) -> Result<SetKey, ApiError> {
        let key = match config {
            Some(c) => c.parse::<SetKey>().map_err(|e| ApiError::from(e).field("config"))?,
            None => self.ws.default_key()?,
        };
        if !self.ws.sets.contains_key(&key) {
            return Err(ApiError::not_found(format!("no embedding set registered for `{key}`")));
        }
        Ok(key)
    }

    fn named_grouping(&self, name: Option<&str>, log: &DecisionLog<f64>, key: SetKey) -> Result<ClassGrouping, ApiError> {
        match name {
            Some(n) => self
                .ws
                .grouping(n, log)
                .map_err(|e| ApiError::not_found(e.to_string()).field("grouping")),
            None => Ok(working_grouping(log, self.ws.set(key)?)),
        }
    }
}

#[derive(Serialize)]
struct ClassRow {
    class_id: String,
    size: usize,
}

#[derive(Serialize)]
struct ClassesResponse {
    config: String,
    classes: Vec<ClassRow>,
    configs: Vec<String>,
    groupings: Vec<String>,
    log_len: usize,
}

async fn classes(State(s): State<Arc<Session>>) -> ApiResult<ClassesResponse> {
    let key = s.ws.default_key()?;
    let log = s.log();
    let classes = s
        .ws
        .set(key)?
        .class_counts()
        .into_iter()
        .map(|(class_id, size)| ClassRow { class_id, size })
        .collect();
    Ok(Json(ClassesResponse {
        config: key.to_string(),
        classes,
        configs: s.ws.sets.keys().map(SetKey::to_string).collect(),
        groupings: s.ws.grouping_names(&log),
        log_len: log.len(),
    }))
}

#[derive(Deserialize)]
struct ReportQuery {
    config: Option<String>,
    grouping: Option<String>,
}

async fn report(State(s): State<Arc<Session>>, Query(q): Query<ReportQuery>) -> Response {
    let run = || -> Result<_, ApiError> {
        let key = s.key(q.config.as_deref())?;
        let log = s.log();
        // A grouping named in a three-part config key applies when none is given.
        let from_key = q.config.as_deref().and_then(|c| {
            let parts: Vec<&str> = c.split('/').collect();
            (parts.len() == 3).then(|| parts[0])
        });
        let name = q.grouping.as_deref().or(from_key).unwrap_or(dsattr_core::grouping::IDENTITY);
        let g = s.named_grouping(Some(name), &log, key)?;
        Ok(Json(workspace::report(s.ws.set(key)?, &g)?))
    };
    run().into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateRequest {
    grouping: ClassGrouping,
    #[serde(default)]
    config: Option<String>,
    #[serde(default)]
    expected_log_len: Option<usize>,
}

async fn evaluate_grouping(State(s): State<Arc<Session>>, body: Bytes) -> Response {
    let run = async {
        let req: EvaluateRequest = parse_body(&body)?;
        let key = s.key(req.config.as_deref())?;
        req.grouping
            .check()
            .map_err(|e| ApiError::from(e).field("grouping"))?;
        let set = s.ws.set(key)?;
        s.append(req.expected_log_len, |log| {
            evaluate(log, set, key, &req.grouping, s.ws.thresholds())
        })
        .await
        .map_err(|e| match e.body.error {
            "invalid_request" if e.body.field.is_none() => e.field("grouping"),
            _ => e,
        })
        .map(Json)
    };
    run.await.into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ColorRequest {
    #[serde(default)]
    grouping: Option<String>,
    #[serde(default)]
    resolution: Option<u32>,
    #[serde(default)]
    per_class: bool,
    #[serde(default)]
    expected_log_len: Option<usize>,
}

async fn select_color(State(s): State<Arc<Session>>, body: Bytes) -> Response {
    let run = async {
        let req: ColorRequest = parse_body(&body)?;
        let res = match req.resolution {
            Some(r) => r,
            None => s
                .ws
                .sets
                .keys()
                .filter(|k| k.mode == ColorMode::Color)
                .filter(|k| s.ws.sets.contains_key(&SetKey::new(ColorMode::Gray, k.resolution)))
                .map(|k| k.resolution)
                .max()
                .ok_or_else(|| ApiError::not_found("no resolution has both a color and a gray set"))?,
        };
        let color = s.ws.sets.get(&SetKey::new(ColorMode::Color, res));
        let gray = s.ws.sets.get(&SetKey::new(ColorMode::Gray, res));
        let (Some(color), Some(gray)) = (color, gray) else {
            return Err(ApiError::not_found(format!("need both color/{res} and gray/{res} sets")));
        };
        let log = s.log();
        let g = s.named_grouping(req.grouping.as_deref(), &log, SetKey::new(ColorMode::Color, res))?;
        s.append(req.expected_log_len, |log| {
            choose_color(log, color, gray, &g, res, req.per_class)
        })
        .await
        .map(Json)
    };
    run.await.into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LadderRequest {
    #[serde(default)]
    grouping: Option<String>,
    #[serde(default)]
    mode: Option<String>,
    #[serde(default)]
    expected_log_len: Option<usize>,
}

impl Session {
    /// Ladder over registered sets, without touching the log.
    fn ladder(
        &self,
        grouping: Option<&str>,
        mode: Option<&str>,
        log: &DecisionLog<f64>,
    ) -> Result<(LadderOutcome<f64>, ColorChoice), ApiError> {
        let working = working_color(log);
        let mode: ColorMode = match mode {
            Some(m) => m.parse().map_err(|e| ApiError::from(e).field("mode"))?,
            None => working.network_mode(),
        };
        let choice = if working.network_mode() == mode { working } else { mode.into() };
        let mut sets = BTreeMap::new();
        let rungs = self.ws.ladder_resolutions(mode);
        for &r in &rungs {
            let key = SetKey::new(mode, r);
            let set = self
                .ws
                .sets
                .get(&key)
                .ok_or_else(|| ApiError::not_found(format!("resolution ladder: no embedding set registered for `{key}`")))?;
            sets.insert(r, set.clone());
        }
        let first = *rungs.first().ok_or_else(|| ApiError::not_found("no ladder resolutions"))?;
        let g = self.named_grouping(grouping, log, SetKey::new(mode, first))?;
        let scales = self.ws.class_max_scale(&g)?;
        let outcome = workspace::ladder(&rungs, &sets, &g, scales.as_ref(), self.ws.thresholds())?;
        Ok((outcome, choice))
    }
}

#[derive(Deserialize)]
struct LadderQuery {
    grouping: Option<String>,
    mode: Option<String>,
}

async fn ladder(State(s): State<Arc<Session>>, Query(q): Query<LadderQuery>) -> Response {
    let log = s.log();
    s.ladder(q.grouping.as_deref(), q.mode.as_deref(), &log)
        .map(|(outcome, _)| Json(outcome))
        .into_response()
}

async fn select_ladder(State(s): State<Arc<Session>>, body: Bytes) -> Response {
    let run = async {
        let req: LadderRequest = parse_body(&body)?;
        let log = s.log();
        let (outcome, choice) = s.ladder(req.grouping.as_deref(), req.mode.as_deref(), &log)?;
        s.append(req.expected_log_len, |log| {
            Ok(record_ladder(log, outcome, choice, s.ws.thresholds()))
        })
        .await
        .map(Json)
    };
    run.await.into_response()
}

#[derive(Serialize)]
struct LogResponse<'a> {
    len: usize,
    best: BTreeMap<&'static str, u64>,
    entries: &'a [dsattr_core::selection::LogEntry<f64>],
}

async fn log(State(s): State<Arc<Session>>) -> Response {
    let log = s.log();
    let best = Procedure::ALL
        .into_iter()
        .filter_map(|p| log.best(p).map(|e| (p.as_str(), e.seq)))
        .collect();
    Json(LogResponse {
        len: log.len(),
        best,
        entries: log.entries(),
    })
    .into_response()
}

async fn recommendation(State(s): State<Arc<Session>>) -> Response {
    let run = || -> Result<_, ApiError> {
        let log = s.log();
        log.ensure_complete()?;
        let annotations = s
            .ws
            .annotations
            .as_deref()
            .ok_or_else(|| ApiError::from(Error::State("no annotations configured for this session".into())))?;
        Ok(Json(recommend(&log, annotations, s.ws.model.as_ref(), s.ws.thresholds())?))
    };
    run().into_response()
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/api/classes", get(classes))
        .route("/api/report", get(report))
        .route("/api/grouping/evaluate", post(evaluate_grouping))
        .route("/api/color/select", post(select_color))
        .route("/api/ladder", get(ladder))
        .route("/api/ladder/select", post(select_ladder))
        .route("/api/log", get(log))
        .route("/api/recommendation", get(recommendation))
        .with_state(session)
}

/// Binds and serves until interrupted.
pub fn serve(ws: Workspace, store: LogStore, bind: &str) -> Outcome<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Failure::internal)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| Error::io(format!("bind address {bind}"), e))?;
        eprintln!("serving on http://{}", listener.local_addr().map_err(Failure::internal)?);
        axum::serve(listener, router(Session::new(ws, store)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(Failure::internal)
    })
}
