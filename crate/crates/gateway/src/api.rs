//! REST and WebSocket handlers.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use neuron_core::engine::load_graph;
use neuron_core::metrics::{Baseline, CalibrationOptions, CalibrationSamples, MetricError, Phase};
use serde::Deserialize;
use serde_json::{json, Value as JsonValue};
use thiserror::Error;
use tokio::sync::broadcast::error::RecvError;

use crate::host::{Calibration, CommandError, EngineHost};

/// A WebSocket client whose socket stays unwritable this long is disconnected.
const SEND_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("a calibration session for {0} is already active")]
    Busy(String),
    #[error("no calibration session is active")]
    NoSession,
    #[error("calibration is missing samples for the {0} phase")]
    IncompleteCalibration(&'static str),
    #[error("the engine is not running")]
    NotRunning,
    #[error("no metric node named {0}")]
    UnknownMetric(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("could not persist baseline: {0}")]
    Io(#[from] std::io::Error),
}

/// Error body: `{"error": message, "code": short name}`.
pub struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.2, "code": self.1 }))).into_response()
    }
}

impl From<CommandError> for ApiError {
    fn from(e: CommandError) -> Self {
        let (status, code) = match &e {
            CommandError::NoGraph => (StatusCode::CONFLICT, "no_graph"),
            CommandError::Running => (StatusCode::CONFLICT, "running"),
            CommandError::AlreadyRunning => (StatusCode::CONFLICT, "already_running"),
            CommandError::UnknownNode(_) => (StatusCode::NOT_FOUND, "unknown_node"),
            CommandError::NotTrigger(_) => (StatusCode::BAD_REQUEST, "not_trigger"),
            CommandError::Engine(_) => (StatusCode::BAD_REQUEST, "engine"),
            CommandError::Gone => (StatusCode::SERVICE_UNAVAILABLE, "engine_gone"),
        };
        ApiError(status, code, e.to_string())
    }
}

impl From<CalibrationError> for ApiError {
    fn from(e: CalibrationError) -> Self {
        let (status, code) = match &e {
            CalibrationError::Busy(_) => (StatusCode::CONFLICT, "busy"),
            CalibrationError::NoSession => (StatusCode::CONFLICT, "no_session"),
            CalibrationError::IncompleteCalibration(_) => (StatusCode::UNPROCESSABLE_ENTITY, "incomplete_calibration"),
            CalibrationError::NotRunning => (StatusCode::CONFLICT, "not_running"),
            CalibrationError::UnknownMetric(_) => (StatusCode::NOT_FOUND, "unknown_metric"),
            CalibrationError::Metric(_) => (StatusCode::UNPROCESSABLE_ENTITY, "metric"),
            CalibrationError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        ApiError(status, code, e.to_string())
    }
}

type ApiResult = Result<Json<JsonValue>, ApiError>;

#[derive(Clone)]
pub(crate) struct App {
    pub host: Arc<EngineHost>,
    pub token: Option<String>,
}

pub(crate) fn router(app: App) -> Router {
    Router::new()
        .route("/api/status", get(status))
        .route("/api/graph", post(graph))
        .route("/api/start", post(start))
        .route("/api/stop", post(stop))
        .route("/api/threshold", post(threshold))
        .route("/api/events", get(events))
        .route("/api/calibration/{action}", post(calibration))
        .route("/api/baselines", get(baselines))
        .route("/ws", get(ws))
        .route_layer(middleware::from_fn_with_state(app.clone(), auth))
        .with_state(app)
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

async fn auth(State(app): State<App>, Query(q): Query<TokenQuery>, req: Request, next: Next) -> Response {
    let Some(expected) = &app.token else {
        return next.run(req).await;
    };
    let bearer = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let ok = bearer == Some(expected.as_str()) || (req.uri().path() == "/ws" && q.token.as_ref() == Some(expected));
    if ok {
        next.run(req).await
    } else {
        ApiError(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token".into()).into_response()
    }
}

async fn status(State(app): State<App>) -> Json<JsonValue> {
    Json(app.host.state().status_json())
}

async fn graph(State(app): State<App>, body: String) -> ApiResult {
    let g = load_graph(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, "graph", e.to_string()))?;
    let nodes = g.nodes.len();
    let id = app.host.load(g).await?;
    Ok(Json(json!({ "graph": id, "nodes": nodes })))
}

async fn start(State(app): State<App>) -> ApiResult {
    app.host.start().await?;
    Ok(Json(json!({ "running": true })))
}

async fn stop(State(app): State<App>) -> ApiResult {
    app.host.stop().await?;
    Ok(Json(json!({ "running": false })))
}

#[derive(Deserialize)]
struct ThresholdBody {
    node: String,
    value: f64,
}

async fn threshold(State(app): State<App>, Json(b): Json<ThresholdBody>) -> ApiResult {
    if !b.value.is_finite() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "value", "threshold must be finite".into()));
    }
    app.host.set_threshold(b.node.clone(), b.value).await?;
    Ok(Json(json!({ "node": b.node, "value": b.value })))
}

#[derive(Deserialize)]
struct Since {
    since: Option<u64>,
}

/// Events with id greater than `since`, oldest first.
async fn events(State(app): State<App>, Query(q): Query<Since>) -> Json<JsonValue> {
    let st = app.host.state();
    let since = q.since.unwrap_or(0);
    let list: Vec<_> = st.events.iter().filter(|e| e.id > since).collect();
    let last = st.events.last().map_or(0, |e| e.id);
    Json(json!({ "events": list, "last": last }))
}

#[derive(Deserialize, Default)]
struct MetricBody {
    metric: Option<String>,
}

async fn calibration(State(app): State<App>, Path(action): Path<String>, body: Option<Json<MetricBody>>) -> ApiResult {
    let metric = body.and_then(|b| b.0.metric);
    match action.as_str() {
        "start_low" => begin(&app, metric, Phase::Low),
        "start_high" => begin(&app, metric, Phase::High),
        "finish" => finish(&app).await,
        "cancel" => {
            app.host.state().calibration = None;
            app.host.publish(json!({ "type": "calibration", "phase": "idle" }));
            Ok(Json(crate::host::Calibration::idle_json()))
        }
        other => Err(ApiError(
            StatusCode::NOT_FOUND,
            "unknown_action",
            format!("unknown calibration action {other:?}"),
        )),
    }
}

fn begin(app: &App, metric: Option<String>, phase: Phase) -> ApiResult {
    let mut st = app.host.state();
    if !st.running {
        return Err(CalibrationError::NotRunning.into());
    }
    if let Some(cal) = &mut st.calibration {
        let same = metric.as_ref().is_none_or(|m| *m == cal.metric);
        if phase == Phase::High && cal.phase == Phase::Low && same {
            cal.phase = Phase::High;
            return Ok(Json(cal.to_json()));
        }
        return Err(CalibrationError::Busy(cal.metric.clone()).into());
    }
    let metrics = st.metric_nodes();
    let metric = match metric {
        Some(m) => m,
        None if metrics.len() == 1 => metrics[0].clone(),
        None => {
            return Err(ApiError(StatusCode::BAD_REQUEST, "metric", "name the metric node to calibrate".into()));
        }
    };
    if !metrics.contains(&metric) {
        return Err(CalibrationError::UnknownMetric(metric).into());
    }
    let cal = Calibration {
        metric,
        phase,
        samples: CalibrationSamples::default(),
    };
    let body = cal.to_json();
    st.calibration = Some(cal);
    Ok(Json(body))
}

async fn finish(app: &App) -> ApiResult {
    let (cal, remaps) = {
        let st = app.host.state();
        let cal = st.calibration.clone().ok_or(CalibrationError::NoSession)?;
        if cal.samples.low.is_empty() {
            return Err(CalibrationError::IncompleteCalibration("low").into());
        }
        if cal.samples.high.is_empty() {
            return Err(CalibrationError::IncompleteCalibration("high").into());
        }
        let remaps = st.remaps_of(&cal.metric);
        (cal, remaps)
    };
    let baseline = cal
        .samples
        .baseline(&cal.metric, &CalibrationOptions::default())
        .map_err(CalibrationError::from)?;
    let paths = persist(app, &cal, &baseline).map_err(CalibrationError::from)?;
    app.host.state().calibration = None;
    let applied = if remaps.is_empty() {
        Vec::new()
    } else {
        app.host.apply_baseline(remaps.clone(), baseline.clone()).await?;
        remaps
    };
    app.host.publish(json!({ "type": "calibration", "phase": "idle", "metric": cal.metric }));
    Ok(Json(json!({
        "baseline": baseline,
        "path": paths.0,
        "samples_path": paths.1,
        "applied_to": applied,
    })))
}

fn persist(app: &App, cal: &Calibration, b: &Baseline) -> std::io::Result<(String, String)> {
    let dir = app.host.out_dir.join("baselines");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.json", cal.metric));
    let samples = dir.join(format!("{}.samples.csv", cal.metric));
    std::fs::write(&path, b.to_json())?;
    std::fs::write(&samples, cal.samples.to_csv())?;
    Ok((path.display().to_string(), samples.display().to_string()))
}

async fn baselines(State(app): State<App>) -> ApiResult {
    let dir = app.host.out_dir.join("baselines");
    let mut out = Vec::new();
    if let Ok(entries) = std::fs::read_dir(&dir) {
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()))?;
            match Baseline::from_json(&text) {
                Ok(b) => out.push(b),
                Err(e) => log::warn!("skipping {}: {e}", p.display()),
            }
        }
    }
    Ok(Json(json!({ "baselines": out })))
}

async fn ws(State(app): State<App>, upgrade: WebSocketUpgrade) -> Response {
    let rx = app.host.subscribe();
    upgrade.on_upgrade(move |socket| client(socket, rx))
}

async fn client(mut socket: WebSocket, mut rx: tokio::sync::broadcast::Receiver<String>) {
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    match tokio::time::timeout(SEND_TIMEOUT, socket.send(Message::Text(text.into()))).await {
                        Ok(Ok(())) => {}
                        _ => break,
                    }
                }
                Err(RecvError::Lagged(n)) => {
                    log::info!("dropping WebSocket client {n} messages behind");
                    break;
                }
                Err(RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}
