//! HTTP/1.1 JSON API and the line-delimited live stream.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use futures::StreamExt;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tokio_stream::wrappers::BroadcastStream;

use super::{Gateway, RelayRequestMode};
use crate::analytics::comfort::{ComfortBand, ComfortBands};
use crate::analytics::{FeedbackError, FeedbackRecord};
use crate::automation::RelayError;
use crate::model::{parse_ts, Metric};
use crate::tstore::{QueryRange, StoreError};

type Params = Query<BTreeMap<String, String>>;

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, msg.into())
    }

    fn not_found(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::NOT_FOUND, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(_) => ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            other => ApiError::bad(other.to_string()),
        }
    }
}

impl From<RelayError> for ApiError {
    fn from(e: RelayError) -> Self {
        let code = match e {
            RelayError::UnknownRelay(_) => StatusCode::NOT_FOUND,
            RelayError::ManualConflict { .. } => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(code, e.to_string())
    }
}

type ApiResult = Result<Response, ApiError>;

fn body<T: DeserializeOwned>(b: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(b).map_err(|e| ApiError::bad(format!("malformed body: {e}")))
}

fn ts_param(q: &BTreeMap<String, String>, key: &str) -> Result<Option<DateTime<Utc>>, ApiError> {
    q.get(key)
        .map(|s| parse_ts(s).ok_or_else(|| ApiError::bad(format!("bad timestamp for {key}: {s}"))))
        .transpose()
}

fn metric_param(q: &BTreeMap<String, String>) -> Result<Option<Metric>, ApiError> {
    q.get("metric")
        .map(|s| s.parse::<Metric>().map_err(|e| ApiError::bad(e.to_string())))
        .transpose()
}

fn room_param(gw: &Gateway, q: &BTreeMap<String, String>) -> Result<String, ApiError> {
    let room = q.get("room").ok_or_else(|| ApiError::bad("missing room"))?;
    if !gw.has_room(room) {
        return Err(ApiError::not_found(format!("unknown room {room}")));
    }
    Ok(room.clone())
}

async fn devices(State(gw): State<Arc<Gateway>>) -> ApiResult {
    Ok(Json(gw.devices()).into_response())
}

async fn readings(State(gw): State<Arc<Gateway>>, Query(q): Params) -> ApiResult {
    let from = ts_param(&q, "from")?.unwrap_or(DateTime::<Utc>::MIN_UTC);
    let to = ts_param(&q, "to")?.unwrap_or(DateTime::<Utc>::MAX_UTC);
    let mut range = QueryRange::new(from, to)?;
    if let Some(d) = q.get("device") {
        if !gw.devices().iter().any(|v| &v.entry.descriptor.device_id == d) && !gw.store().rooms().contains_key(d) {
            return Err(ApiError::not_found(format!("unknown device {d}")));
        }
        range = range.device(d.clone());
    }
    if let Some(m) = metric_param(&q)? {
        range = range.metric(m);
    }
    Ok(Json(gw.store().query(&range)?).into_response())
}

async fn latest(State(gw): State<Arc<Gateway>>, Query(q): Params) -> ApiResult {
    let room = room_param(&gw, &q)?;
    Ok(Json(gw.latest(&room)).into_response())
}

async fn comfort(State(gw): State<Arc<Gateway>>, Query(q): Params) -> ApiResult {
    let room = room_param(&gw, &q)?;
    let now = gw.clock().now_secs();
    let to = ts_param(&q, "to")?.unwrap_or(now + chrono::Duration::seconds(1));
    let from = ts_param(&q, "from")?.unwrap_or(to - chrono::Duration::hours(24));
    Ok(Json(gw.comfort(&room, from, to)?).into_response())
}

async fn occupancy(State(gw): State<Arc<Gateway>>, Query(q): Params) -> ApiResult {
    let room = room_param(&gw, &q)?;
    Ok(Json(gw.occupancy(&room)).into_response())
}

async fn predictions(State(gw): State<Arc<Gateway>>, Query(q): Params) -> ApiResult {
    let room = room_param(&gw, &q)?;
    let metric = metric_param(&q)?.ok_or_else(|| ApiError::bad("missing metric"))?;
    let hours: Vec<_> = gw
        .predictions(&room, metric)
        .into_iter()
        .map(|(hour, value)| json!({ "hour": hour, "value": value }))
        .collect();
    Ok(Json(json!({ "room": room, "metric": metric, "hours": hours })).into_response())
}

async fn stream(State(gw): State<Arc<Gateway>>, Query(q): Params) -> ApiResult {
    let room = q.get("room").cloned();
    if let Some(r) = &room {
        if !gw.has_room(r) {
            return Err(ApiError::not_found(format!("unknown room {r}")));
        }
    }
    let lines = BroadcastStream::new(gw.subscribe()).filter_map(move |item| {
        let line = match item {
            Ok(r) if room.as_ref().is_none_or(|want| &r.room_id == want) => {
                serde_json::to_string(&r).ok().map(|mut s| {
                    s.push('\n');
                    Ok::<_, Infallible>(s)
                })
            }
            _ => None,
        };
        std::future::ready(line)
    });
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(lines)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModeBody {
    Manual,
    Auto,
    Clear,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelayBody {
    state: Option<OnOff>,
    mode: Option<ModeBody>,
}

async fn set_relay(State(gw): State<Arc<Gateway>>, Path(id): Path<String>, raw: Bytes) -> ApiResult {
    let b: RelayBody = body(&raw)?;
    let mode = match b.mode.unwrap_or(ModeBody::Manual) {
        ModeBody::Manual => RelayRequestMode::Manual,
        ModeBody::Auto => RelayRequestMode::Auto,
        ModeBody::Clear => RelayRequestMode::Clear,
    };
    let on = match (b.state, mode) {
        (Some(s), _) => matches!(s, OnOff::On),
        (None, RelayRequestMode::Clear) => false,
        (None, _) => return Err(ApiError::bad("missing state")),
    };
    Ok(Json(gw.set_relay(&id, on, mode).await?).into_response())
}

async fn relays(State(gw): State<Arc<Gateway>>) -> ApiResult {
    Ok(Json(gw.relays()).into_response())
}

/// `[lo, hi]` keeps the current span; the object form may set it.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum BandBody {
    Pair([f64; 2]),
    Full {
        lo: f64,
        hi: f64,
        span: Option<f64>,
    },
}

async fn get_bands(State(gw): State<Arc<Gateway>>) -> ApiResult {
    Ok(Json(gw.bands()).into_response())
}

async fn put_bands(State(gw): State<Arc<Gateway>>, raw: Bytes) -> ApiResult {
    let b: BTreeMap<String, BandBody> = body(&raw)?;
    if b.is_empty() {
        return Err(ApiError::bad("no bands given"));
    }
    let mut bands: ComfortBands = gw.bands();
    for (name, band) in b {
        let metric: Metric = name.parse().map_err(|e: crate::model::UnknownMetric| ApiError::bad(e.to_string()))?;
        let (lo, hi, span) = match band {
            BandBody::Pair([lo, hi]) => (lo, hi, None),
            BandBody::Full { lo, hi, span } => (lo, hi, span),
        };
        let span = span.or(bands.get(metric).map(|c| c.span)).unwrap_or(hi - lo);
        let band = ComfortBand::new(metric, lo, hi, span).map_err(|e| ApiError::bad(e.to_string()))?;
        bands.set(band).map_err(|e| ApiError::bad(e.to_string()))?;
    }
    gw.set_bands(bands.clone());
    Ok(Json(bands).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    room: String,
    vote: i64,
    #[serde(default)]
    note: String,
}

async fn post_feedback(State(gw): State<Arc<Gateway>>, raw: Bytes) -> ApiResult {
    let b: FeedbackBody = body(&raw)?;
    if !gw.has_room(&b.room) {
        return Err(ApiError::not_found(format!("unknown room {}", b.room)));
    }
    let rec = FeedbackRecord::new(b.room, b.vote, b.note, gw.clock().now_secs()).map_err(|e: FeedbackError| ApiError::bad(e.to_string()))?;
    gw.add_feedback(rec.clone());
    Ok((StatusCode::CREATED, Json(rec)).into_response())
}

async fn get_feedback(State(gw): State<Arc<Gateway>>, Query(q): Params) -> ApiResult {
    let room = q.get("room").map(String::as_str);
    Ok(Json(gw.feedback(room)).into_response())
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(gw: Arc<Gateway>) -> Router {
    Router::new()
        .route("/api/v1/devices", get(devices))
        .route("/api/v1/readings", get(readings))
        .route("/api/v1/readings/latest", get(latest))
        .route("/api/v1/comfort", get(comfort))
        .route("/api/v1/occupancy", get(occupancy))
        .route("/api/v1/predictions", get(predictions))
        .route("/api/v1/stream", get(stream))
        .route("/api/v1/relays", get(relays))
        .route("/api/v1/relays/{id}", post(set_relay))
        .route("/api/v1/comfort-bands", put(put_bands).get(get_bands))
        .route("/api/v1/feedback", post(post_feedback).get(get_feedback))
        .fallback(fallback)
        .with_state(gw)
}

/// A running API server; stops when dropped.
pub struct ApiHandle {
    pub addr: SocketAddr,
    task: JoinHandle<()>,
}

impl ApiHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ApiHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub async fn serve(gw: Arc<Gateway>, bind: SocketAddr) -> std::io::Result<ApiHandle> {
    let listener = TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let app = router(gw);
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!(error = %e, "api server stopped");
        }
    });
    tracing::info!(%addr, "api listening");
    Ok(ApiHandle { addr, task })
}
