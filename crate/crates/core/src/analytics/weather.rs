//! Outdoor temperature client with a sim-time cache, plus a stub provider.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use tokio::sync::Mutex;

use crate::clock::SimClock;
use crate::model::{Metric, Reading};
use crate::protosim::SignalModel;

pub const WEATHER_DEVICE: &str = "weather";
pub const WEATHER_ROOM: &str = "outdoor";
pub const DEFAULT_CACHE_TTL: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WeatherError {
    #[error("PROVIDER_UNAVAILABLE: {0}")]
    ProviderUnavailable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outdoor {
    pub reading: Reading,
    /// Served from cache after a failed refresh.
    pub stale: bool,
    /// True when this call performed a successful request.
    pub fetched: bool,
}

#[derive(Deserialize)]
struct Payload {
    temp_c: f64,
}

pub struct WeatherClient {
    endpoint: String,
    http: reqwest::Client,
    ttl: Duration,
    cache: Mutex<Option<(DateTime<Utc>, f64)>>,
}

fn outdoor_reading(value: f64, ts: DateTime<Utc>) -> Reading {
    Reading::new(WEATHER_DEVICE, WEATHER_ROOM, Metric::OutdoorTemperature, value, ts)
}

impl WeatherClient {
    /// `timeout` is wall time for a single request.
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client without TLS always builds");
        WeatherClient {
            endpoint: endpoint.into(),
            http,
            ttl: DEFAULT_CACHE_TTL,
            cache: Mutex::new(None),
        }
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    async fn request(&self) -> Result<f64, WeatherError> {
        let unavailable = |e: reqwest::Error| WeatherError::ProviderUnavailable(e.to_string());
        let resp = self.http.get(&self.endpoint).send().await.map_err(unavailable)?;
        let resp = resp.error_for_status().map_err(unavailable)?;
        let p: Payload = resp.json().await.map_err(unavailable)?;
        if !p.temp_c.is_finite() || !(-60.0..=60.0).contains(&p.temp_c) {
            return Err(WeatherError::ProviderUnavailable(format!("temp_c out of range: {}", p.temp_c)));
        }
        Ok(p.temp_c)
    }

    /// Returns the outdoor reading at sim instant `now`, hitting the provider
    /// only once the cached value is a full ttl old.
    pub async fn fetch_outdoor(&self, now: DateTime<Utc>) -> Result<Outdoor, WeatherError> {
        let mut cache = self.cache.lock().await;
        if let Some((at, v)) = *cache {
            let age = (now - at).to_std().unwrap_or_default();
            if age < self.ttl {
                return Ok(Outdoor { reading: outdoor_reading(v, at), stale: false, fetched: false });
            }
        }
        match self.request().await {
            Ok(v) => {
                *cache = Some((now, v));
                Ok(Outdoor { reading: outdoor_reading(v, now), stale: false, fetched: true })
            }
            Err(e) => match *cache {
                Some((at, v)) => {
                    tracing::warn!(error = %e, "weather provider failed, serving cached value");
                    Ok(Outdoor { reading: outdoor_reading(v, at), stale: true, fetched: false })
                }
                None => Err(e),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum StubMode {
    Ok = 0,
    Down = 1,
    Garbage = 2,
}

#[derive(Debug, Clone)]
pub enum StubSource {
    Fixed(f64),
    /// Deterministic function of the sim clock's current second.
    Signal(SignalModel, Arc<SimClock>),
}

struct StubState {
    mode: AtomicU8,
    source: StubSource,
}

async fn stub_weather(State(st): State<Arc<StubState>>) -> Response {
    match st.mode.load(Ordering::SeqCst) {
        1 => StatusCode::SERVICE_UNAVAILABLE.into_response(),
        2 => (StatusCode::OK, "{\"temp\": \"warm\"}").into_response(),
        _ => {
            let v = match &st.source {
                StubSource::Fixed(v) => *v,
                StubSource::Signal(model, clock) => {
                    let t = clock.now_secs().timestamp();
                    (model.value_at(Metric::OutdoorTemperature, t) * 100.0).round() / 100.0
                }
            };
            Json(serde_json::json!({ "temp_c": v })).into_response()
        }
    }
}

/// Local HTTP provider serving `GET /weather`.
pub struct StubProvider {
    addr: SocketAddr,
    state: Arc<StubState>,
    task: tokio::task::JoinHandle<()>,
}

impl StubProvider {
    pub async fn start(bind: SocketAddr, source: StubSource) -> std::io::Result<Self> {
        let state = Arc::new(StubState { mode: AtomicU8::new(StubMode::Ok as u8), source });
        let app = Router::new().route("/weather", get(stub_weather)).with_state(state.clone());
        let listener = tokio::net::TcpListener::bind(bind).await?;
        let addr = listener.local_addr()?;
        let task = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                tracing::error!(error = %e, "weather stub stopped");
            }
        });
        Ok(StubProvider { addr, state, task })
    }

    pub fn url(&self) -> String {
        format!("http://{}/weather", self.addr)
    }

    pub fn set_mode(&self, mode: StubMode) {
        self.state.mode.store(mode as u8, Ordering::SeqCst);
    }
}

impl Drop for StubProvider {
    fn drop(&mut self) {
        self.task.abort();
    }
}
