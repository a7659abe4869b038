//! Wires devices, mesh, gateway, store, analytics and automation together and
//! drives them through a scenario, plus the offline report/export/replay paths.

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use futures::FutureExt;
use serde::Serialize;
use tracing::{info, warn};

use crate::analytics::comfort::{classify_light, comfort_report, ComfortBands, ComfortReport, LightClass};
use crate::analytics::occupancy::{occupancy_ledger, OccupancyEvent, OccupancyKind};
use crate::analytics::profile::HourlyProfile;
use crate::analytics::weather::{StubProvider, StubSource, WeatherClient, WEATHER_DEVICE, WEATHER_ROOM};
use crate::automation::RelayCommand;
use crate::clock::SimClock;
use crate::gateway::api::{self, ApiHandle};
use crate::gateway::{Gateway, GatewaySettings, GatewayStats, RegistryError, TrackerInfo, MIN_WALL_TIMEOUT};
use crate::meshnet::{MeshNet, MeshStats, ReadingPayload, SINK};
use crate::model::{Metric, Protocol, Reading};
use crate::protosim::device::{run_ble_device, run_zwave_device, DeviceHandle};
use crate::protosim::FixedPoint;
use crate::scenario::{Scenario, WeatherSource};
use crate::tstore::{QueryRange, RecoveryReport, Store, StoreError, SyncMode};

const AUTOMATION_TICK: Duration = Duration::from_secs(60);
const WEATHER_TIMEOUT: Duration = Duration::from_secs(10);
/// Wall-clock bound on waiting for scripted Z-Wave events to arrive.
const PUSH_BARRIER_WAIT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub store_root: PathBuf,
    /// Serve the HTTP API here while running.
    pub bind: Option<SocketAddr>,
    /// Stepped clock (deterministic) instead of a free-running one.
    pub stepped: bool,
    /// With a stepped clock, hold each instant until its wall deadline.
    pub paced: bool,
    /// Start the scenario's simulated devices; otherwise connect to live ones.
    pub spawn_devices: bool,
    /// Stop at the scenario end; the gateway command runs until interrupted.
    pub stop_at_end: bool,
    pub sync: SyncMode,
}

impl RunOptions {
    /// Deterministic, unpaced simulation into `store_root`.
    pub fn simulate(store_root: impl Into<PathBuf>) -> Self {
        RunOptions {
            store_root: store_root.into(),
            bind: None,
            stepped: true,
            paced: false,
            spawn_devices: true,
            stop_at_end: true,
            sync: SyncMode::Always,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

#[derive(Debug, Clone, Serialize)]
pub struct TimedCommand {
    #[serde(with = "crate::model::ts_serde")]
    pub at: DateTime<Utc>,
    pub relay_id: String,
    pub on: bool,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    #[serde(with = "crate::model::ts_serde")]
    pub start: DateTime<Utc>,
    #[serde(with = "crate::model::ts_serde")]
    pub end: DateTime<Utc>,
    pub interrupted: bool,
    pub wall_secs: f64,
    pub polls_ok: u64,
    pub stats: GatewayStats,
    pub mesh: Option<MeshStats>,
    pub commands: Vec<TimedCommand>,
    pub torn_rows: usize,
}

struct Tick {
    next: DateTime<Utc>,
    step: chrono::Duration,
}

impl Tick {
    fn new(start: DateTime<Utc>, step: Duration) -> Self {
        let step = chrono::Duration::from_std(step).unwrap_or(chrono::Duration::seconds(60));
        Tick { next: start, step: step.max(chrono::Duration::seconds(1)) }
    }

    fn due(&mut self, t: DateTime<Utc>) -> bool {
        if self.next > t {
            return false;
        }
        while self.next <= t {
            self.next += self.step;
        }
        true
    }
}

struct MeshReporter {
    device: usize,
    node: u16,
    tick: Tick,
}

fn io_err(what: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let what = what.into();
    move |e| RunError::Io(what, e)
}

/// Gateway settings derived from a scenario.
pub fn gateway_settings(sc: &Scenario) -> GatewaySettings {
    let trackers = sc
        .trackers
        .iter()
        .map(|t| TrackerInfo {
            id: t.id.clone(),
            mac: t.mac,
            scanner: t.scanner.clone(),
            room: sc.device(&t.scanner).map(|d| d.descriptor().room_id.clone()).unwrap_or_default(),
        })
        .collect();
    GatewaySettings {
        rooms: sc.rooms.iter().map(|r| r.id.clone()).collect(),
        bands: sc.bands.clone(),
        light_threshold: sc.light_threshold,
        presence_window: sc.presence_window,
        alpha: sc.alpha,
        rules: sc.rules.clone(),
        trackers,
    }
}

/// Records every stream's room up front, in scenario order, so `rooms.csv`
/// does not depend on which reading happens to arrive first.
fn preregister(sc: &Scenario, store: &Store, settings: &GatewaySettings) -> Result<(), StoreError> {
    for d in &sc.devices {
        store.register_room(d.id(), &d.descriptor().room_id)?;
    }
    for c in &sc.cameras {
        store.register_room(&c.id, &c.room)?;
    }
    for t in &settings.trackers {
        store.register_room(&t.id, &t.room)?;
    }
    if sc.weather.is_some() {
        store.register_room(WEATHER_DEVICE, WEATHER_ROOM)?;
    }
    Ok(())
}

/// Runs `sc` until its end time (or `shutdown` resolves).
pub async fn run(sc: &Scenario, opts: RunOptions, shutdown: impl Future<Output = ()>) -> Result<RunSummary, RunError> {
    let wall_start = Instant::now();
    let (store, recovery): (Store, RecoveryReport) = Store::open_with(&opts.store_root, opts.sync)?;
    if recovery.torn_rows_dropped > 0 {
        warn!(rows = recovery.torn_rows_dropped, "dropped torn rows while opening the store");
    }
    let settings = gateway_settings(sc);
    preregister(sc, &store, &settings)?;

    let clock = Arc::new(if opts.stepped {
        SimClock::stepped(sc.start, sc.compression)
    } else {
        SimClock::free(sc.start, sc.compression)
    });

    let mut handles: Vec<DeviceHandle> = Vec::new();
    let mut endpoints: BTreeMap<String, SocketAddr> = BTreeMap::new();
    for d in &sc.devices {
        let desc = d.descriptor();
        let addr = if opts.spawn_devices {
            let h = match desc.protocol {
                Protocol::BleSim => Some(run_ble_device(d.config.clone(), d.listen, clock.clone()).await),
                Protocol::ZwaveSim => Some(run_zwave_device(d.config.clone(), d.listen, clock.clone()).await),
                Protocol::ZigbeeSim => None,
            };
            match h.transpose().map_err(io_err(format!("starting {}", desc.device_id)))? {
                Some(h) => {
                    let a = h.addr;
                    handles.push(h);
                    a
                }
                None => d.listen,
            }
        } else {
            d.listen
        };
        endpoints.insert(desc.device_id.clone(), addr);
    }

    let mut stub = None;
    let weather = match &sc.weather {
        Some(w) => {
            let url = match &w.source {
                WeatherSource::Endpoint(url) => url.clone(),
                WeatherSource::Stub { model, listen } => {
                    let s = StubProvider::start(*listen, StubSource::Signal(model.clone(), clock.clone()))
                        .await
                        .map_err(io_err("starting weather stub"))?;
                    let url = s.url();
                    stub = Some(s);
                    url
                }
            };
            let timeout = clock.wall_for(WEATHER_TIMEOUT).max(MIN_WALL_TIMEOUT);
            Some((WeatherClient::new(url, timeout), Tick::new(sc.start, w.interval)))
        }
        None => None,
    };

    let gw = Gateway::new(clock.clone(), store, settings);
    for d in &sc.devices {
        let desc = d.descriptor().clone();
        let ep = (desc.protocol != Protocol::ZigbeeSim).then(|| endpoints[&desc.device_id]);
        gw.register_device(desc, ep)?;
    }
    for d in sc.devices.iter().filter(|d| d.descriptor().protocol == Protocol::ZwaveSim) {
        if let Err(e) = gw.connect_zwave(d.id()).await {
            if opts.spawn_devices {
                return Err(RunError::Io(format!("connecting {}", d.id()), e));
            }
            warn!(device = d.id(), error = %e, "z-wave node unreachable");
        }
    }
    let api: Option<ApiHandle> = match opts.bind {
        Some(bind) => Some(api::serve(gw.clone(), bind).await.map_err(io_err(format!("binding {bind}")))?),
        None => None,
    };

    let mut mesh = sc
        .mesh
        .as_ref()
        .map(|m| MeshNet::new(m.topology.clone(), m.config.clone(), sc.start.timestamp_millis()));
    let mut reporters: Vec<MeshReporter> = sc
        .devices
        .iter()
        .enumerate()
        .filter(|(_, d)| d.descriptor().protocol == Protocol::ZigbeeSim)
        .filter_map(|(i, d)| {
            Some(MeshReporter {
                device: i,
                node: d.descriptor().node_id()?,
                tick: Tick::new(sc.start, d.report_interval?),
            })
        })
        .collect();

    let mut push_times: Vec<DateTime<Utc>> = if opts.spawn_devices {
        sc.devices
            .iter()
            .filter(|d| d.descriptor().protocol == Protocol::ZwaveSim)
            .flat_map(|d| d.config.events.iter().map(|e| e.at))
            .filter(|t| *t >= sc.start)
            .collect()
    } else {
        Vec::new()
    };
    push_times.sort();

    let mut camera_events: Vec<(DateTime<Utc>, usize, u32)> = sc
        .cameras
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.events.iter().map(move |(t, n)| (*t, i, *n)))
        .collect();
    camera_events.sort_by_key(|(t, i, _)| (*t, *i));

    let mut scanners: BTreeMap<String, Tick> = BTreeMap::new();
    for t in &sc.trackers {
        let tick = scanners.entry(t.scanner.clone()).or_insert_with(|| Tick::new(sc.start, t.interval));
        tick.step = tick.step.min(chrono::Duration::from_std(t.interval).unwrap_or(tick.step));
    }

    let mut weather = weather;
    let mut automation = Tick::new(sc.start, AUTOMATION_TICK);
    let end = sc.end();
    let (mut push_idx, mut cam_idx) = (0usize, 0usize);
    let mut polls_ok = 0u64;
    let mut commands = Vec::new();
    let mut interrupted = false;
    let mut shutdown = std::pin::pin!(shutdown);
    info!(start = %sc.start, %end, devices = sc.devices.len(), "run started");

    loop {
        let candidates = [
            gw.next_poll_due(),
            push_times.get(push_idx).copied(),
            camera_events.get(cam_idx).map(|e| e.0),
            scanners.values().map(|t| t.next).min(),
            reporters.iter().map(|r| r.tick.next).min(),
            weather.as_ref().map(|w| w.1.next),
            Some(automation.next),
        ];
        let Some(t) = candidates.into_iter().flatten().min() else { break };
        if opts.stop_at_end && t >= end {
            break;
        }
        if opts.stepped && !opts.paced {
            if shutdown.as_mut().now_or_never().is_some() {
                interrupted = true;
                break;
            }
            clock.advance_to(t);
        } else {
            let wait = async {
                if opts.stepped {
                    clock.pace_to(t).await
                } else {
                    clock.sleep_until(t).await
                }
            };
            tokio::select! {
                _ = wait => {}
                _ = shutdown.as_mut() => {
                    interrupted = true;
                    break;
                }
            }
        }

        // Scripted pushes for this instant must be in before anything else runs.
        while push_times.get(push_idx).is_some_and(|p| *p <= t) {
            push_idx += 1;
        }
        if opts.stepped && push_idx > 0 && !gw.wait_pushes(push_idx as u64, PUSH_BARRIER_WAIT).await {
            warn!(expected = push_idx, got = gw.pushes_ingested(), "z-wave events missing at {t}");
        }

        while let Some(&(ct, i, n)) = camera_events.get(cam_idx).filter(|e| e.0 <= t) {
            let cam = &sc.cameras[i];
            if let Err(e) = gw.camera_count(&cam.id, &cam.room, n, ct) {
                warn!(camera = %cam.id, error = %e, "camera count rejected");
            }
            cam_idx += 1;
        }

        for r in gw.poll_due(t).await {
            match r {
                Ok(_) => polls_ok += 1,
                Err(e) => warn!(error = %e, "poll failed at {t}"),
            }
        }

        for (scanner, tick) in scanners.iter_mut() {
            if tick.due(t) {
                if let Err(e) = gw.scan(scanner).await {
                    warn!(scanner = %scanner, error = %e, "scan failed");
                }
            }
        }

        if let Some(net) = mesh.as_mut() {
            net.advance_to(t.timestamp_millis());
            for rep in reporters.iter_mut().filter(|r| r.tick.next <= t) {
                rep.tick.due(t);
                let spec = &sc.devices[rep.device];
                for m in &spec.descriptor().metrics {
                    let Ok(value) = FixedPoint::from_f64(spec.config.value_at(*m, t.timestamp())) else { continue };
                    let payload = ReadingPayload { metric: *m, value, ts: t.timestamp().clamp(0, u32::MAX as i64) as u32 };
                    let Some(bytes) = payload.encode() else { continue };
                    if let Err(e) = net.send_data(rep.node, SINK, &bytes) {
                        warn!(device = spec.id(), error = %e, "mesh delivery failed");
                    }
                }
            }
            for d in net.drain_sink() {
                if let Err(e) = gw.intake_mesh(&d) {
                    warn!(src = d.src, error = %e, "mesh intake");
                }
            }
        } else {
            for rep in reporters.iter_mut() {
                rep.tick.due(t);
            }
        }

        if let Some((client, tick)) = weather.as_mut() {
            if tick.due(t) {
                match client.fetch_outdoor(t).await {
                    Ok(o) => {
                        if let Err(e) = gw.ingest_weather(&o) {
                            warn!(error = %e, "outdoor reading rejected");
                        }
                    }
                    Err(e) => warn!(error = %e, "weather unavailable"),
                }
            }
        }

        if automation.due(t) {
            for c in gw.run_automation().await {
                commands.push(timed(t, &c));
            }
        }
    }

    // Shutdown order: devices, then gateway links and API, then the store.
    drop(handles);
    drop(stub);
    gw.shutdown();
    drop(api);
    let summary = RunSummary {
        start: sc.start,
        end: clock.now_secs(),
        interrupted,
        wall_secs: wall_start.elapsed().as_secs_f64(),
        polls_ok,
        stats: gw.stats(),
        mesh: mesh.map(|m| m.stats()),
        commands,
        torn_rows: recovery.torn_rows_dropped,
    };
    info!(stored = summary.stats.stored, wall = summary.wall_secs, "run finished");
    Ok(summary)
}

fn timed(at: DateTime<Utc>, c: &RelayCommand) -> TimedCommand {
    TimedCommand {
        at,
        relay_id: c.relay_id.clone(),
        on: c.on,
        reason: match &c.reason {
            crate::automation::CommandReason::Rule(id) => format!("rule:{id}"),
            other => format!("{other:?}").to_lowercase(),
        },
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("NO_DATA for {0}")]
    NoData(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Serialize)]
pub struct OccupancySummary {
    pub current: u32,
    pub peak: u32,
    pub changes: usize,
    pub door_events: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoomReport {
    pub room: String,
    pub rows: usize,
    pub comfort: ComfortReport,
    pub light: Option<LightClass>,
    pub mean_lux: Option<f64>,
    pub occupancy: OccupancySummary,
}

fn room_rows(store: &Store, room: &str, q: &QueryRange) -> Result<Vec<Reading>, StoreError> {
    Ok(store.query(q)?.into_iter().filter(|r| r.room_id == room).collect())
}

fn analyse_room(room: &str, rows: &[Reading], t0: DateTime<Utc>, bands: &ComfortBands, light_threshold: f64) -> RoomReport {
    let events: Vec<OccupancyEvent> = rows.iter().filter_map(OccupancyEvent::from_reading).collect();
    let ledger = occupancy_ledger(&events, t0);
    let light = classify_light(rows, light_threshold).ok();
    RoomReport {
        room: room.to_string(),
        rows: rows.len(),
        comfort: comfort_report(rows, bands),
        light: light.map(|l| l.0),
        mean_lux: light.map(|l| l.1),
        occupancy: OccupancySummary {
            current: ledger.current(),
            peak: ledger.steps.iter().map(|s| s.1).max().unwrap_or(0),
            changes: ledger.steps.len() - 1,
            door_events: ledger
                .unattributed
                .iter()
                .filter(|(_, k)| matches!(k, OccupancyKind::DoorOpen | OccupancyKind::DoorClosed))
                .count(),
        },
    }
}

/// Comfort, light and occupancy for one room over `[from, to)` from a store.
pub fn room_report(
    store: &Store,
    room: &str,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
    bands: &ComfortBands,
    light_threshold: f64,
) -> Result<RoomReport, ReportError> {
    let rows = room_rows(store, room, &QueryRange::new(from, to)?)?;
    if rows.is_empty() {
        return Err(ReportError::NoData(room.to_string()));
    }
    Ok(analyse_room(room, &rows, rows[0].ts, bands, light_threshold))
}

/// Bucketed means of one stream (or a metric across a room) for plotting.
pub fn export_series(
    store: &Store,
    q: &QueryRange,
    room: Option<&str>,
    bucket: Duration,
) -> Result<Vec<(DateTime<Utc>, f64)>, ReportError> {
    let rows: Vec<Reading> = match room {
        Some(r) => room_rows(store, r, q)?,
        None => store.query(q)?,
    };
    let series = crate::tstore::bucket_means(&rows, bucket)?;
    if series.is_empty() {
        return Err(ReportError::NoData(room.unwrap_or("query").to_string()));
    }
    Ok(series)
}

#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    pub room: String,
    pub metric: Metric,
    /// Smoothed value per hour of day; `None` where nothing was observed.
    pub hours: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplaySummary {
    pub rows: usize,
    pub rooms: Vec<RoomReport>,
    pub predictions: Vec<Prediction>,
}

/// Re-feeds every stored reading, in time order, through the analytics.
pub fn replay(store: &Store, sc: &Scenario) -> Result<ReplaySummary, ReportError> {
    let rows = store.all()?;
    if rows.is_empty() {
        return Err(ReportError::NoData("store".into()));
    }
    let mut profile = HourlyProfile::new(sc.alpha);
    let mut streams: BTreeMap<(String, Metric), ()> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.metric.is_binary() && r.metric != Metric::CameraCount) {
        profile.update(r);
        streams.insert((r.room_id.clone(), r.metric), ());
    }
    let t0 = rows[0].ts;
    let mut by_room: BTreeMap<&str, Vec<Reading>> = BTreeMap::new();
    for r in &rows {
        by_room.entry(r.room_id.as_str()).or_default().push(r.clone());
    }
    let rooms = by_room
        .iter()
        .map(|(room, rs)| analyse_room(room, rs, t0, &sc.bands, sc.light_threshold))
        .collect();
    let predictions = streams
        .into_keys()
        .map(|(room, metric)| Prediction {
            hours: (0..24u8).map(|h| profile.predict(&room, metric, h).ok()).collect(),
            room,
            metric,
        })
        .collect();
    Ok(ReplaySummary { rows: rows.len(), rooms, predictions })
}
