//! The aggregator: registry, polling, event intake from all three protocols,
//! analytics state, relay actuation and the HTTP API.

pub mod api;
pub mod registry;

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::Serialize;
use tokio::io::AsyncWriteExt;
use tokio::sync::{broadcast, mpsc, oneshot, watch, Mutex as AsyncMutex};
use tokio::task::JoinHandle;
use tracing::{debug, info, warn};

use crate::analytics::comfort::{classify_light, comfort_report, ComfortBands, ComfortReport, LightClass};
use crate::analytics::occupancy::{occupancy_ledger, Ledger, OccupancyEvent};
use crate::analytics::presence::{presence, Presence, ScanRecord};
use crate::analytics::profile::HourlyProfile;
use crate::analytics::weather::Outdoor;
use crate::analytics::FeedbackRecord;
use crate::automation::{Engine, RelayBoard, RelayCommand, RelayError, RelayState, Rule, Snapshot};
use crate::clock::SimClock;
use crate::meshnet::{Delivery, ReadingPayload};
use crate::model::{ts_from_epoch, MacAddr, Metric, Protocol, Reading};
use crate::protosim::ble::{BleFrame, BleStatus};
use crate::protosim::client::{read_zwave_frame, BleClient, LinkError, ZwaveLink};
use crate::protosim::zwave::{self, ZwaveCommand, ZwaveFrame};
use crate::protosim::FrameError;
use crate::tstore::{QueryRange, Store, StoreError};

pub use registry::{DeviceEntry, Liveness, PollJob, Registry, RegistryError};

/// Simulated-time bound on one poll exchange.
pub const POLL_TIMEOUT: Duration = Duration::from_secs(2);
/// Wall-clock floor for timeouts derived from simulated durations.
pub const MIN_WALL_TIMEOUT: Duration = Duration::from_millis(500);
const STREAM_BUFFER: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum PollError {
    #[error("TIMEOUT")]
    Timeout,
    #[error("{0}")]
    BadFrame(FrameError),
    #[error("UNKNOWN_CHAR")]
    UnknownChar,
    #[error("unexpected reply")]
    Unexpected,
    #[error("device {0} is suspended")]
    Suspended(String),
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("reading rejected: {0}")]
    Rejected(StoreError),
}

#[derive(Debug, thiserror::Error)]
pub enum IntakeError {
    #[error("UNKNOWN_NODE: {0}")]
    UnknownNode(u16),
    #[error("malformed payload from node {0}")]
    BadPayload(u16),
    #[error("unexpected frame {0:?}")]
    Unexpected(ZwaveCommand),
    #[error(transparent)]
    Relay(#[from] RelayError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Analytics and automation settings fixed at start-up.
#[derive(Debug, Clone)]
pub struct GatewaySettings {
    pub rooms: Vec<String>,
    pub bands: ComfortBands,
    pub light_threshold: f64,
    pub presence_window: Duration,
    pub alpha: f64,
    pub rules: Vec<Rule>,
    pub trackers: Vec<TrackerInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrackerInfo {
    pub id: String,
    pub mac: MacAddr,
    pub scanner: String,
    pub room: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GatewayStats {
    pub stored: u64,
    /// Rows stored per `device/metric`.
    pub per_stream: BTreeMap<String, u64>,
    pub poll_faults: u64,
    pub unknown_node: u64,
    pub rejected: u64,
    pub relay_frames: u64,
    pub unexpected_acks: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviceView {
    #[serde(flatten)]
    pub entry: DeviceEntry,
    pub liveness: Liveness,
}

#[derive(Debug, Clone, Serialize)]
pub struct LightView {
    pub class: Option<LightClass>,
    pub mean_lux: Option<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoomComfort {
    pub room: String,
    #[serde(with = "crate::model::ts_serde")]
    pub from: DateTime<Utc>,
    #[serde(with = "crate::model::ts_serde")]
    pub to: DateTime<Utc>,
    #[serde(flatten)]
    pub report: ComfortReport,
    pub light: LightView,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrackerPresence {
    pub tracker: String,
    pub mac: MacAddr,
    pub presence: Presence,
}

#[derive(Debug, Clone, Serialize)]
pub struct OccupancyView {
    pub room: String,
    pub count: u32,
    pub ledger: Ledger,
    pub presence: Vec<TrackerPresence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelayRequestMode {
    Manual,
    Auto,
    Clear,
}

struct State {
    latest: BTreeMap<(String, Metric), Reading>,
    occupancy: BTreeMap<String, Vec<OccupancyEvent>>,
    headcount: BTreeMap<String, u32>,
    scans: BTreeMap<String, Vec<ScanRecord>>,
    profile: HourlyProfile,
    feedback: Vec<FeedbackRecord>,
    bands: ComfortBands,
    light_threshold: f64,
    presence_window: Duration,
    trackers: Vec<TrackerInfo>,
}

struct Automation {
    engine: Engine,
    board: RelayBoard,
}

type BleSlot = Arc<AsyncMutex<Option<BleClient>>>;

pub struct Gateway {
    clock: Arc<SimClock>,
    store: Store,
    rooms: BTreeSet<String>,
    registry: Mutex<Registry>,
    endpoints: Mutex<BTreeMap<String, SocketAddr>>,
    ble: Mutex<BTreeMap<String, BleSlot>>,
    zwave_tx: Mutex<BTreeMap<u8, mpsc::UnboundedSender<[u8; zwave::FRAME_LEN]>>>,
    ack_waiters: Mutex<BTreeMap<u8, oneshot::Sender<bool>>>,
    pushes: watch::Sender<u64>,
    state: Mutex<State>,
    automation: Mutex<Automation>,
    stream: broadcast::Sender<Reading>,
    stats: Mutex<GatewayStats>,
    tasks: Mutex<Vec<JoinHandle<()>>>,
    poll_timeout: Duration,
    ack_wait: Duration,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Gateway {
    pub fn new(clock: Arc<SimClock>, store: Store, settings: GatewaySettings) -> Arc<Self> {
        let wall = |sim: Duration| clock.wall_for(sim).max(MIN_WALL_TIMEOUT);
        let poll_timeout = wall(POLL_TIMEOUT);
        let ack_wait = wall(crate::automation::relay::ACK_TIMEOUT);
        Arc::new(Gateway {
            rooms: settings.rooms.into_iter().collect(),
            registry: Mutex::new(Registry::new()),
            endpoints: Mutex::new(BTreeMap::new()),
            ble: Mutex::new(BTreeMap::new()),
            zwave_tx: Mutex::new(BTreeMap::new()),
            ack_waiters: Mutex::new(BTreeMap::new()),
            pushes: watch::channel(0).0,
            state: Mutex::new(State {
                latest: BTreeMap::new(),
                occupancy: BTreeMap::new(),
                headcount: BTreeMap::new(),
                scans: BTreeMap::new(),
                profile: HourlyProfile::new(settings.alpha),
                feedback: Vec::new(),
                bands: settings.bands,
                light_threshold: settings.light_threshold,
                presence_window: settings.presence_window,
                trackers: settings.trackers,
            }),
            automation: Mutex::new(Automation {
                engine: Engine::new(settings.rules),
                board: RelayBoard::new(),
            }),
            stream: broadcast::channel(STREAM_BUFFER).0,
            stats: Mutex::new(GatewayStats::default()),
            tasks: Mutex::new(Vec::new()),
            poll_timeout,
            ack_wait,
            clock,
            store,
        })
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn has_room(&self, room: &str) -> bool {
        self.rooms.contains(room)
    }

    pub fn rooms(&self) -> impl Iterator<Item = &String> {
        self.rooms.iter()
    }

    pub fn stats(&self) -> GatewayStats {
        lock(&self.stats).clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Reading> {
        self.stream.subscribe()
    }

    /// Registers a device; `endpoint` is where its simulator listens (BLE and Z-Wave).
    pub fn register_device(
        &self,
        d: crate::model::DeviceDescriptor,
        endpoint: Option<SocketAddr>,
    ) -> Result<usize, RegistryError> {
        let id = d.device_id.clone();
        let relay_node = (d.protocol == Protocol::ZwaveSim && d.metrics.contains(&Metric::Relay))
            .then(|| d.node_id().map(|n| n as u8))
            .flatten();
        let jobs = lock(&self.registry).register(d, self.clock.now_secs())?;
        if let Some(addr) = endpoint {
            lock(&self.endpoints).insert(id.clone(), addr);
        }
        if let Some(node) = relay_node {
            let _ = lock(&self.automation).board.register(&id, node);
        }
        Ok(jobs)
    }

    pub fn devices(&self) -> Vec<DeviceView> {
        let now = self.clock.now_secs();
        lock(&self.registry)
            .entries()
            .map(|e| DeviceView {
                entry: e.clone(),
                liveness: e.liveness(now),
            })
            .collect()
    }

    pub fn poll_jobs(&self) -> Vec<PollJob> {
        lock(&self.registry).jobs().to_vec()
    }

    pub fn next_poll_due(&self) -> Option<DateTime<Utc>> {
        lock(&self.registry).next_due()
    }

    /// Durably appends, then updates analytics state, then streams.
    pub fn ingest(&self, r: Reading) -> Result<(), StoreError> {
        if let Err(e) = self.store.append(&r) {
            lock(&self.stats).rejected += 1;
            warn!(device = %r.device_id, metric = %r.metric, error = %e, "reading rejected");
            return Err(e);
        }
        {
            let mut st = lock(&self.state);
            if !r.metric.is_binary() && r.metric != Metric::CameraCount {
                st.profile.update(&r);
            }
            if let Some(ev) = OccupancyEvent::from_reading(&r) {
                if r.metric == Metric::CameraCount {
                    st.headcount.insert(r.room_id.clone(), r.value as u32);
                }
                st.occupancy.entry(r.room_id.clone()).or_default().push(ev);
            }
            st.latest.insert((r.room_id.clone(), r.metric), r.clone());
        }
        lock(&self.registry).record_success(&r.device_id, r.ts);
        {
            let mut s = lock(&self.stats);
            s.stored += 1;
            *s.per_stream.entry(format!("{}/{}", r.device_id, r.metric)).or_default() += 1;
        }
        let _ = self.stream.send(r);
        Ok(())
    }

    fn ble_slot(&self, device: &str) -> BleSlot {
        lock(&self.ble).entry(device.to_string()).or_default().clone()
    }

    fn fault(&self, device: &str, e: PollError) -> PollError {
        lock(&self.stats).poll_faults += 1;
        if lock(&self.registry).record_fault(device) {
            warn!(device, "five consecutive faults, device offline and polling suspended");
        } else {
            debug!(device, error = %e, "poll fault");
        }
        e
    }

    /// Runs one BLE exchange on the device's persistent connection.
    async fn exchange(&self, device: &str, req: BleFrame) -> Result<BleFrame, PollError> {
        let entry = lock(&self.registry).get(device).cloned();
        let Some(entry) = entry else {
            return Err(PollError::UnknownDevice(device.to_string()));
        };
        if entry.suspended {
            return Err(PollError::Suspended(device.to_string()));
        }
        let Some(addr) = lock(&self.endpoints).get(device).copied() else {
            return Err(PollError::UnknownDevice(device.to_string()));
        };
        let slot = self.ble_slot(device);
        let mut conn = slot.lock().await;
        let result = tokio::time::timeout(self.poll_timeout, async {
            if conn.is_none() {
                *conn = Some(BleClient::connect(addr).await?);
            }
            let client = conn.as_mut().expect("connected above");
            client.request(&req).await
        })
        .await;
        match result {
            Ok(Ok(frame)) => Ok(frame),
            Ok(Err(LinkError::Frame(e))) => {
                *conn = None;
                Err(self.fault(device, PollError::BadFrame(e)))
            }
            Ok(Err(LinkError::Unexpected)) => Err(self.fault(device, PollError::Unexpected)),
            Ok(Err(LinkError::Io(_))) | Err(_) => {
                *conn = None;
                Err(self.fault(device, PollError::Timeout))
            }
        }
    }

    /// Issues a READ for the job's characteristic and ingests the reading.
    pub async fn poll_once(&self, job: &PollJob) -> Result<Reading, PollError> {
        let req = BleFrame::read(job.metric).ok_or(PollError::Unexpected)?;
        let frame = self.exchange(&job.device_id, req).await?;
        let (value, ts) = match frame {
            BleFrame::Response { status: BleStatus::UnknownChar, .. } => {
                return Err(self.fault(&job.device_id, PollError::UnknownChar));
            }
            BleFrame::Response { char_id, status: BleStatus::Ok, value, ts } if char_id == job.char_id => (value, ts),
            _ => return Err(self.fault(&job.device_id, PollError::Unexpected)),
        };
        let room = lock(&self.registry)
            .get(&job.device_id)
            .map(|e| e.descriptor.room_id.clone())
            .unwrap_or_default();
        let r = Reading::new(job.device_id.clone(), room, job.metric, value.to_f64(), ts_from_epoch(ts as i64));
        self.ingest(r.clone()).map_err(PollError::Rejected)?;
        Ok(r)
    }

    /// Polls every job due at or before `now`, one device at a time per
    /// device and devices concurrently; advances each job by one interval.
    pub async fn poll_due(&self, now: DateTime<Utc>) -> Vec<Result<Reading, PollError>> {
        let mut by_device: BTreeMap<String, Vec<PollJob>> = BTreeMap::new();
        {
            let mut reg = lock(&self.registry);
            let suspended: BTreeSet<String> = reg
                .entries()
                .filter(|e| e.suspended)
                .map(|e| e.descriptor.device_id.clone())
                .collect();
            for job in reg.jobs_mut() {
                if suspended.contains(&job.device_id) {
                    continue;
                }
                while job.next_due <= now {
                    by_device.entry(job.device_id.clone()).or_default().push(job.clone());
                    job.advance();
                }
            }
        }
        let runs = by_device.into_values().map(|jobs| async move {
            let mut out = Vec::new();
            for j in &jobs {
                out.push(self.poll_once(j).await);
            }
            out
        });
        futures::future::join_all(runs).await.into_iter().flatten().collect()
    }

    /// SCANs from `scanner` and emits a presence reading for each tracker it serves.
    pub async fn scan(&self, scanner: &str) -> Result<Vec<Reading>, PollError> {
        let frame = self.exchange(scanner, BleFrame::scan()).await?;
        let BleFrame::ScanResponse { macs } = frame else {
            return Err(self.fault(scanner, PollError::Unexpected));
        };
        let now = self.clock.now_secs();
        let readings: Vec<Reading> = {
            let mut st = lock(&self.state);
            let window = st.presence_window;
            let history = st.scans.entry(scanner.to_string()).or_default();
            history.push(ScanRecord { ts: now, macs });
            let horizon = now - chrono::Duration::from_std(window * 2).unwrap_or_default();
            history.retain(|s| s.ts > horizon);
            let history = history.clone();
            st.trackers
                .iter()
                .filter(|t| t.scanner == scanner)
                .map(|t| {
                    let p = presence(&history, t.mac, now, window);
                    let v = if p == Presence::Present { 1.0 } else { 0.0 };
                    Reading::new(t.id.clone(), t.room.clone(), Metric::Presence, v, now)
                })
                .collect()
        };
        lock(&self.registry).record_success(scanner, now);
        for r in &readings {
            let _ = self.ingest(r.clone());
        }
        Ok(readings)
    }

    /// Opens the bidirectional link to a Z-Wave-like node and starts its reader.
    pub async fn connect_zwave(self: &Arc<Self>, device: &str) -> std::io::Result<()> {
        let (addr, node) = {
            let reg = lock(&self.registry);
            let node = reg
                .get(device)
                .and_then(|e| e.descriptor.node_id())
                .and_then(|n| u8::try_from(n).ok());
            (lock(&self.endpoints).get(device).copied(), node)
        };
        let (Some(addr), Some(node)) = (addr, node) else {
            return Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{device} has no z-wave endpoint")));
        };
        let stream = ZwaveLink::connect(addr).await?.into_stream();
        let (mut rd, mut wr) = stream.into_split();
        let (tx, mut rx) = mpsc::unbounded_channel::<[u8; zwave::FRAME_LEN]>();
        let writer = tokio::spawn(async move {
            while let Some(buf) = rx.recv().await {
                if wr.write_all(&buf).await.is_err() {
                    break;
                }
            }
        });
        let gw = Arc::downgrade(self);
        let device_id = device.to_string();
        let reader = tokio::spawn(async move {
            loop {
                match read_zwave_frame(&mut rd).await {
                    Ok(f) => {
                        let Some(gw) = gw.upgrade() else { break };
                        if let Err(e) = gw.intake_zwave(f) {
                            warn!(device = %device_id, error = %e, "z-wave intake");
                        }
                    }
                    Err(LinkError::Frame(e)) => warn!(device = %device_id, error = %e, "bad z-wave frame dropped"),
                    Err(_) => break,
                }
            }
        });
        lock(&self.zwave_tx).insert(node, tx);
        lock(&self.tasks).extend([writer, reader]);
        Ok(())
    }

    /// Number of door/motion frames taken in so far.
    pub fn pushes_ingested(&self) -> u64 {
        *self.pushes.borrow()
    }

    /// Waits (up to `wall` time) until at least `n` door/motion frames were taken in.
    pub async fn wait_pushes(&self, n: u64, wall: Duration) -> bool {
        let mut rx = self.pushes.subscribe();
        let ok = tokio::time::timeout(wall, rx.wait_for(|c| *c >= n)).await;
        matches!(ok, Ok(Ok(_)))
    }

    pub fn intake_zwave(&self, f: ZwaveFrame) -> Result<(), IntakeError> {
        let entry = lock(&self.registry).by_node(Protocol::ZwaveSim, f.node_id as u16).cloned();
        let is_push = matches!(f.cmd, ZwaveCommand::Door | ZwaveCommand::Motion);
        let result = self.intake_zwave_inner(f, entry);
        if is_push {
            self.pushes.send_modify(|c| *c += 1);
        }
        result
    }

    fn intake_zwave_inner(&self, f: ZwaveFrame, entry: Option<DeviceEntry>) -> Result<(), IntakeError> {
        let Some(entry) = entry else {
            lock(&self.stats).unknown_node += 1;
            return Err(IntakeError::UnknownNode(f.node_id as u16));
        };
        let on = f.value != zwave::VALUE_OFF;
        let d = &entry.descriptor;
        let now = self.clock.now_secs();
        match f.cmd {
            ZwaveCommand::Door | ZwaveCommand::Motion => {
                let metric = if f.cmd == ZwaveCommand::Door { Metric::Door } else { Metric::Motion };
                let r = Reading::new(d.device_id.clone(), d.room_id.clone(), metric, on as u8 as f64, now);
                self.ingest(r)?;
                Ok(())
            }
            ZwaveCommand::RelayAck => {
                let res = lock(&self.automation).board.reconcile_ack(&d.device_id, on);
                if let Err(e) = res {
                    lock(&self.stats).unexpected_acks += 1;
                    return Err(e.into());
                }
                let r = Reading::new(d.device_id.clone(), d.room_id.clone(), Metric::Relay, on as u8 as f64, now);
                let stored = self.ingest(r);
                if let Some(w) = lock(&self.ack_waiters).remove(&f.node_id) {
                    let _ = w.send(on);
                }
                stored.map_err(Into::into)
            }
            other => Err(IntakeError::Unexpected(other)),
        }
    }

    /// Takes in a reading delivered at the mesh sink.
    pub fn intake_mesh(&self, d: &Delivery) -> Result<Reading, IntakeError> {
        let entry = lock(&self.registry).by_node(Protocol::ZigbeeSim, d.src).cloned();
        let Some(entry) = entry else {
            lock(&self.stats).unknown_node += 1;
            return Err(IntakeError::UnknownNode(d.src));
        };
        let p = ReadingPayload::decode(&d.payload)
            .filter(|p| entry.descriptor.metrics.contains(&p.metric))
            .ok_or(IntakeError::BadPayload(d.src))?;
        let r = Reading::new(
            entry.descriptor.device_id.clone(),
            entry.descriptor.room_id.clone(),
            p.metric,
            p.value.to_f64(),
            ts_from_epoch(p.ts as i64),
        );
        self.ingest(r.clone())?;
        Ok(r)
    }

    pub fn camera_count(&self, camera: &str, room: &str, count: u32, ts: DateTime<Utc>) -> Result<(), StoreError> {
        self.ingest(Reading::new(camera, room, Metric::CameraCount, count as f64, ts))
    }

    /// Stores a freshly fetched outdoor value; cached or stale answers are not re-stored.
    pub fn ingest_weather(&self, o: &Outdoor) -> Result<bool, StoreError> {
        if !o.fetched {
            return Ok(false);
        }
        self.ingest(o.reading.clone())?;
        Ok(true)
    }

    fn snapshot(&self) -> Snapshot {
        let st = lock(&self.state);
        let mut snap = Snapshot::new(self.clock.now_secs());
        snap.latest = st.latest.iter().map(|(k, r)| (k.clone(), r.value)).collect();
        snap.occupancy = st.headcount.clone();
        snap
    }

    /// One automation pass: ack timeouts, rule evaluation, then actuation.
    pub async fn run_automation(&self) -> Vec<RelayCommand> {
        let snap = self.snapshot();
        let cmds = {
            let mut a = lock(&self.automation);
            let Automation { engine, board } = &mut *a;
            let mut cmds = board.check_timeouts(snap.now);
            cmds.extend(engine.evaluate(&snap, board));
            cmds
        };
        for c in &cmds {
            info!(relay = %c.relay_id, on = c.on, reason = ?c.reason, "relay command");
            self.dispatch(c).await;
        }
        cmds
    }

    /// Sends relay_set and waits for the ack; false when none arrived in time.
    async fn dispatch(&self, cmd: &RelayCommand) -> bool {
        let frame = ZwaveFrame {
            node_id: cmd.node_id,
            cmd: ZwaveCommand::RelaySet,
            value: zwave::bool_value(cmd.on),
            seq: cmd.seq,
        };
        let (tx, rx) = oneshot::channel();
        lock(&self.ack_waiters).insert(cmd.node_id, tx);
        let sent = lock(&self.zwave_tx)
            .get(&cmd.node_id)
            .is_some_and(|w| w.send(zwave::encode_zwave(&frame)).is_ok());
        if !sent {
            lock(&self.ack_waiters).remove(&cmd.node_id);
            warn!(relay = %cmd.relay_id, "no link to relay node");
            return false;
        }
        lock(&self.stats).relay_frames += 1;
        matches!(tokio::time::timeout(self.ack_wait, rx).await, Ok(Ok(_)))
    }

    pub fn relays(&self) -> Vec<RelayState> {
        lock(&self.automation).board.states().cloned().collect()
    }

    pub fn relay(&self, id: &str) -> Option<RelayState> {
        lock(&self.automation).board.get(id).cloned()
    }

    /// Operator request from the API; `on` is ignored for `Clear`.
    pub async fn set_relay(&self, id: &str, on: bool, mode: RelayRequestMode) -> Result<RelayState, RelayError> {
        let now = self.clock.now_secs();
        let cmd = {
            let mut a = lock(&self.automation);
            match mode {
                RelayRequestMode::Manual => a.board.apply_manual(id, on, now)?.1,
                RelayRequestMode::Auto => a.board.request_auto(id, on, now)?.1,
                RelayRequestMode::Clear => {
                    a.board.clear(id)?;
                    None
                }
            }
        };
        if let Some(c) = cmd {
            self.dispatch(&c).await;
        }
        self.relay(id).ok_or_else(|| RelayError::UnknownRelay(id.to_string()))
    }

    pub fn latest(&self, room: &str) -> Vec<Reading> {
        lock(&self.state)
            .latest
            .iter()
            .filter(|((r, _), _)| r == room)
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn bands(&self) -> ComfortBands {
        lock(&self.state).bands.clone()
    }

    pub fn set_bands(&self, bands: ComfortBands) {
        lock(&self.state).bands = bands;
    }

    /// Comfort and light over `[from, to)` from the durable store.
    pub fn comfort(&self, room: &str, from: DateTime<Utc>, to: DateTime<Utc>) -> Result<RoomComfort, StoreError> {
        let devices: BTreeSet<String> = self.store.devices_in_room(room).into_iter().collect();
        let rows: Vec<Reading> = self
            .store
            .query(&QueryRange::new(from, to)?)?
            .into_iter()
            .filter(|r| devices.contains(&r.device_id))
            .collect();
        let (bands, threshold) = {
            let st = lock(&self.state);
            (st.bands.clone(), st.light_threshold)
        };
        let light = classify_light(&rows, threshold).ok();
        Ok(RoomComfort {
            room: room.to_string(),
            from,
            to,
            report: comfort_report(&rows, &bands),
            light: LightView {
                class: light.map(|l| l.0),
                mean_lux: light.map(|l| l.1),
                threshold,
            },
        })
    }

    pub fn occupancy(&self, room: &str) -> OccupancyView {
        let now = self.clock.now_secs();
        let st = lock(&self.state);
        let events = st.occupancy.get(room).cloned().unwrap_or_default();
        let ledger = occupancy_ledger(&events, self.clock.start());
        let presence = st
            .trackers
            .iter()
            .filter(|t| t.room == room)
            .map(|t| TrackerPresence {
                tracker: t.id.clone(),
                mac: t.mac,
                presence: presence(st.scans.get(&t.scanner).map_or(&[][..], |v| v), t.mac, now, st.presence_window),
            })
            .collect();
        OccupancyView {
            room: room.to_string(),
            count: ledger.current(),
            ledger,
            presence,
        }
    }

    /// Predicted value per hour of day; `None` for untrained hours.
    pub fn predictions(&self, room: &str, metric: Metric) -> Vec<(u8, Option<f64>)> {
        let st = lock(&self.state);
        (0..24u8).map(|h| (h, st.profile.predict(room, metric, h).ok())).collect()
    }

    pub fn add_feedback(&self, f: FeedbackRecord) {
        lock(&self.state).feedback.push(f);
    }

    pub fn feedback(&self, room: Option<&str>) -> Vec<FeedbackRecord> {
        lock(&self.state)
            .feedback
            .iter()
            .filter(|f| room.is_none_or(|r| f.room_id == r))
            .cloned()
            .collect()
    }

    /// Stops link tasks; pending writes are dropped.
    pub fn shutdown(&self) {
        lock(&self.zwave_tx).clear();
        for t in lock(&self.tasks).drain(..) {
            t.abort();
        }
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        for t in lock(&self.tasks).drain(..) {
            t.abort();
        }
    }
}
