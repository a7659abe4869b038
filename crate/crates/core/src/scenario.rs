//! Scenario files: one TOML document describing the clock, rooms, devices,
//! mesh, cameras, presence trackers, comfort settings and rules of a run.
//!
//! Parsing and validation collect every problem found, each anchored to the
//! line and column of the offending value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::SocketAddr;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::Deserialize;
use toml::Spanned;

use crate::analytics::comfort::{ComfortBand, ComfortBands, DEFAULT_LIGHT_THRESHOLD};
use crate::analytics::presence::DEFAULT_PRESENCE_WINDOW;
use crate::analytics::profile::DEFAULT_ALPHA;
use crate::automation::{Condition, Rule, Switch};
use crate::meshnet::{LinkParams, MeshConfig, Topology, SINK};
use crate::model::{parse_ts, Address, DeviceDescriptor, MacAddr, Metric, Protocol};
use crate::protosim::ble::characteristic;
use crate::protosim::device::{NearbyWindow, ScriptEvent, DEFAULT_POLL_INTERVAL};
use crate::protosim::{SignalModel, SimDeviceConfig};

/// The bundled scenario: two dormitory rooms and a lab.
pub const DEFAULT_SCENARIO: &str = include_str!("../../../scenarios/default.toml");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}", render(.0))]
    Invalid(Vec<Diagnostic>),
}

fn render(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

// ---- raw file schema ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    clock: RawClock,
    #[serde(default)]
    store: RawStore,
    #[serde(default)]
    api: RawApi,
    weather: Option<RawWeather>,
    #[serde(default)]
    rooms: Vec<RawRoom>,
    #[serde(default)]
    devices: Vec<RawDevice>,
    mesh: Option<RawMesh>,
    #[serde(default)]
    cameras: Vec<RawCamera>,
    #[serde(default)]
    presence: Vec<RawTracker>,
    #[serde(default)]
    comfort: RawComfort,
    #[serde(default)]
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClock {
    start: Spanned<String>,
    compression: Spanned<f64>,
    duration_hours: Spanned<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawStore {
    root: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawApi {
    bind: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeather {
    endpoint: Option<String>,
    stub: Option<SignalModel>,
    #[serde(default = "default_weather_interval")]
    interval_s: u64,
    #[serde(default)]
    listen: Option<Spanned<String>>,
}

fn default_weather_interval() -> u64 {
    600
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoom {
    id: Spanned<String>,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDevice {
    id: Spanned<String>,
    protocol: Spanned<Protocol>,
    address: Spanned<toml::Value>,
    room: Spanned<String>,
    metrics: Spanned<Vec<Metric>>,
    poll_interval_s: Option<Spanned<u64>>,
    report_interval_s: Option<Spanned<u64>>,
    listen: Option<Spanned<String>>,
    signals: Option<Spanned<BTreeMap<Metric, SignalModel>>>,
    #[serde(default)]
    events: Vec<RawEvent>,
    #[serde(default)]
    nearby: Vec<RawNearby>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    at: Spanned<String>,
    on: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNearby {
    mac: Spanned<String>,
    from: Spanned<String>,
    to: Spanned<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMesh {
    #[serde(default = "default_mesh_ttl")]
    ttl: u8,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_mesh_retries")]
    retries: u8,
    #[serde(default)]
    links: Vec<RawLink>,
}

fn default_mesh_ttl() -> u8 {
    MeshConfig::default().ttl
}

fn default_mesh_retries() -> u8 {
    MeshConfig::default().retries
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    a: Spanned<u16>,
    b: Spanned<u16>,
    loss: Option<Spanned<f64>>,
    #[serde(default)]
    latency_ms: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCamera {
    id: Spanned<String>,
    room: Spanned<String>,
    #[serde(default)]
    events: Vec<RawCount>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCount {
    at: Spanned<String>,
    count: Spanned<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTracker {
    id: Spanned<String>,
    mac: Spanned<String>,
    scanner: Spanned<String>,
    #[serde(default = "default_scan_interval")]
    interval_s: u64,
}

fn default_scan_interval() -> u64 {
    60
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawComfort {
    #[serde(default)]
    bands: BTreeMap<Metric, Spanned<RawBand>>,
    light_threshold: Option<f64>,
    presence_window_s: Option<u64>,
    alpha: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBand {
    lo: f64,
    hi: f64,
    span: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    id: Spanned<String>,
    room: Spanned<String>,
    relay: Spanned<String>,
    target: Switch,
    #[serde(default)]
    release_state: Option<Switch>,
    #[serde(default)]
    hold_s: u64,
    when: Vec<Condition>,
}

// ---- validated scenario ----

#[derive(Debug, Clone, PartialEq)]
pub struct Room {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub config: SimDeviceConfig,
    /// Endpoint the simulator listens on; port 0 picks a free port.
    pub listen: SocketAddr,
    /// Mesh report interval for `zigbee_sim` devices.
    pub report_interval: Option<Duration>,
}

impl DeviceSpec {
    pub fn id(&self) -> &str {
        &self.config.descriptor.device_id
    }

    pub fn descriptor(&self) -> &DeviceDescriptor {
        &self.config.descriptor
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeatherSource {
    Endpoint(String),
    Stub { model: SignalModel, listen: SocketAddr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSpec {
    pub source: WeatherSource,
    pub interval: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshSpec {
    pub topology: Topology,
    pub config: MeshConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: String,
    pub room: String,
    pub events: Vec<(DateTime<Utc>, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracker {
    pub id: String,
    pub mac: MacAddr,
    pub scanner: String,
    pub interval: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub start: DateTime<Utc>,
    pub compression: f64,
    pub duration: Duration,
    pub store_root: Option<PathBuf>,
    pub api_bind: Option<SocketAddr>,
    pub weather: Option<WeatherSpec>,
    pub rooms: Vec<Room>,
    pub devices: Vec<DeviceSpec>,
    pub mesh: Option<MeshSpec>,
    pub cameras: Vec<Camera>,
    pub trackers: Vec<Tracker>,
    pub bands: ComfortBands,
    pub light_threshold: f64,
    pub presence_window: Duration,
    pub alpha: f64,
    pub rules: Vec<Rule>,
}

/// Byte offset to 1-based (line, column).
fn position(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    (line, column)
}

struct Checker<'a> {
    src: &'a str,
    diags: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn at(&mut self, span: Range<usize>, message: impl Into<String>) {
        let (line, column) = position(self.src, span.start);
        self.diags.push(Diagnostic {
            line,
            column,
            message: message.into(),
        });
    }

    fn ts(&mut self, raw: &Spanned<String>) -> Option<DateTime<Utc>> {
        let t = parse_ts(raw.get_ref());
        if t.is_none() {
            self.at(raw.span(), format!("bad timestamp `{}`, expected YYYY-MM-DDTHH:MM:SSZ", raw.get_ref()));
        }
        t
    }

    fn addr(&mut self, raw: &Spanned<String>) -> Option<SocketAddr> {
        let a = raw.get_ref().parse().ok();
        if a.is_none() {
            self.at(raw.span(), format!("bad socket address `{}`", raw.get_ref()));
        }
        a
    }
}

fn loopback_any() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

fn metric_fits(protocol: Protocol, m: Metric) -> bool {
    match protocol {
        Protocol::BleSim | Protocol::ZigbeeSim => characteristic::for_metric(m).is_some(),
        Protocol::ZwaveSim => matches!(m, Metric::Door | Metric::Motion | Metric::Relay),
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&src)
    }

    pub fn bundled() -> Self {
        Self::parse(DEFAULT_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn parse(src: &str) -> Result<Self, ScenarioError> {
        let raw: RawFile = match toml::from_str(src) {
            Ok(r) => r,
            Err(e) => {
                let (line, column) = e.span().map_or((1, 1), |s| position(src, s.start));
                return Err(ScenarioError::Invalid(vec![Diagnostic {
                    line,
                    column,
                    message: e.message().trim().to_string(),
                }]));
            }
        };
        let mut c = Checker { src, diags: Vec::new() };
        let scenario = build(raw, &mut c);
        if c.diags.is_empty() {
            Ok(scenario)
        } else {
            c.diags.sort_by_key(|d| (d.line, d.column));
            Err(ScenarioError::Invalid(c.diags))
        }
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.start + chrono::Duration::from_std(self.duration).unwrap_or_default()
    }

    pub fn device(&self, id: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.id() == id)
    }

    pub fn room_ids(&self) -> impl Iterator<Item = &str> {
        self.rooms.iter().map(|r| r.id.as_str())
    }
}

fn build(raw: RawFile, c: &mut Checker) -> Scenario {
    let start = c.ts(&raw.clock.start).unwrap_or_default();
    let compression = *raw.clock.compression.get_ref();
    if !(compression.is_finite() && compression > 0.0) {
        c.at(raw.clock.compression.span(), "compression must be a positive number");
    }
    let hours = *raw.clock.duration_hours.get_ref();
    if !(hours.is_finite() && hours > 0.0) {
        c.at(raw.clock.duration_hours.span(), "duration_hours must be positive");
    }
    let duration = Duration::from_secs_f64(if hours.is_finite() && hours > 0.0 { hours * 3600.0 } else { 0.0 });
    let api_bind = raw.api.bind.as_ref().and_then(|b| c.addr(b));

    let weather = raw.weather.as_ref().and_then(|w| {
        let interval = Duration::from_secs(w.interval_s.max(1));
        let source = match (&w.endpoint, &w.stub) {
            (Some(e), None) => WeatherSource::Endpoint(e.clone()),
            (None, Some(m)) => WeatherSource::Stub {
                model: m.clone(),
                listen: w.listen.as_ref().and_then(|l| c.addr(l)).unwrap_or_else(loopback_any),
            },
            _ => {
                c.at(0..0, "[weather] needs exactly one of `endpoint` or `stub`");
                return None;
            }
        };
        Some(WeatherSpec { source, interval })
    });

    let mut rooms = Vec::new();
    let mut room_ids = BTreeSet::new();
    for r in &raw.rooms {
        if !room_ids.insert(r.id.get_ref().clone()) {
            c.at(r.id.span(), format!("duplicate room id `{}`", r.id.get_ref()));
            continue;
        }
        rooms.push(Room {
            id: r.id.get_ref().clone(),
            name: r.name.clone().unwrap_or_else(|| r.id.get_ref().clone()),
        });
    }

    let mesh = raw.mesh.as_ref().map(|m| {
        let mut topology = Topology::new();
        for l in &m.links {
            let (a, b) = (*l.a.get_ref(), *l.b.get_ref());
            let params = LinkParams {
                loss: l.loss.as_ref().map_or(0.0, |x| *x.get_ref()),
                latency: Duration::from_millis(l.latency_ms),
            };
            let added = topology
                .add_node(a)
                .and_then(|_| topology.add_node(b))
                .and_then(|_| topology.add_link(a, b, params));
            if let Err(e) = added {
                let span = match (&e, &l.loss) {
                    (crate::meshnet::TopologyError::BadLoss(_), Some(loss)) => loss.span(),
                    _ => l.b.span(),
                };
                c.at(span, format!("mesh link {a}-{b}: {e}"));
            }
        }
        MeshSpec {
            topology,
            config: MeshConfig {
                ttl: m.ttl,
                retries: m.retries,
                seed: m.seed,
                ..MeshConfig::default()
            },
        }
    });

    let mut devices = Vec::new();
    let mut device_ids = BTreeSet::new();
    let mut zwave_nodes = BTreeSet::new();
    let mut mesh_nodes = BTreeSet::new();
    for d in &raw.devices {
        let id = d.id.get_ref().clone();
        if !device_ids.insert(id.clone()) {
            c.at(d.id.span(), format!("duplicate device id `{id}`"));
            continue;
        }
        if !room_ids.contains(d.room.get_ref()) {
            c.at(d.room.span(), format!("device `{id}` references unknown room `{}`", d.room.get_ref()));
        }
        let protocol = *d.protocol.get_ref();
        let address = match (protocol, d.address.get_ref()) {
            (Protocol::BleSim, toml::Value::String(s)) => s.parse::<MacAddr>().ok().map(Address::Mac),
            (Protocol::ZwaveSim, toml::Value::Integer(n)) => u8::try_from(*n).ok().map(|n| Address::Node(n as u16)),
            (Protocol::ZigbeeSim, toml::Value::Integer(n)) => u16::try_from(*n).ok().map(Address::Node),
            _ => None,
        };
        let Some(address) = address else {
            let want = match protocol {
                Protocol::BleSim => "a MAC address string",
                Protocol::ZwaveSim => "a node id in 0..=255",
                Protocol::ZigbeeSim => "a node id in 0..=65535",
            };
            c.at(d.address.span(), format!("device `{id}`: {protocol} address must be {want}"));
            continue;
        };
        match (protocol, address) {
            (Protocol::ZwaveSim, Address::Node(n)) if !zwave_nodes.insert(n) => {
                c.at(d.address.span(), format!("duplicate z-wave node id {n}"));
            }
            (Protocol::ZigbeeSim, Address::Node(n)) => {
                if n == SINK {
                    c.at(d.address.span(), format!("device `{id}` cannot use the sink node {SINK}"));
                } else if !mesh.as_ref().is_some_and(|m| m.topology.contains(n)) {
                    c.at(d.address.span(), format!("device `{id}` references unknown mesh node {n}"));
                } else if !mesh_nodes.insert(n) {
                    c.at(d.address.span(), format!("duplicate mesh node id {n}"));
                }
            }
            _ => {}
        }
        let metrics = d.metrics.get_ref().clone();
        if metrics.is_empty() {
            c.at(d.metrics.span(), format!("device `{id}` declares no metrics"));
        }
        if let Some(m) = metrics.iter().find(|m| !metric_fits(protocol, **m)) {
            c.at(d.metrics.span(), format!("device `{id}`: metric {m} is not available over {protocol}"));
        }
        let signals = d.signals.as_ref().map(|s| s.get_ref().clone()).unwrap_or_default();
        if let Some(m) = signals.keys().find(|m| !metrics.contains(m)) {
            let span = d.signals.as_ref().map_or(d.id.span(), |s| s.span());
            c.at(span, format!("device `{id}` has a signal for {m} which it does not report"));
        }
        let poll_interval = match (&d.poll_interval_s, protocol) {
            (Some(p), Protocol::BleSim) if *p.get_ref() == 0 => {
                c.at(p.span(), "poll_interval_s must be positive");
                None
            }
            (Some(p), Protocol::BleSim) => Some(Duration::from_secs(*p.get_ref())),
            (Some(p), _) => {
                c.at(p.span(), format!("device `{id}`: poll_interval_s applies to ble_sim devices only"));
                None
            }
            (None, Protocol::BleSim) => Some(DEFAULT_POLL_INTERVAL),
            (None, _) => None,
        };
        let report_interval = match (&d.report_interval_s, protocol) {
            (Some(p), Protocol::ZigbeeSim) if *p.get_ref() > 0 => Some(Duration::from_secs(*p.get_ref())),
            (Some(p), _) => {
                c.at(p.span(), format!("device `{id}`: report_interval_s must be positive and applies to zigbee_sim devices only"));
                None
            }
            (None, Protocol::ZigbeeSim) => Some(DEFAULT_POLL_INTERVAL),
            (None, _) => None,
        };
        let mut events = Vec::new();
        if !d.events.is_empty() && !metrics.iter().any(|m| matches!(m, Metric::Door | Metric::Motion)) {
            c.at(d.id.span(), format!("device `{id}` has events but reports neither door nor motion"));
        }
        for e in &d.events {
            if let Some(at) = c.ts(&e.at) {
                events.push(ScriptEvent { at, on: e.on });
            }
        }
        events.sort_by_key(|e| e.at);
        let mut nearby = Vec::new();
        if !d.nearby.is_empty() && protocol != Protocol::BleSim {
            c.at(d.id.span(), format!("device `{id}`: nearby windows need a ble_sim scanner"));
        }
        for n in &d.nearby {
            let mac = n.mac.get_ref().parse::<MacAddr>();
            if mac.is_err() {
                c.at(n.mac.span(), format!("malformed MAC address `{}`", n.mac.get_ref()));
            }
            if let (Ok(mac), Some(from), Some(to)) = (mac, c.ts(&n.from), c.ts(&n.to)) {
                nearby.push(NearbyWindow { mac, from, to });
            }
        }
        let listen = d.listen.as_ref().and_then(|l| c.addr(l)).unwrap_or_else(loopback_any);
        let descriptor = DeviceDescriptor {
            device_id: id,
            protocol,
            address,
            room_id: d.room.get_ref().clone(),
            metrics,
            poll_interval,
        };
        if let Err(e) = descriptor.validate() {
            c.at(d.id.span(), e.to_string());
        }
        devices.push(DeviceSpec {
            config: SimDeviceConfig {
                descriptor,
                signals,
                events,
                nearby,
            },
            listen,
            report_interval,
        });
    }
    if !mesh_nodes.is_empty() && !mesh.as_ref().is_some_and(|m| m.topology.contains(SINK)) {
        c.at(0..0, format!("mesh has zigbee devices but no sink node {SINK}"));
    }

    let mut cameras = Vec::new();
    for cam in &raw.cameras {
        let id = cam.id.get_ref().clone();
        if !device_ids.insert(id.clone()) {
            c.at(cam.id.span(), format!("duplicate device id `{id}`"));
        }
        if !room_ids.contains(cam.room.get_ref()) {
            c.at(cam.room.span(), format!("camera `{id}` references unknown room `{}`", cam.room.get_ref()));
        }
        let mut events = Vec::new();
        for e in &cam.events {
            let n = *e.count.get_ref();
            if !(0..=u32::MAX as i64).contains(&n) {
                c.at(e.count.span(), format!("camera count must be a non-negative integer, got {n}"));
                continue;
            }
            if let Some(at) = c.ts(&e.at) {
                events.push((at, n as u32));
            }
        }
        events.sort_by_key(|e| e.0);
        cameras.push(Camera {
            id,
            room: cam.room.get_ref().clone(),
            events,
        });
    }

    let mut trackers = Vec::new();
    for t in &raw.presence {
        let id = t.id.get_ref().clone();
        if !device_ids.insert(id.clone()) {
            c.at(t.id.span(), format!("duplicate device id `{id}`"));
        }
        match devices.iter().find(|d| d.id() == t.scanner.get_ref()) {
            None => c.at(
                t.scanner.span(),
                format!("presence tracker `{id}` references unknown scanner `{}`", t.scanner.get_ref()),
            ),
            Some(d) if d.descriptor().protocol != Protocol::BleSim => {
                c.at(t.scanner.span(), format!("scanner `{}` is not a ble_sim device", t.scanner.get_ref()))
            }
            Some(_) => {}
        }
        match t.mac.get_ref().parse::<MacAddr>() {
            Ok(mac) => trackers.push(Tracker {
                id,
                mac,
                scanner: t.scanner.get_ref().clone(),
                interval: Duration::from_secs(t.interval_s.max(1)),
            }),
            Err(e) => c.at(t.mac.span(), e.to_string()),
        }
    }

    let mut bands = ComfortBands::default();
    for (metric, b) in &raw.comfort.bands {
        let r = b.get_ref();
        match ComfortBand::new(*metric, r.lo, r.hi, r.span) {
            Ok(band) => {
                let _ = bands.set(band);
            }
            Err(e) => c.at(b.span(), e.to_string()),
        }
    }
    let alpha = raw.comfort.alpha.as_ref().map_or(DEFAULT_ALPHA, |a| {
        let v = *a.get_ref();
        if !(v > 0.0 && v < 1.0) {
            c.at(a.span(), "alpha must lie strictly between 0 and 1");
            return DEFAULT_ALPHA;
        }
        v
    });

    let mut rules = Vec::new();
    let mut rule_ids = BTreeSet::new();
    for r in &raw.rules {
        let id = r.id.get_ref().clone();
        if !rule_ids.insert(id.clone()) {
            c.at(r.id.span(), format!("duplicate rule id `{id}`"));
        }
        if !room_ids.contains(r.room.get_ref()) {
            c.at(r.room.span(), format!("rule `{id}` references unknown room `{}`", r.room.get_ref()));
        }
        match devices.iter().find(|d| d.id() == r.relay.get_ref()) {
            None => c.at(r.relay.span(), format!("rule `{id}` references unknown relay `{}`", r.relay.get_ref())),
            Some(d) if !d.descriptor().metrics.contains(&Metric::Relay) => c.at(
                r.relay.span(),
                format!("rule `{id}`: device `{}` is not a relay", r.relay.get_ref()),
            ),
            Some(_) => {}
        }
        let rule = Rule {
            id,
            room: r.room.get_ref().clone(),
            relay: r.relay.get_ref().clone(),
            target: r.target,
            release_state: r.release_state,
            hold_s: r.hold_s,
            when: r.when.clone(),
        };
        if let Err(e) = rule.validate() {
            c.at(r.id.span(), e.to_string());
        }
        rules.push(rule);
    }

    Scenario {
        start,
        compression,
        duration,
        store_root: raw.store.root.map(PathBuf::from),
        api_bind,
        weather,
        rooms,
        devices,
        mesh,
        cameras,
        trackers,
        bands,
        light_threshold: raw.comfort.light_threshold.unwrap_or(DEFAULT_LIGHT_THRESHOLD),
        presence_window: raw.comfort.presence_window_s.map_or(DEFAULT_PRESENCE_WINDOW, Duration::from_secs),
        alpha,
        rules,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[clock]
start = "2017-03-01T00:00:00Z"
compression = 1440
duration_hours = 1

[[rooms]]
id = "lab"

[[devices]]
id = "lab-tag"
protocol = "ble_sim"
address = "A0:E6:F8:00:00:03"
room = "lab"
metrics = ["temperature", "light"]
"#;

    fn diags(src: &str) -> Vec<Diagnostic> {
        match Scenario::parse(src) {
            Err(ScenarioError::Invalid(d)) => d,
            Ok(_) => panic!("expected diagnostics"),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn bundled_scenario_is_valid() {
        let s = Scenario::bundled();
        assert_eq!(s.rooms.len(), 3);
        assert_eq!(s.duration, Duration::from_secs(86_400));
        assert_eq!(s.compression, 1440.0);
    }

    #[test]
    fn minimal_defaults() {
        let s = Scenario::parse(MINIMAL).unwrap();
        let d = &s.devices[0];
        assert_eq!(d.config.poll_interval(), Duration::from_secs(60));
        assert_eq!(d.listen.port(), 0);
        assert_eq!(s.bands, ComfortBands::default());
        assert_eq!(s.light_threshold, 300.0);
        assert_eq!(s.alpha, 0.3);
    }

    #[test]
    fn syntax_error_is_line_anchored() {
        let src = MINIMAL.replace("compression = 1440", "compression = ");
        let d = diags(&src);
        assert_eq!(d[0].line, 4);
    }

    #[test]
    fn unknown_metric_is_line_anchored() {
        let src = MINIMAL.replace("\"light\"]", "\"lux\"]");
        let d = diags(&src);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].line, 15);
    }

    #[test]
    fn position_counts_lines_and_columns() {
        assert_eq!(position("ab\ncd", 0), (1, 1));
        assert_eq!(position("ab\ncd", 4), (2, 2));
    }
}
