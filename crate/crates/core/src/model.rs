//! Domain vocabulary shared by every subsystem: metrics, readings, devices.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

/// Wire/CSV timestamp layout: ISO-8601 UTC with seconds precision.
pub const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

pub fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.format(TS_FORMAT).to_string()
}

pub fn parse_ts(s: &str) -> Option<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(s, TS_FORMAT)
        .ok()
        .map(|n| Utc.from_utc_datetime(&n))
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.with_timezone(&Utc)))
}

/// Converts whole epoch seconds into a UTC instant.
pub fn ts_from_epoch(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(secs, 0).single().unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Temperature,
    Humidity,
    Light,
    Pressure,
    Door,
    Motion,
    Relay,
    OutdoorTemperature,
    CameraCount,
    Presence,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::Temperature,
        Metric::Humidity,
        Metric::Light,
        Metric::Pressure,
        Metric::Door,
        Metric::Motion,
        Metric::Relay,
        Metric::OutdoorTemperature,
        Metric::CameraCount,
        Metric::Presence,
    ];

    /// The single canonical unit string of the metric.
    pub fn unit(self) -> &'static str {
        match self {
            Metric::Temperature | Metric::OutdoorTemperature => "C",
            Metric::Humidity => "%RH",
            Metric::Light => "lux",
            Metric::Pressure => "mbar",
            Metric::Door | Metric::Motion | Metric::Relay | Metric::Presence => "bool",
            Metric::CameraCount => "persons",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(
            self,
            Metric::Door | Metric::Motion | Metric::Relay | Metric::Presence
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Temperature => "temperature",
            Metric::Humidity => "humidity",
            Metric::Light => "light",
            Metric::Pressure => "pressure",
            Metric::Door => "door",
            Metric::Motion => "motion",
            Metric::Relay => "relay",
            Metric::OutdoorTemperature => "outdoor_temperature",
            Metric::CameraCount => "camera_count",
            Metric::Presence => "presence",
        }
    }
}

pub fn canonical_unit(metric: Metric) -> &'static str {
    metric.unit()
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown metric `{0}`")]
pub struct UnknownMetric(pub String);

impl FromStr for Metric {
    type Err = UnknownMetric;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownMetric(s.to_string()))
    }
}

/// One timestamped measurement in the metric's canonical unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ReadingJson", try_from = "ReadingJson")]
pub struct Reading {
    pub device_id: String,
    pub room_id: String,
    pub metric: Metric,
    pub value: f64,
    pub ts: DateTime<Utc>,
}

impl Reading {
    pub fn new(
        device_id: impl Into<String>,
        room_id: impl Into<String>,
        metric: Metric,
        value: f64,
        ts: DateTime<Utc>,
    ) -> Self {
        Reading {
            device_id: device_id.into(),
            room_id: room_id.into(),
            metric,
            value,
            ts,
        }
    }

    pub fn unit(&self) -> &'static str {
        self.metric.unit()
    }
}

#[derive(Serialize, Deserialize)]
struct ReadingJson {
    device_id: String,
    room_id: String,
    metric: Metric,
    value: f64,
    unit: String,
    ts: String,
}

impl From<Reading> for ReadingJson {
    fn from(r: Reading) -> Self {
        ReadingJson {
            unit: r.metric.unit().to_string(),
            ts: format_ts(&r.ts),
            device_id: r.device_id,
            room_id: r.room_id,
            metric: r.metric,
            value: r.value,
        }
    }
}

impl TryFrom<ReadingJson> for Reading {
    type Error = String;

    fn try_from(j: ReadingJson) -> Result<Self, Self::Error> {
        if j.unit != j.metric.unit() {
            return Err(format!("unit `{}` does not match metric {}", j.unit, j.metric));
        }
        let ts = parse_ts(&j.ts).ok_or_else(|| format!("bad timestamp `{}`", j.ts))?;
        Ok(Reading {
            device_id: j.device_id,
            room_id: j.room_id,
            metric: j.metric,
            value: j.value,
            ts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("value not finite")]
    NotFinite,
    #[error("humidity range")]
    HumidityRange,
    #[error("light non-negative")]
    LightNegative,
    #[error("pressure range")]
    PressureRange,
    #[error("temperature range")]
    TemperatureRange,
    #[error("binary value")]
    NotBinary,
    #[error("count non-negative integer")]
    BadCount,
}

/// Returns every violated range rule of `r`; an empty list means valid.
pub fn validate_reading(r: &Reading) -> Result<(), Vec<Violation>> {
    let v = r.value;
    let mut out = Vec::new();
    if !v.is_finite() {
        out.push(Violation::NotFinite);
        return Err(out);
    }
    match r.metric {
        Metric::Humidity if !(0.0..=100.0).contains(&v) => out.push(Violation::HumidityRange),
        Metric::Light if v < 0.0 => out.push(Violation::LightNegative),
        Metric::Pressure if !(800.0..=1200.0).contains(&v) => out.push(Violation::PressureRange),
        Metric::Temperature | Metric::OutdoorTemperature if !(-60.0..=60.0).contains(&v) => {
            out.push(Violation::TemperatureRange)
        }
        Metric::CameraCount if v < 0.0 || v.fract() != 0.0 => out.push(Violation::BadCount),
        m if m.is_binary() && v != 0.0 && v != 1.0 => out.push(Violation::NotBinary),
        _ => {}
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    BleSim,
    ZwaveSim,
    ZigbeeSim,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::BleSim => "ble_sim",
            Protocol::ZwaveSim => "zwave_sim",
            Protocol::ZigbeeSim => "zigbee_sim",
        })
    }
}

/// Six-byte hardware address, rendered `AA:BB:CC:DD:EE:FF`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed MAC address `{0}`")]
pub struct BadMac(pub String);

impl FromStr for MacAddr {
    type Err = BadMac;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split([':', '-']).collect();
        if parts.len() != 6 {
            return Err(BadMac(s.to_string()));
        }
        let mut out = [0u8; 6];
        for (slot, part) in out.iter_mut().zip(parts) {
            if part.len() != 2 {
                return Err(BadMac(s.to_string()));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| BadMac(s.to_string()))?;
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Protocol-level address of a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Address {
    Mac(MacAddr),
    Node(u16),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub device_id: String,
    pub protocol: Protocol,
    pub address: Address,
    pub room_id: String,
    pub metrics: Vec<Metric>,
    /// Only meaningful for `ble_sim` devices.
    #[serde(default, with = "opt_secs", skip_serializing_if = "Option::is_none")]
    pub poll_interval: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DescriptorError {
    #[error("device `{0}`: address width does not match protocol {1}")]
    AddressWidth(String, Protocol),
    #[error("device `{0}`: poll interval is only valid for ble_sim devices")]
    PollInterval(String),
    #[error("device `{0}`: empty device id or metric list")]
    Empty(String),
}

impl DeviceDescriptor {
    pub fn validate(&self) -> Result<(), DescriptorError> {
        if self.device_id.is_empty() || self.metrics.is_empty() {
            return Err(DescriptorError::Empty(self.device_id.clone()));
        }
        let width_ok = match (self.protocol, self.address) {
            (Protocol::BleSim, Address::Mac(_)) => true,
            (Protocol::ZwaveSim, Address::Node(n)) => n <= u8::MAX as u16,
            (Protocol::ZigbeeSim, Address::Node(_)) => true,
            _ => false,
        };
        if !width_ok {
            return Err(DescriptorError::AddressWidth(
                self.device_id.clone(),
                self.protocol,
            ));
        }
        if self.poll_interval.is_some() && self.protocol != Protocol::BleSim {
            return Err(DescriptorError::PollInterval(self.device_id.clone()));
        }
        Ok(())
    }

    pub fn node_id(&self) -> Option<u16> {
        match self.address {
            Address::Node(n) => Some(n),
            Address::Mac(_) => None,
        }
    }
}

mod opt_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_u64(d.as_secs()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<u64>::deserialize(d)?.map(Duration::from_secs))
    }
}

/// Serde adapter writing instants as `YYYY-MM-DDTHH:MM:SSZ`.
pub mod ts_serde {
    use chrono::{DateTime, Utc};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_ts(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_ts(&raw).ok_or_else(|| D::Error::custom(format!("bad timestamp `{raw}`")))
    }
}
