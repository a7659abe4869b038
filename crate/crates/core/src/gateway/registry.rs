//! Device registry with liveness tracking and fixed-rate poll jobs.

use std::collections::BTreeMap;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::model::{DescriptorError, DeviceDescriptor, Metric, Protocol};
use crate::protosim::ble::characteristic;

/// Expected silence bound for devices that push instead of being polled.
pub const PUSH_INTERVAL: Duration = Duration::from_secs(600);
pub const MAX_CONSECUTIVE_FAULTS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Liveness {
    Online,
    Stale,
    Offline,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error("DUPLICATE_ID: {0}")]
    DuplicateId(String),
    #[error("UNSUPPORTED_PROTOCOL: {0} cannot carry {1}")]
    UnsupportedProtocol(Protocol, Metric),
    #[error(transparent)]
    Invalid(#[from] DescriptorError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceEntry {
    #[serde(flatten)]
    pub descriptor: DeviceDescriptor,
    #[serde(with = "crate::model::ts_serde")]
    pub last_seen: DateTime<Utc>,
    pub faults: u32,
    pub suspended: bool,
}

impl DeviceEntry {
    pub fn expected_interval(&self) -> Duration {
        match self.descriptor.protocol {
            Protocol::BleSim => self
                .descriptor
                .poll_interval
                .unwrap_or(crate::protosim::device::DEFAULT_POLL_INTERVAL),
            Protocol::ZwaveSim | Protocol::ZigbeeSim => PUSH_INTERVAL,
        }
    }

    /// Online within 2 intervals of the last sighting, stale within 5, then offline.
    /// A device suspended after repeated faults is offline regardless.
    pub fn liveness(&self, now: DateTime<Utc>) -> Liveness {
        if self.suspended {
            return Liveness::Offline;
        }
        let silent = (now - self.last_seen).to_std().unwrap_or_default();
        let interval = self.expected_interval();
        if silent <= interval * 2 {
            Liveness::Online
        } else if silent <= interval * 5 {
            Liveness::Stale
        } else {
            Liveness::Offline
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PollJob {
    pub device_id: String,
    pub metric: Metric,
    pub char_id: u8,
    pub next_due: DateTime<Utc>,
    pub interval: Duration,
}

impl PollJob {
    /// Fixed-rate: the due time moves by exactly one interval, never from "now".
    pub fn advance(&mut self) {
        self.next_due += chrono::Duration::from_std(self.interval).unwrap_or_default();
    }
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    devices: BTreeMap<String, DeviceEntry>,
    jobs: Vec<PollJob>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a device seen as of `now`; returns the number of poll jobs created.
    pub fn register(&mut self, d: DeviceDescriptor, now: DateTime<Utc>) -> Result<usize, RegistryError> {
        d.validate()?;
        if self.devices.contains_key(&d.device_id) {
            return Err(RegistryError::DuplicateId(d.device_id));
        }
        for m in &d.metrics {
            let ok = match d.protocol {
                Protocol::BleSim | Protocol::ZigbeeSim => characteristic::for_metric(*m).is_some(),
                Protocol::ZwaveSim => matches!(m, Metric::Door | Metric::Motion | Metric::Relay),
            };
            if !ok {
                return Err(RegistryError::UnsupportedProtocol(d.protocol, *m));
            }
        }
        let mut added = 0;
        if d.protocol == Protocol::BleSim {
            let interval = d.poll_interval.unwrap_or(crate::protosim::device::DEFAULT_POLL_INTERVAL);
            for m in &d.metrics {
                self.jobs.push(PollJob {
                    device_id: d.device_id.clone(),
                    metric: *m,
                    char_id: characteristic::for_metric(*m).expect("checked above"),
                    next_due: now,
                    interval,
                });
                added += 1;
            }
        }
        self.devices.insert(
            d.device_id.clone(),
            DeviceEntry {
                descriptor: d,
                last_seen: now,
                faults: 0,
                suspended: false,
            },
        );
        Ok(added)
    }

    pub fn get(&self, id: &str) -> Option<&DeviceEntry> {
        self.devices.get(id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &DeviceEntry> {
        self.devices.values()
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn by_node(&self, protocol: Protocol, node: u16) -> Option<&DeviceEntry> {
        self.devices
            .values()
            .find(|e| e.descriptor.protocol == protocol && e.descriptor.node_id() == Some(node))
    }

    pub fn jobs(&self) -> &[PollJob] {
        &self.jobs
    }

    pub fn jobs_mut(&mut self) -> &mut [PollJob] {
        &mut self.jobs
    }

    pub fn next_due(&self) -> Option<DateTime<Utc>> {
        self.jobs
            .iter()
            .filter(|j| !self.devices.get(&j.device_id).is_some_and(|d| d.suspended))
            .map(|j| j.next_due)
            .min()
    }

    pub fn record_success(&mut self, id: &str, now: DateTime<Utc>) {
        if let Some(e) = self.devices.get_mut(id) {
            e.last_seen = e.last_seen.max(now);
            e.faults = 0;
        }
    }

    /// Counts one failed exchange; returns true when this fault suspended the device.
    pub fn record_fault(&mut self, id: &str) -> bool {
        let Some(e) = self.devices.get_mut(id) else { return false };
        e.faults += 1;
        if e.faults >= MAX_CONSECUTIVE_FAULTS && !e.suspended {
            e.suspended = true;
            return true;
        }
        false
    }

    pub fn liveness(&self, id: &str, now: DateTime<Utc>) -> Option<Liveness> {
        self.devices.get(id).map(|e| e.liveness(now))
    }
}
