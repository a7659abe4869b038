//! Occupancy ledger: camera counts set the head count, door events are kept
//! only as annotations.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{Metric, Reading};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupancyKind {
    DoorOpen,
    DoorClosed,
    Motion,
    CameraCount,
    PresenceSeen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyEvent {
    pub room_id: String,
    pub kind: OccupancyKind,
    pub value: f64,
    pub ts: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid occupancy event value {value} for {kind:?}")]
pub struct InvalidEvent {
    pub kind: OccupancyKind,
    pub value: f64,
}

impl OccupancyEvent {
    pub fn new(
        room_id: impl Into<String>,
        kind: OccupancyKind,
        value: f64,
        ts: DateTime<Utc>,
    ) -> Result<Self, InvalidEvent> {
        let ok = match kind {
            OccupancyKind::CameraCount => value >= 0.0 && value.fract() == 0.0,
            OccupancyKind::DoorOpen | OccupancyKind::DoorClosed => value == 0.0 || value == 1.0,
            OccupancyKind::Motion | OccupancyKind::PresenceSeen => value == 0.0 || value == 1.0,
        };
        if !ok || !value.is_finite() {
            return Err(InvalidEvent { kind, value });
        }
        Ok(OccupancyEvent {
            room_id: room_id.into(),
            kind,
            value,
            ts,
        })
    }

    /// Maps door, motion, camera and presence readings onto events.
    pub fn from_reading(r: &Reading) -> Option<Self> {
        let kind = match r.metric {
            Metric::Door if r.value == 1.0 => OccupancyKind::DoorOpen,
            Metric::Door => OccupancyKind::DoorClosed,
            Metric::Motion => OccupancyKind::Motion,
            Metric::CameraCount => OccupancyKind::CameraCount,
            Metric::Presence => OccupancyKind::PresenceSeen,
            _ => return None,
        };
        OccupancyEvent::new(r.room_id.clone(), kind, r.value, r.ts).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    /// `(ts, count)` steps, starting with the initial zero.
    pub steps: Vec<(DateTime<Utc>, u32)>,
    /// Door transitions that could not be attributed to a count change.
    pub unattributed: Vec<(DateTime<Utc>, OccupancyKind)>,
}

impl Ledger {
    pub fn count_at(&self, t: DateTime<Utc>) -> u32 {
        self.steps
            .iter()
            .take_while(|(ts, _)| *ts <= t)
            .last()
            .map_or(0, |(_, c)| *c)
    }

    pub fn current(&self) -> u32 {
        self.steps.last().map_or(0, |(_, c)| *c)
    }
}

/// Builds the step series from time-ordered events, starting at count 0 at `t0`.
pub fn occupancy_ledger(events: &[OccupancyEvent], t0: DateTime<Utc>) -> Ledger {
    let mut steps = vec![(t0, 0u32)];
    let mut unattributed = Vec::new();
    for ev in events {
        match ev.kind {
            OccupancyKind::CameraCount => {
                if ev.value < 0.0 || ev.value.fract() != 0.0 {
                    continue;
                }
                let count = ev.value as u32;
                if steps.last().map(|(_, c)| *c) != Some(count) {
                    steps.push((ev.ts, count));
                }
            }
            OccupancyKind::DoorOpen | OccupancyKind::DoorClosed => {
                unattributed.push((ev.ts, ev.kind));
            }
            OccupancyKind::Motion | OccupancyKind::PresenceSeen => {}
        }
    }
    Ledger { steps, unattributed }
}
