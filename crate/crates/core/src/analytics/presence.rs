//! MAC-based presence from BLE scan history.

use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::MacAddr;

pub const DEFAULT_PRESENCE_WINDOW: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub ts: DateTime<Utc>,
    pub macs: Vec<MacAddr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presence {
    Present,
    Absent,
}

/// Present iff `mac` shows up in a scan with `ts` in `(at - window, at]`.
pub fn presence(history: &[ScanRecord], mac: MacAddr, at: DateTime<Utc>, window: Duration) -> Presence {
    let earliest = at - chrono::Duration::from_std(window).unwrap_or_default();
    let seen = history
        .iter()
        .rev()
        .skip_while(|s| s.ts > at)
        .take_while(|s| s.ts > earliest)
        .any(|s| s.macs.contains(&mac));
    if seen {
        Presence::Present
    } else {
        Presence::Absent
    }
}
