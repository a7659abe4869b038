//! Hour-of-day exponential smoothing predictor.

use std::collections::BTreeMap;

use chrono::Timelike;
use serde::{Deserialize, Serialize};

use crate::model::{Metric, Reading};

pub const DEFAULT_ALPHA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub smoothed: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("NO_MODEL")]
pub struct NoModel;

#[derive(Debug, Clone, PartialEq)]
pub struct HourlyProfile {
    alpha: f64,
    slots: BTreeMap<(String, Metric, u8), Slot>,
}

impl Default for HourlyProfile {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHA)
    }
}

impl HourlyProfile {
    pub fn new(alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha < 1.0, "smoothing factor must be in (0, 1)");
        HourlyProfile {
            alpha,
            slots: BTreeMap::new(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn update(&mut self, r: &Reading) {
        let hour = r.ts.hour() as u8;
        self.observe(&r.room_id, r.metric, hour, r.value);
    }

    pub fn observe(&mut self, room: &str, metric: Metric, hour: u8, value: f64) {
        let alpha = self.alpha;
        self.slots
            .entry((room.to_string(), metric, hour))
            .and_modify(|s| {
                s.smoothed = alpha * value + (1.0 - alpha) * s.smoothed;
                s.count += 1;
            })
            .or_insert(Slot {
                smoothed: value,
                count: 1,
            });
    }

    pub fn predict(&self, room: &str, metric: Metric, hour: u8) -> Result<f64, NoModel> {
        self.slots
            .get(&(room.to_string(), metric, hour))
            .filter(|s| s.count >= 1)
            .map(|s| s.smoothed)
            .ok_or(NoModel)
    }

    pub fn slot(&self, room: &str, metric: Metric, hour: u8) -> Option<Slot> {
        self.slots.get(&(room.to_string(), metric, hour)).copied()
    }
}
