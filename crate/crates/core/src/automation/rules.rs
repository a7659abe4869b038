//! Declarative rules and the evaluation engine.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use chrono::{DateTime, Timelike, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::relay::{RelayBoard, RelayCommand};
use crate::model::Metric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl Comparator {
    pub fn test(self, a: f64, b: f64) -> bool {
        match self {
            Comparator::Lt => a < b,
            Comparator::Le => a <= b,
            Comparator::Gt => a > b,
            Comparator::Ge => a >= b,
            Comparator::Eq => a == b,
            Comparator::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

impl fmt::Display for Switch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_on() { "on" } else { "off" })
    }
}

/// Seconds since midnight UTC, written as `HH:MM` or `HH:MM:SS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TimeOfDay(pub u32);

impl TimeOfDay {
    pub fn of(t: DateTime<Utc>) -> Self {
        TimeOfDay(t.num_seconds_from_midnight())
    }
}

impl std::str::FromStr for TimeOfDay {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || format!("bad time of day `{s}`, expected HH:MM");
        if !(2..=3).contains(&parts.len()) {
            return Err(bad());
        }
        let nums: Vec<u32> = parts
            .iter()
            .map(|p| p.parse::<u32>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let (h, m, sec) = (nums[0], nums[1], nums.get(2).copied().unwrap_or(0));
        if h > 23 || m > 59 || sec > 59 {
            return Err(bad());
        }
        Ok(TimeOfDay(h * 3600 + m * 60 + sec))
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.0 / 3600, self.0 / 60 % 60)?;
        if !self.0.is_multiple_of(60) {
            write!(f, ":{:02}", self.0 % 60)?;
        }
        Ok(())
    }
}

impl Serialize for TimeOfDay {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeOfDay {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition {
    Metric {
        metric: Metric,
        op: Comparator,
        value: f64,
        #[serde(default)]
        hysteresis: f64,
    },
    Occupancy {
        op: Comparator,
        value: u32,
    },
    /// `[from, to)`, wrapping past midnight when `from > to`.
    Time { from: TimeOfDay, to: TimeOfDay },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub id: String,
    pub room: String,
    pub relay: String,
    pub target: Switch,
    /// State requested when the rule stops holding; none leaves the relay alone.
    #[serde(default)]
    pub release_state: Option<Switch>,
    #[serde(default)]
    pub hold_s: u64,
    pub when: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuleError {
    #[error("rule {0} has no conditions")]
    Empty(String),
    #[error("rule {0}: hysteresis must be finite and >= 0")]
    Hysteresis(String),
    #[error("rule {0}: threshold must be finite")]
    Threshold(String),
    #[error("rule {0}: time range must not be empty")]
    TimeRange(String),
}

impl Rule {
    pub fn hold(&self) -> Duration {
        Duration::from_secs(self.hold_s)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        if self.when.is_empty() {
            return Err(RuleError::Empty(self.id.clone()));
        }
        for c in &self.when {
            match c {
                Condition::Metric { value, hysteresis, .. } => {
                    if !value.is_finite() {
                        return Err(RuleError::Threshold(self.id.clone()));
                    }
                    if !(hysteresis.is_finite() && *hysteresis >= 0.0) {
                        return Err(RuleError::Hysteresis(self.id.clone()));
                    }
                }
                Condition::Time { from, to } if from == to => {
                    return Err(RuleError::TimeRange(self.id.clone()));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Latest state the engine reasons over.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub now: DateTime<Utc>,
    pub latest: BTreeMap<(String, Metric), f64>,
    pub occupancy: BTreeMap<String, u32>,
}

impl Snapshot {
    pub fn new(now: DateTime<Utc>) -> Self {
        Snapshot { now, ..Default::default() }
    }

    pub fn with_metric(mut self, room: &str, metric: Metric, v: f64) -> Self {
        self.latest.insert((room.to_string(), metric), v);
        self
    }

    pub fn with_occupancy(mut self, room: &str, count: u32) -> Self {
        self.occupancy.insert(room.to_string(), count);
        self
    }
}

#[derive(Debug, Clone, Default)]
struct RuleState {
    since: Option<DateTime<Utc>>,
    fired: bool,
    latched: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub relay: String,
    pub winner: String,
    pub overridden: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    rules: Vec<Rule>,
    state: Vec<RuleState>,
    last_conflicts: Vec<Conflict>,
}

fn latch(op: Comparator, threshold: f64, h: f64, v: f64, was: bool) -> bool {
    if !was {
        return op.test(v, threshold);
    }
    match op {
        // Release only once the value crosses back past threshold -/+ margin.
        Comparator::Gt | Comparator::Ge => v >= threshold - h,
        Comparator::Lt | Comparator::Le => v <= threshold + h,
        Comparator::Eq | Comparator::Ne => op.test(v, threshold),
    }
}

impl Engine {
    pub fn new(rules: Vec<Rule>) -> Self {
        let state = rules
            .iter()
            .map(|r| RuleState { latched: vec![false; r.when.len()], ..Default::default() })
            .collect();
        Engine { rules, state, last_conflicts: Vec::new() }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn last_conflicts(&self) -> &[Conflict] {
        &self.last_conflicts
    }

    fn condition_holds(rule: &Rule, idx: usize, latched: &mut [bool], snap: &Snapshot) -> bool {
        match &rule.when[idx] {
            Condition::Metric { metric, op, value, hysteresis } => {
                match snap.latest.get(&(rule.room.clone(), *metric)) {
                    Some(v) => {
                        latched[idx] = latch(*op, *value, *hysteresis, *v, latched[idx]);
                        latched[idx]
                    }
                    None => {
                        tracing::debug!(rule = %rule.id, metric = %metric, "no value yet, condition false");
                        latched[idx] = false;
                        false
                    }
                }
            }
            Condition::Occupancy { op, value } => {
                let n = snap.occupancy.get(&rule.room).copied().unwrap_or(0);
                op.test(n as f64, *value as f64)
            }
            Condition::Time { from, to } => {
                let t = TimeOfDay::of(snap.now);
                if from < to {
                    *from <= t && t < *to
                } else {
                    t >= *from || t < *to
                }
            }
        }
    }

    /// Updates hold timers and returns the state each relay should be in,
    /// last rule in file order winning.
    pub fn desired(&mut self, snap: &Snapshot) -> BTreeMap<String, (bool, String)> {
        let mut wants: BTreeMap<String, Vec<(bool, String)>> = BTreeMap::new();
        for (rule, st) in self.rules.iter().zip(self.state.iter_mut()) {
            // Evaluate every condition so latches see every sample.
            let results: Vec<bool> = (0..rule.when.len())
                .map(|i| Self::condition_holds(rule, i, &mut st.latched, snap))
                .collect();
            let holds = results.iter().all(|&b| b);
            if holds {
                let since = *st.since.get_or_insert(snap.now);
                let held = (snap.now - since).to_std().unwrap_or_default();
                if held >= rule.hold() {
                    st.fired = true;
                    wants.entry(rule.relay.clone()).or_default().push((rule.target.is_on(), rule.id.clone()));
                }
            } else {
                st.since = None;
                if std::mem::take(&mut st.fired) {
                    if let Some(rel) = rule.release_state {
                        wants.entry(rule.relay.clone()).or_default().push((rel.is_on(), rule.id.clone()));
                    }
                }
            }
        }
        self.last_conflicts.clear();
        let mut out = BTreeMap::new();
        for (relay, list) in wants {
            let (on, winner) = list.last().cloned().expect("entries are only created with a push");
            let overridden: Vec<String> = list
                .iter()
                .filter(|(v, _)| *v != on)
                .map(|(_, id)| id.clone())
                .collect();
            if !overridden.is_empty() {
                tracing::info!(relay = %relay, winner = %winner, ?overridden, "rule conflict, last rule wins");
                self.last_conflicts.push(Conflict { relay: relay.clone(), winner: winner.clone(), overridden });
            }
            out.insert(relay, (on, winner));
        }
        out
    }

    /// One evaluation pass: expires overrides, then emits commands for auto relays.
    pub fn evaluate(&mut self, snap: &Snapshot, board: &mut RelayBoard) -> Vec<RelayCommand> {
        board.expire_manual(snap.now);
        self.desired(snap)
            .into_iter()
            .filter_map(|(relay, (on, rule))| board.command_auto(&relay, on, &rule, snap.now))
            .collect()
    }
}
