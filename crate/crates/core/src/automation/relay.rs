//! Relay state table: actual state, auto/manual mode, pending commands.

use std::collections::BTreeMap;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const MANUAL_TTL: Duration = Duration::from_secs(3600);
pub const ACK_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actual {
    On,
    Off,
    Unknown,
}

impl Actual {
    pub fn from_bool(on: bool) -> Self {
        if on {
            Actual::On
        } else {
            Actual::Off
        }
    }

    pub fn matches(self, on: bool) -> bool {
        self == Actual::from_bool(on)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Auto,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandReason {
    Rule(String),
    Manual,
    Operator,
    Retry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayCommand {
    pub relay_id: String,
    pub node_id: u8,
    pub on: bool,
    pub seq: u8,
    pub reason: CommandReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pending {
    pub seq: u8,
    pub on: bool,
    #[serde(with = "crate::model::ts_serde")]
    pub sent_at: DateTime<Utc>,
    pub retried: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayState {
    pub relay_id: String,
    pub node_id: u8,
    pub actual: Actual,
    pub mode: Mode,
    /// Manual state requested by the operator; set iff mode is manual.
    pub manual_state: Option<bool>,
    #[serde(with = "opt_ts")]
    pub manual_expires: Option<DateTime<Utc>>,
    pub pending: Option<Pending>,
}

mod opt_ts {
    use chrono::{DateTime, Utc};
    use serde::{Serialize, Serializer, Deserialize, Deserializer, de::Error};

    pub fn serialize<S: Serializer>(t: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
        t.map(|t| crate::model::format_ts(&t)).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DateTime<Utc>>, D::Error> {
        match Option::<String>::deserialize(d)? {
            None => Ok(None),
            Some(raw) => crate::model::parse_ts(&raw)
                .map(Some)
                .ok_or_else(|| D::Error::custom(format!("bad timestamp `{raw}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RelayError {
    #[error("UNKNOWN_RELAY: {0}")]
    UnknownRelay(String),
    #[error("UNEXPECTED_ACK: {0}")]
    UnexpectedAck(String),
    #[error("relay {relay} is under manual override ({manual}) until {until}")]
    ManualConflict {
        relay: String,
        manual: &'static str,
        until: String,
    },
    #[error("relay {0} already registered")]
    Duplicate(String),
}

#[derive(Debug, Clone)]
pub struct RelayBoard {
    relays: BTreeMap<String, RelayState>,
    next_seq: u8,
    manual_ttl: Duration,
    ack_timeout: Duration,
}

impl Default for RelayBoard {
    fn default() -> Self {
        RelayBoard {
            relays: BTreeMap::new(),
            next_seq: 0,
            manual_ttl: MANUAL_TTL,
            ack_timeout: ACK_TIMEOUT,
        }
    }
}

fn add(t: DateTime<Utc>, d: Duration) -> DateTime<Utc> {
    t + chrono::Duration::from_std(d).unwrap_or_default()
}

impl RelayBoard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, relay_id: &str, node_id: u8) -> Result<(), RelayError> {
        if self.relays.contains_key(relay_id) {
            return Err(RelayError::Duplicate(relay_id.to_string()));
        }
        self.relays.insert(
            relay_id.to_string(),
            RelayState {
                relay_id: relay_id.to_string(),
                node_id,
                actual: Actual::Unknown,
                mode: Mode::Auto,
                manual_state: None,
                manual_expires: None,
                pending: None,
            },
        );
        Ok(())
    }

    pub fn get(&self, relay_id: &str) -> Option<&RelayState> {
        self.relays.get(relay_id)
    }

    pub fn states(&self) -> impl Iterator<Item = &RelayState> {
        self.relays.values()
    }

    pub fn by_node(&self, node_id: u8) -> Option<&RelayState> {
        self.relays.values().find(|r| r.node_id == node_id)
    }

    fn state_mut(&mut self, relay_id: &str) -> Result<&mut RelayState, RelayError> {
        self.relays
            .get_mut(relay_id)
            .ok_or_else(|| RelayError::UnknownRelay(relay_id.to_string()))
    }

    fn issue(&mut self, relay_id: &str, on: bool, reason: CommandReason, now: DateTime<Utc>) -> RelayCommand {
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        let st = self.relays.get_mut(relay_id).expect("caller checked registration");
        st.pending = Some(Pending { seq, on, sent_at: now, retried: false });
        RelayCommand {
            relay_id: relay_id.to_string(),
            node_id: st.node_id,
            on,
            seq,
            reason,
        }
    }

    /// True when a command for `on` is needed: actual differs and nothing
    /// equivalent is already in flight.
    fn needs(st: &RelayState, on: bool) -> bool {
        match &st.pending {
            Some(p) => p.on != on,
            None => !st.actual.matches(on),
        }
    }

    /// Operator override: manual mode for the ttl; repeats only refresh the expiry.
    pub fn apply_manual(
        &mut self,
        relay_id: &str,
        on: bool,
        now: DateTime<Utc>,
    ) -> Result<(RelayState, Option<RelayCommand>), RelayError> {
        let ttl = self.manual_ttl;
        let st = self.state_mut(relay_id)?;
        st.mode = Mode::Manual;
        st.manual_state = Some(on);
        st.manual_expires = Some(add(now, ttl));
        let cmd = Self::needs(st, on).then(|| self.issue(relay_id, on, CommandReason::Manual, now));
        Ok((self.relays[relay_id].clone(), cmd))
    }

    /// Drops any override and returns to auto mode; never sends a frame.
    pub fn clear(&mut self, relay_id: &str) -> Result<RelayState, RelayError> {
        let st = self.state_mut(relay_id)?;
        st.mode = Mode::Auto;
        st.manual_state = None;
        st.manual_expires = None;
        Ok(st.clone())
    }

    /// One-shot command that leaves the relay in auto mode. Refused while an
    /// opposite manual override is active.
    pub fn request_auto(
        &mut self,
        relay_id: &str,
        on: bool,
        now: DateTime<Utc>,
    ) -> Result<(RelayState, Option<RelayCommand>), RelayError> {
        let st = self.state_mut(relay_id)?;
        if st.mode == Mode::Manual {
            if st.manual_state == Some(on) {
                return Ok((st.clone(), None));
            }
            return Err(RelayError::ManualConflict {
                relay: relay_id.to_string(),
                manual: if st.manual_state == Some(true) { "on" } else { "off" },
                until: st
                    .manual_expires
                    .map(|t| crate::model::format_ts(&t))
                    .unwrap_or_default(),
            });
        }
        let cmd = Self::needs(st, on).then(|| self.issue(relay_id, on, CommandReason::Operator, now));
        Ok((self.relays[relay_id].clone(), cmd))
    }

    /// Command from the rules engine; only auto-mode relays are actuated.
    pub fn command_auto(&mut self, relay_id: &str, on: bool, rule_id: &str, now: DateTime<Utc>) -> Option<RelayCommand> {
        let st = self.relays.get(relay_id)?;
        if st.mode != Mode::Auto || !Self::needs(st, on) {
            return None;
        }
        Some(self.issue(relay_id, on, CommandReason::Rule(rule_id.to_string()), now))
    }

    /// Reverts overrides whose expiry has been reached. Returns the relays reverted.
    pub fn expire_manual(&mut self, now: DateTime<Utc>) -> Vec<String> {
        let mut out = Vec::new();
        for st in self.relays.values_mut() {
            if st.mode == Mode::Manual && st.manual_expires.is_some_and(|t| t <= now) {
                st.mode = Mode::Auto;
                st.manual_state = None;
                st.manual_expires = None;
                out.push(st.relay_id.clone());
            }
        }
        out
    }

    pub fn reconcile_ack(&mut self, relay_id: &str, on: bool) -> Result<RelayState, RelayError> {
        let st = self.state_mut(relay_id)?;
        if st.pending.take().is_none() {
            tracing::warn!(relay = relay_id, "UNEXPECTED_ACK");
            return Err(RelayError::UnexpectedAck(relay_id.to_string()));
        }
        st.actual = Actual::from_bool(on);
        Ok(st.clone())
    }

    /// Retries each timed-out command once; a second timeout marks the relay unknown.
    pub fn check_timeouts(&mut self, now: DateTime<Utc>) -> Vec<RelayCommand> {
        let timeout = self.ack_timeout;
        let mut retry = Vec::new();
        for st in self.relays.values_mut() {
            let Some(p) = &st.pending else { continue };
            if add(p.sent_at, timeout) > now {
                continue;
            }
            if p.retried {
                tracing::warn!(relay = %st.relay_id, "no ack after retry, state unknown");
                st.pending = None;
                st.actual = Actual::Unknown;
            } else {
                retry.push((st.relay_id.clone(), p.on));
            }
        }
        retry
            .into_iter()
            .map(|(id, on)| {
                let cmd = self.issue(&id, on, CommandReason::Retry, now);
                if let Some(p) = self.relays.get_mut(&id).and_then(|s| s.pending.as_mut()) {
                    p.retried = true;
                }
                cmd
            })
            .collect()
    }

    /// Earliest instant at which `check_timeouts` or `expire_manual` has work.
    pub fn next_deadline(&self) -> Option<DateTime<Utc>> {
        self.relays
            .values()
            .flat_map(|s| {
                let ack = s.pending.as_ref().map(|p| add(p.sent_at, self.ack_timeout));
                ack.into_iter().chain(s.manual_expires)
            })
            .min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ts_from_epoch;

    fn t(s: i64) -> DateTime<Utc> {
        ts_from_epoch(1_488_326_400 + s)
    }

    fn board() -> RelayBoard {
        let mut b = RelayBoard::new();
        b.register("r1", 7).unwrap();
        b
    }

    #[test]
    fn manual_on_sends_once() {
        let mut b = board();
        let (st, cmd) = b.apply_manual("r1", true, t(0)).unwrap();
        assert_eq!(st.mode, Mode::Manual);
        assert_eq!(st.manual_expires, Some(t(3600)));
        let cmd = cmd.unwrap();
        assert!(cmd.on);
        assert_eq!(cmd.node_id, 7);
        // Repeat while pending: no second frame.
        assert!(b.apply_manual("r1", true, t(1)).unwrap().1.is_none());
        b.reconcile_ack("r1", true).unwrap();
        assert!(b.apply_manual("r1", true, t(2)).unwrap().1.is_none());
        assert_eq!(b.get("r1").unwrap().actual, Actual::On);
    }

    #[test]
    fn clear_sends_nothing() {
        let mut b = board();
        b.apply_manual("r1", false, t(0)).unwrap();
        let st = b.clear("r1").unwrap();
        assert_eq!(st.mode, Mode::Auto);
        assert_eq!(st.manual_expires, None);
    }

    #[test]
    fn unknown_relay() {
        let mut b = board();
        assert!(matches!(b.apply_manual("zz", true, t(0)), Err(RelayError::UnknownRelay(_))));
        assert!(matches!(b.clear("zz"), Err(RelayError::UnknownRelay(_))));
    }

    #[test]
    fn manual_expiry() {
        let mut b = board();
        b.apply_manual("r1", true, t(0)).unwrap();
        assert!(b.expire_manual(t(3599)).is_empty());
        assert_eq!(b.expire_manual(t(3600)), vec!["r1".to_string()]);
        assert_eq!(b.get("r1").unwrap().mode, Mode::Auto);
    }

    #[test]
    fn auto_blocked_by_manual() {
        let mut b = board();
        b.apply_manual("r1", true, t(0)).unwrap();
        b.reconcile_ack("r1", true).unwrap();
        assert!(b.command_auto("r1", false, "x", t(5)).is_none());
        assert!(matches!(b.request_auto("r1", false, t(5)), Err(RelayError::ManualConflict { .. })));
        assert!(b.request_auto("r1", true, t(5)).unwrap().1.is_none());
    }

    #[test]
    fn ack_timeout_retries_once_then_unknown() {
        let mut b = board();
        let first = b.command_auto("r1", true, "rule", t(0)).unwrap();
        assert!(b.check_timeouts(t(9)).is_empty());
        let retry = b.check_timeouts(t(10));
        assert_eq!(retry.len(), 1);
        assert_eq!(retry[0].reason, CommandReason::Retry);
        assert_ne!(retry[0].seq, first.seq);
        assert!(b.check_timeouts(t(19)).is_empty());
        assert!(b.check_timeouts(t(20)).is_empty());
        let st = b.get("r1").unwrap();
        assert_eq!(st.actual, Actual::Unknown);
        assert!(st.pending.is_none());
    }

    #[test]
    fn unexpected_ack() {
        let mut b = board();
        assert_eq!(b.reconcile_ack("r1", true), Err(RelayError::UnexpectedAck("r1".into())));
        b.command_auto("r1", true, "rule", t(0)).unwrap();
        assert_eq!(b.reconcile_ack("r1", true).unwrap().actual, Actual::On);
    }

    #[test]
    fn seq_wraps() {
        let mut b = board();
        for i in 0..300u32 {
            let cmd = b.command_auto("r1", i % 2 == 0, "x", t(i as i64)).unwrap();
            assert_eq!(cmd.seq, (i % 256) as u8);
            b.reconcile_ack("r1", i % 2 == 0).unwrap();
        }
    }
}
