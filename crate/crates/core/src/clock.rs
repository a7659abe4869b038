//! Simulated clock running a fixed ratio faster than wall time.
//!
//! Two driving modes share one interface:
//!
//! * `free`: simulated time is derived from wall time on every call.
//! * `stepped`: simulated time only moves when a scheduler calls
//!   [`SimClock::advance_to`], usually through [`SimClock::pace_to`] which first
//!   waits for the matching wall instant. Work performed while the clock is held
//!   at an instant observes exactly that instant, which makes whole-day runs
//!   reproducible byte for byte.

use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use tokio::sync::watch;

use crate::model::ts_from_epoch;

#[derive(Debug)]
pub struct SimClock {
    start_ms: i64,
    compression: f64,
    wall_origin: Instant,
    stepped: bool,
    now_ms: watch::Sender<i64>,
}

impl SimClock {
    pub fn free(start: DateTime<Utc>, compression: f64) -> Self {
        Self::build(start, compression, false)
    }

    pub fn stepped(start: DateTime<Utc>, compression: f64) -> Self {
        Self::build(start, compression, true)
    }

    fn build(start: DateTime<Utc>, compression: f64, stepped: bool) -> Self {
        assert!(
            compression.is_finite() && compression > 0.0,
            "compression must be a positive ratio"
        );
        let start_ms = start.timestamp_millis();
        SimClock {
            start_ms,
            compression,
            wall_origin: Instant::now(),
            stepped,
            now_ms: watch::channel(start_ms).0,
        }
    }

    pub fn compression(&self) -> f64 {
        self.compression
    }

    pub fn is_stepped(&self) -> bool {
        self.stepped
    }

    pub fn start(&self) -> DateTime<Utc> {
        DateTime::from_timestamp_millis(self.start_ms).unwrap_or_default()
    }

    pub fn now_ms(&self) -> i64 {
        if self.stepped {
            *self.now_ms.borrow()
        } else {
            let wall = self.wall_origin.elapsed().as_secs_f64();
            self.start_ms + (wall * self.compression * 1000.0).floor() as i64
        }
    }

    pub fn now(&self) -> DateTime<Utc> {
        DateTime::from_timestamp_millis(self.now_ms()).unwrap_or_default()
    }

    /// Current instant truncated to whole seconds.
    pub fn now_secs(&self) -> DateTime<Utc> {
        ts_from_epoch(self.now_ms().div_euclid(1000))
    }

    /// Moves a stepped clock forward; earlier instants are ignored.
    pub fn advance_to(&self, t: DateTime<Utc>) {
        if !self.stepped {
            return;
        }
        let target = t.timestamp_millis();
        self.now_ms.send_if_modified(|cur| {
            if target > *cur {
                *cur = target;
                true
            } else {
                false
            }
        });
    }

    /// Wall-clock instant at which simulated time reaches `t`.
    pub fn wall_deadline(&self, t: DateTime<Utc>) -> Instant {
        let sim_ms = (t.timestamp_millis() - self.start_ms).max(0) as f64;
        self.wall_origin + Duration::from_secs_f64(sim_ms / 1000.0 / self.compression)
    }

    /// Wall duration corresponding to a simulated duration.
    pub fn wall_for(&self, sim: Duration) -> Duration {
        sim.div_f64(self.compression)
    }

    /// Sleeps until the wall instant matching `t`, then (stepped mode) sets the clock.
    pub async fn pace_to(&self, t: DateTime<Utc>) {
        tokio::time::sleep_until(self.wall_deadline(t).into()).await;
        self.advance_to(t);
    }

    /// Resolves once simulated time has reached `t`.
    pub async fn sleep_until(&self, t: DateTime<Utc>) {
        if self.stepped {
            let target = t.timestamp_millis();
            let mut rx = self.now_ms.subscribe();
            // Sender lives as long as self, so wait_for cannot fail here.
            let _ = rx.wait_for(|now| *now >= target).await;
        } else {
            tokio::time::sleep_until(self.wall_deadline(t).into()).await;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_ts;

    fn t0() -> DateTime<Utc> {
        parse_ts("2017-03-01T00:00:00Z").unwrap()
    }

    #[test]
    fn stepped_is_monotone() {
        let c = SimClock::stepped(t0(), 1440.0);
        assert_eq!(c.now(), t0());
        let t1 = t0() + chrono::Duration::seconds(60);
        c.advance_to(t1);
        assert_eq!(c.now(), t1);
        c.advance_to(t0());
        assert_eq!(c.now(), t1);
    }

    #[test]
    fn free_clock_tracks_compression() {
        let c = SimClock::free(t0(), 100.0);
        let wall = Instant::now();
        std::thread::sleep(Duration::from_millis(50));
        let sim = (c.now() - t0()).num_milliseconds() as f64 / 1000.0;
        let w = wall.elapsed().as_secs_f64();
        // Within one scheduler tick (10 ms wall) of c * w.
        assert!((sim - 100.0 * w).abs() <= 100.0 * 0.01, "sim {sim} wall {w}");
    }

    #[test]
    fn unit_compression_is_wall_time() {
        let c = SimClock::free(t0(), 1.0);
        std::thread::sleep(Duration::from_millis(20));
        let sim = (c.now() - t0()).num_milliseconds();
        assert!((20..60).contains(&sim), "{sim}");
        assert_eq!(c.wall_for(Duration::from_secs(3)), Duration::from_secs(3));
    }

    #[tokio::test]
    async fn sleep_until_wakes_on_advance() {
        let c = std::sync::Arc::new(SimClock::stepped(t0(), 1440.0));
        let t1 = t0() + chrono::Duration::seconds(30);
        let waiter = {
            let c = c.clone();
            tokio::spawn(async move {
                c.sleep_until(t1).await;
                c.now()
            })
        };
        tokio::task::yield_now().await;
        c.advance_to(t1);
        assert_eq!(waiter.await.unwrap(), t1);
    }

    #[tokio::test]
    async fn pacing_respects_compression() {
        let c = SimClock::stepped(t0(), 6000.0);
        let wall = Instant::now();
        c.pace_to(t0() + chrono::Duration::seconds(300)).await;
        // 300 sim-s at 6000x is 50 ms of wall time.
        assert!(wall.elapsed() >= Duration::from_millis(49));
        assert_eq!(c.now(), t0() + chrono::Duration::seconds(300));
    }
}
