//! Deterministic synthetic signal used by simulated sensors.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::Metric;

pub const DAY_SECS: f64 = 86_400.0;

/// `baseline + amplitude * sin(2*pi*(t - phase)/period) + N(0, noise_sigma)`,
/// clamped to `[min, max]`.
///
/// Noise is drawn from a generator keyed by `(seed, metric, t)`, so a value
/// depends only on the instant it is sampled at and never on call order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalModel {
    pub baseline: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period_s: f64,
    /// Instant (seconds past midnight) at which the sinusoid crosses upward.
    #[serde(default)]
    pub phase_s: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

fn default_period() -> f64 {
    DAY_SECS
}

impl SignalModel {
    pub fn constant(v: f64) -> Self {
        SignalModel {
            baseline: v,
            amplitude: 0.0,
            period_s: DAY_SECS,
            phase_s: 0.0,
            noise_sigma: 0.0,
            seed: 0,
            min: None,
            max: None,
        }
    }

    pub fn sinusoid(baseline: f64, amplitude: f64, noise_sigma: f64, seed: u64) -> Self {
        SignalModel {
            amplitude,
            noise_sigma,
            seed,
            ..Self::constant(baseline)
        }
    }

    /// Noise-free component at epoch second `t`.
    pub fn mean_at(&self, t: i64) -> f64 {
        let x = (t as f64 - self.phase_s) / self.period_s;
        self.baseline + self.amplitude * (TAU * x).sin()
    }

    pub fn noise_at(&self, metric: Metric, t: i64) -> f64 {
        if self.noise_sigma == 0.0 {
            return 0.0;
        }
        let key = splitmix64(self.seed ^ splitmix64((metric as u64) << 56 ^ t as u64));
        let z: f64 = StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(key));
        self.noise_sigma * z
    }

    pub fn value_at(&self, metric: Metric, t: i64) -> f64 {
        let mut v = self.mean_at(t) + self.noise_at(metric, t);
        if let Some(lo) = self.min {
            v = v.max(lo);
        }
        if let Some(hi) = self.max {
            v = v.min(hi);
        }
        v
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
