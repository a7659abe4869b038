//! Comfort bands, per-reading scores and windowed room reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{Metric, Reading};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortBand {
    pub metric: Metric,
    pub lo: f64,
    pub hi: f64,
    /// Width beyond each edge over which the score decays linearly to zero.
    pub span: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BandError {
    #[error("band for {0} needs lo < hi")]
    Inverted(Metric),
    #[error("band for {0} needs span > 0")]
    Span(Metric),
    #[error("band for {0} has non-finite bounds")]
    NotFinite(Metric),
}

impl ComfortBand {
    pub fn new(metric: Metric, lo: f64, hi: f64, span: f64) -> Result<Self, BandError> {
        let b = ComfortBand { metric, lo, hi, span };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), BandError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.span.is_finite()) {
            return Err(BandError::NotFinite(self.metric));
        }
        if self.lo >= self.hi {
            return Err(BandError::Inverted(self.metric));
        }
        if self.span <= 0.0 {
            return Err(BandError::Span(self.metric));
        }
        Ok(())
    }
}

/// 1 inside `[lo, hi]`, falling linearly to 0 at `lo - span` / `hi + span`.
pub fn comfort_score(value: f64, band: &ComfortBand) -> f64 {
    let distance = if value < band.lo {
        band.lo - value
    } else if value > band.hi {
        value - band.hi
    } else {
        0.0
    };
    (1.0 - distance / band.span).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComfortBands(BTreeMap<Metric, ComfortBand>);

impl Default for ComfortBands {
    /// Humidity [40, 50] %RH span 15; temperature [21, 25] C span 5.
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert(
            Metric::Humidity,
            ComfortBand { metric: Metric::Humidity, lo: 40.0, hi: 50.0, span: 15.0 },
        );
        m.insert(
            Metric::Temperature,
            ComfortBand { metric: Metric::Temperature, lo: 21.0, hi: 25.0, span: 5.0 },
        );
        ComfortBands(m)
    }
}

impl ComfortBands {
    pub fn empty() -> Self {
        ComfortBands(BTreeMap::new())
    }

    pub fn get(&self, m: Metric) -> Option<&ComfortBand> {
        self.0.get(&m)
    }

    pub fn set(&mut self, band: ComfortBand) -> Result<(), BandError> {
        band.validate()?;
        self.0.insert(band.metric, band);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &ComfortBand> {
        self.0.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComfortFlag {
    BelowBand,
    Ok,
    AboveBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MetricComfort {
    Scored {
        mean_value: f64,
        score: f64,
        flag: ComfortFlag,
        samples: usize,
    },
    NoData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComfortReport {
    pub metrics: BTreeMap<Metric, MetricComfort>,
    /// Unweighted mean over scored metrics; `None` when nothing was scored.
    pub overall: Option<f64>,
}

/// Scores every banded metric over `readings` (already restricted to one room and window).
pub fn comfort_report(readings: &[Reading], bands: &ComfortBands) -> ComfortReport {
    let mut metrics = BTreeMap::new();
    for band in bands.iter() {
        let values: Vec<f64> = readings
            .iter()
            .filter(|r| r.metric == band.metric)
            .map(|r| r.value)
            .collect();
        let entry = if values.is_empty() {
            MetricComfort::NoData
        } else {
            let n = values.len() as f64;
            let mean_value = values.iter().sum::<f64>() / n;
            let score = values.iter().map(|v| comfort_score(*v, band)).sum::<f64>() / n;
            let flag = if mean_value < band.lo {
                ComfortFlag::BelowBand
            } else if mean_value > band.hi {
                ComfortFlag::AboveBand
            } else {
                ComfortFlag::Ok
            };
            MetricComfort::Scored {
                mean_value,
                score,
                flag,
                samples: values.len(),
            }
        };
        metrics.insert(band.metric, entry);
    }
    let scores: Vec<f64> = metrics
        .values()
        .filter_map(|m| match m {
            MetricComfort::Scored { score, .. } => Some(*score),
            MetricComfort::NoData => None,
        })
        .collect();
    let overall = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    ComfortReport { metrics, overall }
}

pub const DEFAULT_LIGHT_THRESHOLD: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightClass {
    Adequate,
    Dim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("NO_DATA")]
pub struct NoData;

/// `Adequate` when mean lux reaches `threshold` (inclusive).
pub fn classify_light(readings: &[Reading], threshold: f64) -> Result<(LightClass, f64), NoData> {
    let lux: Vec<f64> = readings
        .iter()
        .filter(|r| r.metric == Metric::Light)
        .map(|r| r.value)
        .collect();
    if lux.is_empty() {
        return Err(NoData);
    }
    let mean = lux.iter().sum::<f64>() / lux.len() as f64;
    let class = if mean >= threshold {
        LightClass::Adequate
    } else {
        LightClass::Dim
    };
    Ok((class, mean))
}
