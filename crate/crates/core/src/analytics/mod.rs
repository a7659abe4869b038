//! Comfort, occupancy, presence, prediction and outdoor weather.

pub mod comfort;
pub mod feedback;
pub mod occupancy;
pub mod presence;
pub mod profile;
pub mod weather;

pub use comfort::{
    classify_light, comfort_report, comfort_score, ComfortBand, ComfortBands, ComfortFlag,
    ComfortReport, LightClass, MetricComfort, NoData,
};
pub use feedback::{FeedbackError, FeedbackRecord};
pub use occupancy::{occupancy_ledger, Ledger, OccupancyEvent, OccupancyKind};
pub use presence::{presence, Presence, ScanRecord};
pub use profile::{HourlyProfile, NoModel};
pub use weather::{StubProvider, StubSource, WeatherClient, WeatherError};
