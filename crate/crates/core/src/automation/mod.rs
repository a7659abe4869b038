//! Rules engine and relay state for automatic and operator-driven actuation.

pub mod relay;
pub mod rules;

pub use relay::{Actual, CommandReason, Mode, RelayBoard, RelayCommand, RelayError, RelayState};
pub use rules::{Comparator, Condition, Engine, Rule, RuleError, Snapshot, Switch, TimeOfDay};
