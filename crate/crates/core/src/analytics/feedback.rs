//! Occupant comfort feedback.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub room_id: String,
    pub vote: i8,
    #[serde(default)]
    pub note: String,
    #[serde(with = "crate::model::ts_serde")]
    pub ts: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FeedbackError {
    #[error("vote must be -1, 0 or 1, got {0}")]
    Vote(i64),
    #[error("room_id must not be empty")]
    Room,
}

impl FeedbackRecord {
    pub fn new(room_id: impl Into<String>, vote: i64, note: impl Into<String>, ts: DateTime<Utc>) -> Result<Self, FeedbackError> {
        let room_id = room_id.into();
        if room_id.is_empty() {
            return Err(FeedbackError::Room);
        }
        if !(-1..=1).contains(&vote) {
            return Err(FeedbackError::Vote(vote));
        }
        Ok(FeedbackRecord {
            room_id,
            vote: vote as i8,
            note: note.into(),
            ts,
        })
    }
}
