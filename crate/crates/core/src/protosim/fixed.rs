//! Signed fixed-point x100 encoding used on every wire format.

use std::fmt;

/// Largest magnitude accepted by [`encode_fixed_point`].
pub const FIXED_POINT_LIMIT: f64 = 2_147_483_648.0 / 100.0 - 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FixedPointError {
    #[error("value outside fixed-point range")]
    Overflow,
    #[error("value is not finite")]
    NotFinite,
}

/// A value in hundredths of the canonical unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FixedPoint(pub i32);

impl FixedPoint {
    /// Rounds to the nearest hundredth, ties away from zero.
    pub fn from_f64(v: f64) -> Result<Self, FixedPointError> {
        if !v.is_finite() {
            return Err(FixedPointError::NotFinite);
        }
        if v.abs() > FIXED_POINT_LIMIT {
            return Err(FixedPointError::Overflow);
        }
        Ok(FixedPoint((v * 100.0).round() as i32))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn to_le_bytes(self) -> [u8; 4] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(b: [u8; 4]) -> Self {
        FixedPoint(i32::from_le_bytes(b))
    }
}

impl fmt::Display for FixedPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.to_f64())
    }
}

pub fn encode_fixed_point(v: f64) -> Result<[u8; 4], FixedPointError> {
    FixedPoint::from_f64(v).map(FixedPoint::to_le_bytes)
}

pub fn decode_fixed_point(b: [u8; 4]) -> f64 {
    FixedPoint::from_le_bytes(b).to_f64()
}
