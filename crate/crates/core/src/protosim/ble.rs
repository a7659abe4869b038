//! BLE-like request/response frames.
//!
//! ```text
//! request        B1 op char crc                         4 bytes
//! response       B2 char status value[4] ts[4] crc      12 bytes
//! scan_response  B3 count mac[6]*count crc              3 + 6*count bytes
//! ```
//! `value` is fixed-point x100, `value` and `ts` little-endian; `crc` is
//! CRC-8/0x07 over every preceding byte.

use super::checksum::crc8;
use super::fixed::FixedPoint;
use super::FrameError;
use crate::model::{MacAddr, Metric};

pub const KIND_REQUEST: u8 = 0xB1;
pub const KIND_RESPONSE: u8 = 0xB2;
pub const KIND_SCAN_RESPONSE: u8 = 0xB3;

pub const REQUEST_LEN: usize = 4;
pub const RESPONSE_LEN: usize = 12;
pub const MAX_SCAN_MACS: usize = u8::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BleOp {
    Read,
    Subscribe,
    Scan,
    Other(u8),
}

impl From<u8> for BleOp {
    fn from(b: u8) -> Self {
        match b {
            0x01 => BleOp::Read,
            0x02 => BleOp::Subscribe,
            0x03 => BleOp::Scan,
            other => BleOp::Other(other),
        }
    }
}

impl From<BleOp> for u8 {
    fn from(op: BleOp) -> u8 {
        match op {
            BleOp::Read => 0x01,
            BleOp::Subscribe => 0x02,
            BleOp::Scan => 0x03,
            BleOp::Other(b) => b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BleStatus {
    Ok,
    UnknownChar,
    Other(u8),
}

impl From<u8> for BleStatus {
    fn from(b: u8) -> Self {
        match b {
            0x00 => BleStatus::Ok,
            0x01 => BleStatus::UnknownChar,
            other => BleStatus::Other(other),
        }
    }
}

impl From<BleStatus> for u8 {
    fn from(s: BleStatus) -> u8 {
        match s {
            BleStatus::Ok => 0x00,
            BleStatus::UnknownChar => 0x01,
            BleStatus::Other(b) => b,
        }
    }
}

/// Readable characteristics and their ids.
pub mod characteristic {
    use crate::model::Metric;

    pub const TEMPERATURE: u8 = 0x01;
    pub const HUMIDITY: u8 = 0x02;
    pub const LIGHT: u8 = 0x03;
    pub const PRESSURE: u8 = 0x04;

    pub fn metric(char_id: u8) -> Option<Metric> {
        match char_id {
            TEMPERATURE => Some(Metric::Temperature),
            HUMIDITY => Some(Metric::Humidity),
            LIGHT => Some(Metric::Light),
            PRESSURE => Some(Metric::Pressure),
            _ => None,
        }
    }

    pub fn for_metric(metric: Metric) -> Option<u8> {
        match metric {
            Metric::Temperature => Some(TEMPERATURE),
            Metric::Humidity => Some(HUMIDITY),
            Metric::Light => Some(LIGHT),
            Metric::Pressure => Some(PRESSURE),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BleFrame {
    Request {
        op: BleOp,
        char_id: u8,
    },
    Response {
        char_id: u8,
        status: BleStatus,
        value: FixedPoint,
        ts: u32,
    },
    ScanResponse {
        macs: Vec<MacAddr>,
    },
}

impl BleFrame {
    pub fn read(metric: Metric) -> Option<Self> {
        characteristic::for_metric(metric).map(|char_id| BleFrame::Request {
            op: BleOp::Read,
            char_id,
        })
    }

    pub fn scan() -> Self {
        BleFrame::Request {
            op: BleOp::Scan,
            char_id: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("scan response carries more than {MAX_SCAN_MACS} addresses")]
pub struct TooManyMacs;

pub fn encode_ble(f: &BleFrame) -> Result<Vec<u8>, TooManyMacs> {
    let mut out = match f {
        BleFrame::Request { op, char_id } => {
            let mut v = Vec::with_capacity(REQUEST_LEN);
            v.extend([KIND_REQUEST, u8::from(*op), *char_id]);
            v
        }
        BleFrame::Response {
            char_id,
            status,
            value,
            ts,
        } => {
            let mut v = Vec::with_capacity(RESPONSE_LEN);
            v.extend([KIND_RESPONSE, *char_id, u8::from(*status)]);
            v.extend(value.to_le_bytes());
            v.extend(ts.to_le_bytes());
            v
        }
        BleFrame::ScanResponse { macs } => {
            if macs.len() > MAX_SCAN_MACS {
                return Err(TooManyMacs);
            }
            let mut v = Vec::with_capacity(3 + 6 * macs.len());
            v.extend([KIND_SCAN_RESPONSE, macs.len() as u8]);
            for mac in macs {
                v.extend(mac.0);
            }
            v
        }
    };
    out.push(crc8(&out));
    Ok(out)
}

/// Checks run in order: minimum length, SOF, CRC, then the exact length for
/// the frame kind. A single substituted byte therefore always surfaces as
/// `BadSof` or `BadCrc`.
pub fn decode_ble(b: &[u8]) -> Result<BleFrame, FrameError> {
    if b.len() < 3 {
        return Err(FrameError::BadLength);
    }
    let kind = b[0];
    if !matches!(kind, KIND_REQUEST | KIND_RESPONSE | KIND_SCAN_RESPONSE) {
        return Err(FrameError::BadSof);
    }
    let (body, crc) = b.split_at(b.len() - 1);
    if crc8(body) != crc[0] {
        return Err(FrameError::BadCrc);
    }
    match kind {
        KIND_REQUEST => {
            if b.len() != REQUEST_LEN {
                return Err(FrameError::BadLength);
            }
            Ok(BleFrame::Request {
                op: b[1].into(),
                char_id: b[2],
            })
        }
        KIND_RESPONSE => {
            if b.len() != RESPONSE_LEN {
                return Err(FrameError::BadLength);
            }
            Ok(BleFrame::Response {
                char_id: b[1],
                status: b[2].into(),
                value: FixedPoint::from_le_bytes([b[3], b[4], b[5], b[6]]),
                ts: u32::from_le_bytes([b[7], b[8], b[9], b[10]]),
            })
        }
        _ => {
            let count = b[1] as usize;
            if b.len() != 3 + 6 * count {
                return Err(FrameError::BadLength);
            }
            let macs = b[2..2 + 6 * count]
                .chunks_exact(6)
                .map(|c| MacAddr([c[0], c[1], c[2], c[3], c[4], c[5]]))
                .collect();
            Ok(BleFrame::ScanResponse { macs })
        }
    }
}

/// Total wire length of a frame given its first two bytes, if determinable.
pub fn wire_len(kind: u8, second: u8) -> Option<usize> {
    match kind {
        KIND_REQUEST => Some(REQUEST_LEN),
        KIND_RESPONSE => Some(RESPONSE_LEN),
        KIND_SCAN_RESPONSE => Some(3 + 6 * second as usize),
        _ => None,
    }
}
