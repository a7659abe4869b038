//! Mesh frame: `5B type src[2] dst[2] seq ttl hops plen payload[plen] chk`.
//! Multi-byte fields little-endian; `chk` is the XOR of every preceding byte.

use crate::model::Metric;
use crate::protosim::ble::characteristic;
use crate::protosim::checksum::xor_checksum;
use crate::protosim::fixed::FixedPoint;
use crate::protosim::FrameError;

pub const SOF: u8 = 0x5B;
pub const HEADER_LEN: usize = 10;
pub const MAX_PAYLOAD: usize = 64;
pub const BROADCAST: u16 = 0xFFFF;

pub type NodeId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeshKind {
    Data,
    Rreq,
    Rrep,
    Other(u8),
}

impl From<u8> for MeshKind {
    fn from(b: u8) -> Self {
        match b {
            0x00 => MeshKind::Data,
            0x01 => MeshKind::Rreq,
            0x02 => MeshKind::Rrep,
            other => MeshKind::Other(other),
        }
    }
}

impl From<MeshKind> for u8 {
    fn from(k: MeshKind) -> u8 {
        match k {
            MeshKind::Data => 0x00,
            MeshKind::Rreq => 0x01,
            MeshKind::Rrep => 0x02,
            MeshKind::Other(b) => b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MeshFrame {
    pub kind: MeshKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub seq: u8,
    pub ttl: u8,
    pub hops: u8,
    pub payload: Vec<u8>,
}

impl MeshFrame {
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("payload of {0} bytes exceeds {MAX_PAYLOAD}")]
pub struct PayloadTooLarge(pub usize);

pub fn encode_mesh(f: &MeshFrame) -> Result<Vec<u8>, PayloadTooLarge> {
    if f.payload.len() > MAX_PAYLOAD {
        return Err(PayloadTooLarge(f.payload.len()));
    }
    let mut out = Vec::with_capacity(f.wire_len());
    out.extend([SOF, u8::from(f.kind)]);
    out.extend(f.src.to_le_bytes());
    out.extend(f.dst.to_le_bytes());
    out.extend([f.seq, f.ttl, f.hops, f.payload.len() as u8]);
    out.extend(&f.payload);
    out.push(xor_checksum(&out));
    Ok(out)
}

/// Checks minimum length, SOF, checksum, then payload length consistency.
pub fn decode_mesh(b: &[u8]) -> Result<MeshFrame, FrameError> {
    if b.len() < HEADER_LEN + 1 {
        return Err(FrameError::BadLength);
    }
    if b[0] != SOF {
        return Err(FrameError::BadSof);
    }
    let (body, chk) = b.split_at(b.len() - 1);
    if xor_checksum(body) != chk[0] {
        return Err(FrameError::BadChk);
    }
    let plen = b[9] as usize;
    if plen > MAX_PAYLOAD || b.len() != HEADER_LEN + plen + 1 {
        return Err(FrameError::BadLength);
    }
    Ok(MeshFrame {
        kind: b[1].into(),
        src: u16::from_le_bytes([b[2], b[3]]),
        dst: u16::from_le_bytes([b[4], b[5]]),
        seq: b[6],
        ttl: b[7],
        hops: b[8],
        payload: b[HEADER_LEN..HEADER_LEN + plen].to_vec(),
    })
}

/// Sensor sample carried in DATA frames: `char value[4] ts[4]`, using the
/// BLE characteristic ids and fixed-point encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadingPayload {
    pub metric: Metric,
    pub value: FixedPoint,
    pub ts: u32,
}

pub const READING_PAYLOAD_LEN: usize = 9;

impl ReadingPayload {
    pub fn encode(&self) -> Option<Vec<u8>> {
        let char_id = characteristic::for_metric(self.metric)?;
        let mut out = Vec::with_capacity(READING_PAYLOAD_LEN);
        out.push(char_id);
        out.extend(self.value.to_le_bytes());
        out.extend(self.ts.to_le_bytes());
        Some(out)
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() != READING_PAYLOAD_LEN {
            return None;
        }
        Some(ReadingPayload {
            metric: characteristic::metric(b[0])?,
            value: FixedPoint::from_le_bytes([b[1], b[2], b[3], b[4]]),
            ts: u32::from_le_bytes([b[5], b[6], b[7], b[8]]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        let f = MeshFrame {
            kind: MeshKind::Data,
            src: 0x0203,
            dst: 0x0001,
            seq: 9,
            ttl: 8,
            hops: 0,
            payload: vec![0xAA, 0xBB],
        };
        let w = encode_mesh(&f).unwrap();
        assert_eq!(w.len(), 11 + 2);
        assert_eq!(&w[..10], &[0x5B, 0x00, 0x03, 0x02, 0x01, 0x00, 9, 8, 0, 2]);
        assert_eq!(*w.last().unwrap(), xor_checksum(&w[..w.len() - 1]));
        assert_eq!(decode_mesh(&w).unwrap(), f);
    }

    #[test]
    fn errors() {
        assert_eq!(decode_mesh(&[0x5B; 5]), Err(FrameError::BadLength));
        let f = MeshFrame {
            kind: MeshKind::Rreq,
            src: 1,
            dst: 3,
            seq: 0,
            ttl: 8,
            hops: 0,
            payload: vec![],
        };
        let mut w = encode_mesh(&f).unwrap();
        w[0] = 0x5A;
        assert_eq!(decode_mesh(&w), Err(FrameError::BadSof));
        let mut w = encode_mesh(&f).unwrap();
        w[7] = 0;
        assert_eq!(decode_mesh(&w), Err(FrameError::BadChk));
        let too_big = MeshFrame {
            payload: vec![0; 65],
            ..f
        };
        assert!(encode_mesh(&too_big).is_err());
    }

    #[test]
    fn reading_payload_round_trip() {
        let p = ReadingPayload {
            metric: Metric::Temperature,
            value: FixedPoint(2345),
            ts: 1_488_326_400,
        };
        let b = p.encode().unwrap();
        assert_eq!(b.len(), READING_PAYLOAD_LEN);
        assert_eq!(ReadingPayload::decode(&b), Some(p));
        let door = ReadingPayload {
            metric: Metric::Door,
            ..p
        };
        assert!(door.encode().is_none());
    }

    proptest! {
        #[test]
        fn decode_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..90)) {
            if let Ok(f) = decode_mesh(&bytes) {
                prop_assert_eq!(encode_mesh(&f).unwrap(), bytes);
            }
        }
    }
}
