//! Z-Wave-like push/event frames: `5A node cmd value seq chk`, six bytes,
//! `chk` the XOR of the five preceding bytes.

use super::checksum::xor_checksum;
use super::FrameError;

pub const SOF: u8 = 0x5A;
pub const FRAME_LEN: usize = 6;

pub const VALUE_OFF: u8 = 0x00;
pub const VALUE_ON: u8 = 0xFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ZwaveCommand {
    Door,
    Motion,
    RelaySet,
    RelayAck,
    Other(u8),
}

impl From<u8> for ZwaveCommand {
    fn from(b: u8) -> Self {
        match b {
            0x20 => ZwaveCommand::Door,
            0x30 => ZwaveCommand::Motion,
            0x40 => ZwaveCommand::RelaySet,
            0x41 => ZwaveCommand::RelayAck,
            other => ZwaveCommand::Other(other),
        }
    }
}

impl From<ZwaveCommand> for u8 {
    fn from(c: ZwaveCommand) -> u8 {
        match c {
            ZwaveCommand::Door => 0x20,
            ZwaveCommand::Motion => 0x30,
            ZwaveCommand::RelaySet => 0x40,
            ZwaveCommand::RelayAck => 0x41,
            ZwaveCommand::Other(b) => b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ZwaveFrame {
    pub node_id: u8,
    pub cmd: ZwaveCommand,
    /// 0x00 off/closed/idle, 0xFF on/open/triggered.
    pub value: u8,
    pub seq: u8,
}

impl ZwaveFrame {
    pub fn is_on(&self) -> bool {
        self.value == VALUE_ON
    }
}

pub fn bool_value(on: bool) -> u8 {
    if on {
        VALUE_ON
    } else {
        VALUE_OFF
    }
}

pub fn encode_zwave(f: &ZwaveFrame) -> [u8; FRAME_LEN] {
    let head = [SOF, f.node_id, u8::from(f.cmd), f.value, f.seq];
    [head[0], head[1], head[2], head[3], head[4], xor_checksum(&head)]
}

pub fn decode_zwave(b: &[u8]) -> Result<ZwaveFrame, FrameError> {
    if b.len() != FRAME_LEN {
        return Err(FrameError::BadLength);
    }
    if b[0] != SOF {
        return Err(FrameError::BadSof);
    }
    if xor_checksum(&b[..5]) != b[5] {
        return Err(FrameError::BadChk);
    }
    Ok(ZwaveFrame {
        node_id: b[1],
        cmd: b[2].into(),
        value: b[3],
        seq: b[4],
    })
}
