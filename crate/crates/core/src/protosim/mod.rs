//! Wire codecs and socket-served device simulators standing in for real
//! BLE and Z-Wave hardware.

pub mod ble;
pub mod checksum;
pub mod client;
pub mod device;
pub mod fixed;
pub mod signal;
pub mod zwave;

pub use ble::{decode_ble, encode_ble, BleFrame, BleOp, BleStatus};
pub use checksum::{crc8, xor_checksum};
pub use device::{run_ble_device, run_zwave_device, DeviceHandle, SimDeviceConfig};
pub use fixed::{decode_fixed_point, encode_fixed_point, FixedPoint, FixedPointError};
pub use signal::SignalModel;
pub use zwave::{decode_zwave, encode_zwave, ZwaveCommand, ZwaveFrame};

/// Decode failures shared by all frame formats; each names the first failed check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, thiserror::Error)]
pub enum FrameError {
    #[error("BAD_SOF")]
    BadSof,
    #[error("BAD_LENGTH")]
    BadLength,
    #[error("BAD_CRC")]
    BadCrc,
    #[error("BAD_CHK")]
    BadChk,
}
