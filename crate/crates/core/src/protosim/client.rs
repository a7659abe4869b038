//! Peer side of the device links, used by the gateway and tests.

use std::io;
use std::net::SocketAddr;

use tokio::io::{AsyncRead, AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

use super::ble::{self, BleFrame};
use super::zwave::{self, ZwaveFrame};
use super::FrameError;
use crate::model::MacAddr;

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error("link i/o: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Frame(#[from] FrameError),
    #[error("unexpected reply")]
    Unexpected,
}

pub struct BleClient {
    stream: TcpStream,
}

impl BleClient {
    pub async fn connect(addr: SocketAddr) -> io::Result<Self> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        Ok(BleClient { stream })
    }

    pub async fn send_raw(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.stream.write_all(bytes).await
    }

    /// Reads one complete frame off the stream.
    pub async fn read_frame(&mut self) -> Result<BleFrame, LinkError> {
        read_ble_frame(&mut self.stream).await
    }

    pub async fn request(&mut self, req: &BleFrame) -> Result<BleFrame, LinkError> {
        let wire = ble::encode_ble(req).map_err(|_| LinkError::Unexpected)?;
        self.stream.write_all(&wire).await?;
        self.read_frame().await
    }

    pub async fn scan(&mut self) -> Result<Vec<MacAddr>, LinkError> {
        match self.request(&BleFrame::scan()).await? {
            BleFrame::ScanResponse { macs } => Ok(macs),
            _ => Err(LinkError::Unexpected),
        }
    }
}

pub async fn read_ble_frame<R: AsyncRead + Unpin>(rd: &mut R) -> Result<BleFrame, LinkError> {
    let mut head = [0u8; 2];
    rd.read_exact(&mut head).await?;
    let len = ble::wire_len(head[0], head[1]).ok_or(FrameError::BadSof)?;
    let mut buf = vec![0u8; len];
    buf[..2].copy_from_slice(&head);
    rd.read_exact(&mut buf[2..]).await?;
    Ok(ble::decode_ble(&buf)?)
}

pub async fn read_zwave_frame<R: AsyncRead + Unpin>(rd: &mut R) -> Result<ZwaveFrame, LinkError> {
    let mut buf = [0u8; zwave::FRAME_LEN];
    rd.read_exact(&mut buf).await?;
    Ok(zwave::decode_zwave(&buf)?)
}

/// A bidirectional Z-Wave-like link.
pub struct ZwaveLink {
    stream: TcpStream,
}

impl ZwaveLink {
    pub async fn connect(addr: SocketAddr) -> io::Result<Self> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        Ok(ZwaveLink { stream })
    }

    pub async fn send(&mut self, f: &ZwaveFrame) -> io::Result<()> {
        self.stream.write_all(&zwave::encode_zwave(f)).await
    }

    pub async fn send_raw(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.stream.write_all(bytes).await
    }

    pub async fn read_frame(&mut self) -> Result<ZwaveFrame, LinkError> {
        read_zwave_frame(&mut self.stream).await
    }

    pub fn into_stream(self) -> TcpStream {
        self.stream
    }
}
