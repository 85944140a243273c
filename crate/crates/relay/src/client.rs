use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{FutureExt, SinkExt, StreamExt};
use geoar_core::protocol::{Envelope, MsgType, ProtocolError, Role};
use thiserror::Error;
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio_util::codec::{FramedRead, FramedWrite, LinesCodec, LinesCodecError};

use crate::MAX_LINE_BYTES;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("framing: {0}")]
    Framing(#[from] LinesCodecError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("connection closed")]
    Closed,
    #[error("relay refused: {0}")]
    Refused(String),
    #[error("timed out")]
    Timeout,
}

/// Receiving half of a relay connection.
pub struct RelayReader {
    inner: FramedRead<OwnedReadHalf, LinesCodec>,
}

impl RelayReader {
    pub async fn recv_line(&mut self) -> Result<String, ClientError> {
        match self.inner.next().await {
            Some(line) => Ok(line?),
            None => Err(ClientError::Closed),
        }
    }

    pub async fn recv(&mut self) -> Result<Envelope, ClientError> {
        Ok(Envelope::from_line(&self.recv_line().await?)?)
    }

    /// Next envelope if one is already buffered or readable, without waiting.
    pub fn try_recv(&mut self) -> Result<Option<Envelope>, ClientError> {
        // FramedRead keeps partial lines across cancelled polls
        match self.recv().now_or_never() {
            Some(r) => r.map(Some),
            None => Ok(None),
        }
    }

    /// `Ok(None)` when nothing arrives within `wait`.
    pub async fn recv_timeout(&mut self, wait: Duration) -> Result<Option<Envelope>, ClientError> {
        match tokio::time::timeout(wait, self.recv()).await {
            Ok(r) => r.map(Some),
            Err(_) => Ok(None),
        }
    }
}

/// Sending half of a relay connection.
pub struct RelayWriter {
    inner: FramedWrite<OwnedWriteHalf, LinesCodec>,
}

impl RelayWriter {
    pub async fn send(&mut self, env: &Envelope) -> Result<(), ClientError> {
        self.send_line(env.to_line()).await
    }

    pub async fn send_line(&mut self, line: String) -> Result<(), ClientError> {
        Ok(self.inner.send(line).await?)
    }
}

/// TCP client speaking the envelope protocol.
pub struct RelayClient {
    reader: RelayReader,
    writer: RelayWriter,
    session: u64,
}

impl RelayClient {
    /// Connects and completes the HELLO handshake.
    pub async fn connect(addr: SocketAddr, role: Role) -> Result<Self, ClientError> {
        Self::connect_with(addr, Envelope::hello(role)).await
    }

    pub async fn connect_sensor(addr: SocketAddr, sensor_id: &str) -> Result<Self, ClientError> {
        let mut hello = Envelope::hello(Role::Sensor);
        hello.sensor_id = Some(sensor_id.to_owned());
        Self::connect_with(addr, hello).await
    }

    async fn connect_with(addr: SocketAddr, hello: Envelope) -> Result<Self, ClientError> {
        let (mut reader, mut writer) = Self::raw(addr).await?;
        writer.send(&hello).await?;
        let reply = match tokio::time::timeout(crate::HELLO_TIMEOUT, reader.recv()).await {
            Ok(r) => r?,
            Err(_) => return Err(ClientError::Timeout),
        };
        match reply.msg_type {
            MsgType::Ack => {
                let session = serde_json::from_str::<serde_json::Value>(&reply.payload)
                    .ok()
                    .and_then(|v| v["session"].as_u64())
                    .unwrap_or(0);
                Ok(RelayClient {
                    reader,
                    writer,
                    session,
                })
            }
            _ => Err(ClientError::Refused(reply.payload)),
        }
    }

    /// Unhandshaken connection, for protocol tests.
    pub async fn raw(addr: SocketAddr) -> Result<(RelayReader, RelayWriter), ClientError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (r, w) = stream.into_split();
        Ok((
            RelayReader {
                inner: FramedRead::new(r, LinesCodec::new_with_max_length(MAX_LINE_BYTES)),
            },
            RelayWriter {
                inner: FramedWrite::new(w, LinesCodec::new()),
            },
        ))
    }

    pub fn session(&self) -> u64 {
        self.session
    }

    pub async fn send(&mut self, env: &Envelope) -> Result<(), ClientError> {
        self.writer.send(env).await
    }

    pub async fn recv(&mut self) -> Result<Envelope, ClientError> {
        self.reader.recv().await
    }

    pub async fn recv_timeout(&mut self, wait: Duration) -> Result<Option<Envelope>, ClientError> {
        self.reader.recv_timeout(wait).await
    }

    pub fn try_recv(&mut self) -> Result<Option<Envelope>, ClientError> {
        self.reader.try_recv()
    }

    pub fn split(self) -> (RelayReader, RelayWriter) {
        (self.reader, self.writer)
    }
}
