//! Transports to individual devices: the messaging conduit and FTP, plus the
//! directory that maps a MAC address to the device's endpoints.

pub mod conduit;
pub mod ftp;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::snmp::MacAddress;

pub use conduit::{
    ConduitClient, ConduitError, ConduitMessage, DeviceInfo, HeartbeatStatus, MessageBody, MessageKind,
};
pub use ftp::{FtpClient, FtpError, TransferReceipt};

pub const FIRMWARE_DIR: &str = "/firmware";
pub const CONFIG_DIR: &str = "/config";

pub fn firmware_path(version: &str) -> String {
    format!("{FIRMWARE_DIR}/{version}.img")
}

pub fn config_path(logical_name: &str) -> String {
    format!("{CONFIG_DIR}/{logical_name}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceEndpoints {
    pub conduit: SocketAddr,
    pub ftp: SocketAddr,
}

/// Resolves a device's MAC to where its services listen.
pub trait DeviceDirectory: Send + Sync {
    fn endpoints(&self, mac: &MacAddress) -> Option<DeviceEndpoints>;
}

/// A fixed MAC → endpoints table, usually loaded from a device map file with
/// lines of the form `<mac> <conduit host:port> <ftp host:port>`.
#[derive(Clone, Debug, Default)]
pub struct StaticDirectory {
    entries: BTreeMap<MacAddress, DeviceEndpoints>,
}

#[derive(Debug, thiserror::Error)]
pub enum DirectoryError {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StaticDirectory {
    pub fn new(entries: BTreeMap<MacAddress, DeviceEndpoints>) -> Self {
        StaticDirectory { entries }
    }

    pub fn parse(text: &str) -> Result<Self, DirectoryError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| DirectoryError::Parse { line: i + 1, detail };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [mac, conduit, ftp] = fields[..] else {
                return Err(err(format!("expected 3 fields, got {}", fields.len())));
            };
            let mac: MacAddress = mac.parse().map_err(|e: crate::snmp::MacParseError| err(e.to_string()))?;
            let conduit = conduit.parse().map_err(|_| err(format!("bad conduit endpoint {conduit:?}")))?;
            let ftp = ftp.parse().map_err(|_| err(format!("bad ftp endpoint {ftp:?}")))?;
            entries.insert(mac, DeviceEndpoints { conduit, ftp });
        }
        Ok(StaticDirectory { entries })
    }

    pub fn load(path: &Path) -> Result<Self, DirectoryError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl DeviceDirectory for StaticDirectory {
    fn endpoints(&self, mac: &MacAddress) -> Option<DeviceEndpoints> {
        self.entries.get(mac).copied()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error("no known endpoint for {0}")]
    NoEndpoint(MacAddress),
    #[error(transparent)]
    Conduit(#[from] ConduitError),
    #[error(transparent)]
    Ftp(#[from] FtpError),
}

impl LinkError {
    /// Errors that mean "the device did not answer".
    pub fn is_timeout(&self) -> bool {
        matches!(self, LinkError::NoEndpoint(_) | LinkError::Conduit(ConduitError::Timeout(_)))
    }
}

/// Real socket waits never drop below this under a virtual clock, where
/// the configured timeout is only charged as simulated time.
const VIRTUAL_SOCKET_FLOOR: Duration = Duration::from_secs(2);

/// Both transports behind a directory, addressed by MAC.
///
/// Under a virtual clock an unanswered request or failed connect is charged
/// its full configured timeout in simulated time, since the simulated peers
/// fail fast on the real sockets.
#[derive(Clone)]
pub struct DeviceLink {
    conduit: Arc<ConduitClient>,
    ftp: FtpClient,
    directory: Arc<dyn DeviceDirectory>,
    clock: Clock,
    conduit_timeout: Duration,
    ftp_connect_timeout: Duration,
}

impl DeviceLink {
    pub fn new(directory: Arc<dyn DeviceDirectory>, conduit_timeout: Duration, ftp: FtpClient, clock: Clock) -> Self {
        let ftp_connect_timeout = ftp.connect_timeout;
        let (socket_timeout, ftp) = if clock.is_virtual() {
            let floor = |d: Duration| d.max(VIRTUAL_SOCKET_FLOOR);
            (floor(conduit_timeout), FtpClient::new(floor(ftp.connect_timeout), floor(ftp.io_timeout)))
        } else {
            (conduit_timeout, ftp)
        };
        DeviceLink {
            conduit: Arc::new(ConduitClient::new(socket_timeout)),
            ftp,
            directory,
            clock,
            conduit_timeout,
            ftp_connect_timeout,
        }
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn mismatched_replies(&self) -> u64 {
        self.conduit.mismatched_replies()
    }

    fn endpoints(&self, mac: &MacAddress) -> Result<DeviceEndpoints, LinkError> {
        self.directory.endpoints(mac).ok_or(LinkError::NoEndpoint(*mac))
    }

    pub fn request(&self, mac: &MacAddress, body: MessageBody) -> Result<MessageBody, LinkError> {
        let start = self.clock.now();
        let result = self.endpoints(mac).and_then(|ep| Ok(self.conduit.send_request(ep.conduit, body)?.body));
        if let Err(e) = &result {
            if e.is_timeout() && self.clock.is_virtual() {
                self.clock.sleep_until(start.after(self.conduit_timeout));
            }
        }
        result
    }

    pub fn interrogate(&self, mac: &MacAddress) -> Result<DeviceInfo, LinkError> {
        match self.request(mac, MessageBody::Interrogate)? {
            MessageBody::InterrogateReply(info) => Ok(info),
            other => Err(ConduitError::Protocol(format!("unexpected {} to interrogate", other.kind().as_str())).into()),
        }
    }

    /// `Ok(None)` when the device answered that it is about to reboot.
    pub fn heartbeat(&self, mac: &MacAddress) -> Result<Option<HeartbeatStatus>, LinkError> {
        match self.request(mac, MessageBody::Heartbeat(None))? {
            MessageBody::Heartbeat(Some(status)) => Ok(Some(status)),
            MessageBody::Rebooting => Ok(None),
            other => Err(ConduitError::Protocol(format!("unexpected {} to heartbeat", other.kind().as_str())).into()),
        }
    }

    pub fn put(&self, mac: &MacAddress, remote_path: &str, bytes: &[u8]) -> Result<TransferReceipt, LinkError> {
        let start = self.clock.now();
        let endpoint = self.endpoints(mac)?.ftp;
        let result = self.ftp.put(endpoint, remote_path, bytes);
        self.charge_connect_failure(start, &result);
        Ok(result?)
    }

    pub fn get(&self, mac: &MacAddress, remote_path: &str) -> Result<Vec<u8>, LinkError> {
        let start = self.clock.now();
        let endpoint = self.endpoints(mac)?.ftp;
        let result = self.ftp.get(endpoint, remote_path);
        self.charge_connect_failure(start, &result);
        Ok(result?)
    }

    fn charge_connect_failure<T>(&self, start: crate::clock::Timestamp, result: &Result<T, FtpError>) {
        if matches!(result, Err(FtpError::ConnectFailure { .. })) && self.clock.is_virtual() {
            self.clock.sleep_until(start.after(self.ftp_connect_timeout));
        }
    }
}
