//! The characteristic/heartbeat messaging conduit.
//!
//! Wire format, all integers big-endian:
//!
//! ```text
//! frame   := len:u32 kind:u8 correlation:u64 payload[len - 9]
//! string  := n:u16 utf8[n]
//! SetCharacteristics  address:u32 ip:[u8;4] dhcp:u8
//! Ack / Interrogate / Rebooting  (empty)
//! Nack                reason:string
//! InterrogateReply    address:u32 ip:[u8;4] dhcp:u8 type:string firmware:string
//!                     nparams:u16 (key:string value:string)*
//!                     revision:u64 nfiles:u16 name:string* active_digest:u64
//! Heartbeat           request: empty; reply: healthy:u8 revision:u64
//! ActivateConfig      nfiles:u16 name:string*
//! ```
//!
//! Requests are SetCharacteristics (answered by Ack), Interrogate
//! (InterrogateReply), Heartbeat (Heartbeat) and ActivateConfig (Ack). Any
//! request may instead be answered by Nack, and a device with a staged
//! firmware image answers its next request with Rebooting before going
//! silent.

use std::collections::BTreeMap;
use std::io::{self, ErrorKind, Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use tracing::trace;

use crate::digest::Digest64;
use crate::inventory::{Characteristics, DeviceAddress, HardwareProfile, IpConfig};

pub const MAX_FRAME: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    SetCharacteristics = 1,
    Ack = 2,
    Nack = 3,
    Interrogate = 4,
    InterrogateReply = 5,
    Heartbeat = 6,
    ActivateConfig = 7,
    Rebooting = 8,
}

impl MessageKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MessageKind::SetCharacteristics,
            2 => MessageKind::Ack,
            3 => MessageKind::Nack,
            4 => MessageKind::Interrogate,
            5 => MessageKind::InterrogateReply,
            6 => MessageKind::Heartbeat,
            7 => MessageKind::ActivateConfig,
            8 => MessageKind::Rebooting,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::SetCharacteristics => "set_characteristics",
            MessageKind::Ack => "ack",
            MessageKind::Nack => "nack",
            MessageKind::Interrogate => "interrogate",
            MessageKind::InterrogateReply => "interrogate_reply",
            MessageKind::Heartbeat => "heartbeat",
            MessageKind::ActivateConfig => "activate_config",
            MessageKind::Rebooting => "rebooting",
        }
    }
}

/// What a device says about itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviceInfo {
    pub characteristics: Characteristics,
    pub profile: HardwareProfile,
    /// Names of the active configuration files, in activation order.
    pub config_names: Vec<String>,
    pub config_revision: u64,
    pub active_config_digest: Digest64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeartbeatStatus {
    pub healthy: bool,
    pub config_revision: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MessageBody {
    SetCharacteristics(Characteristics),
    Ack,
    Nack(String),
    Interrogate,
    InterrogateReply(DeviceInfo),
    /// `None` in a request, `Some` in a reply.
    Heartbeat(Option<HeartbeatStatus>),
    ActivateConfig(Vec<String>),
    Rebooting,
}

impl MessageBody {
    pub fn kind(&self) -> MessageKind {
        match self {
            MessageBody::SetCharacteristics(_) => MessageKind::SetCharacteristics,
            MessageBody::Ack => MessageKind::Ack,
            MessageBody::Nack(_) => MessageKind::Nack,
            MessageBody::Interrogate => MessageKind::Interrogate,
            MessageBody::InterrogateReply(_) => MessageKind::InterrogateReply,
            MessageBody::Heartbeat(_) => MessageKind::Heartbeat,
            MessageBody::ActivateConfig(_) => MessageKind::ActivateConfig,
            MessageBody::Rebooting => MessageKind::Rebooting,
        }
    }

    pub fn is_request(&self) -> bool {
        matches!(
            self,
            MessageBody::SetCharacteristics(_)
                | MessageBody::Interrogate
                | MessageBody::Heartbeat(None)
                | MessageBody::ActivateConfig(_)
        )
    }

    /// Whether `reply` is an acceptable answer to this request.
    pub fn accepts_reply(&self, reply: &MessageBody) -> bool {
        match (self, reply) {
            (_, MessageBody::Nack(_) | MessageBody::Rebooting) => true,
            (MessageBody::SetCharacteristics(_) | MessageBody::ActivateConfig(_), MessageBody::Ack) => true,
            (MessageBody::Interrogate, MessageBody::InterrogateReply(_)) => true,
            (MessageBody::Heartbeat(None), MessageBody::Heartbeat(Some(_))) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConduitMessage {
    pub correlation_id: u64,
    pub body: MessageBody,
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("malformed {0:?} payload")]
    BadPayload(MessageKind),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ConduitMessage {
    pub fn new(correlation_id: u64, body: MessageBody) -> Self {
        ConduitMessage { correlation_id, body }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        encode_body(&mut payload, &self.body);
        let mut out = Vec::with_capacity(payload.len() + 13);
        out.extend_from_slice(&((payload.len() + 9) as u32).to_be_bytes());
        out.push(self.body.kind() as u8);
        out.extend_from_slice(&self.correlation_id.to_be_bytes());
        out.extend_from_slice(&payload);
        out
    }

    /// Decodes the bytes after the length prefix.
    pub fn decode(frame: &[u8]) -> Result<Self, FrameError> {
        if frame.len() < 9 {
            return Err(FrameError::Io(io::Error::new(ErrorKind::UnexpectedEof, "short frame")));
        }
        let kind = MessageKind::from_u8(frame[0]).ok_or(FrameError::UnknownKind(frame[0]))?;
        let correlation_id = u64::from_be_bytes(frame[1..9].try_into().unwrap());
        let mut r = PayloadReader { buf: &frame[9..] };
        let body = decode_body(kind, &mut r).ok_or(FrameError::BadPayload(kind))?;
        if !r.buf.is_empty() {
            return Err(FrameError::BadPayload(kind));
        }
        Ok(ConduitMessage { correlation_id, body })
    }
}

pub fn write_frame(w: &mut impl Write, msg: &ConduitMessage) -> io::Result<()> {
    w.write_all(&msg.encode())?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> Result<Option<ConduitMessage>, FrameError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let mut frame = vec![0u8; len];
    r.read_exact(&mut frame)?;
    ConduitMessage::decode(&frame).map(Some)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let bytes = &s.as_bytes()[..s.len().min(u16::MAX as usize)];
    out.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
    out.extend_from_slice(bytes);
}

fn put_characteristics(out: &mut Vec<u8>, c: &Characteristics) {
    out.extend_from_slice(&c.device_address.get().to_be_bytes());
    out.extend_from_slice(&c.ip_config.ip.octets());
    out.push(c.ip_config.dhcp_enabled as u8);
}

fn put_names(out: &mut Vec<u8>, names: &[String]) {
    out.extend_from_slice(&(names.len() as u16).to_be_bytes());
    for n in names {
        put_str(out, n);
    }
}

fn encode_body(out: &mut Vec<u8>, body: &MessageBody) {
    match body {
        MessageBody::SetCharacteristics(c) => put_characteristics(out, c),
        MessageBody::Ack | MessageBody::Interrogate | MessageBody::Rebooting | MessageBody::Heartbeat(None) => {}
        MessageBody::Nack(reason) => put_str(out, reason),
        MessageBody::InterrogateReply(info) => {
            put_characteristics(out, &info.characteristics);
            put_str(out, &info.profile.device_type);
            put_str(out, &info.profile.firmware_version.to_string());
            out.extend_from_slice(&(info.profile.hardware_params.len() as u16).to_be_bytes());
            for (k, v) in &info.profile.hardware_params {
                put_str(out, k);
                put_str(out, v);
            }
            out.extend_from_slice(&info.config_revision.to_be_bytes());
            put_names(out, &info.config_names);
            out.extend_from_slice(&info.active_config_digest.0.to_be_bytes());
        }
        MessageBody::Heartbeat(Some(status)) => {
            out.push(status.healthy as u8);
            out.extend_from_slice(&status.config_revision.to_be_bytes());
        }
        MessageBody::ActivateConfig(names) => put_names(out, names),
    }
}

struct PayloadReader<'a> {
    buf: &'a [u8],
}

impl<'a> PayloadReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Some(head)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_be_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_be_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Option<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }

    fn bool(&mut self) -> Option<bool> {
        match self.u8()? {
            0 => Some(false),
            1 => Some(true),
            _ => None,
        }
    }

    fn characteristics(&mut self) -> Option<Characteristics> {
        let device_address = DeviceAddress::new(self.u32()?)?;
        let ip = self.take(4)?;
        let ip = Ipv4Addr::new(ip[0], ip[1], ip[2], ip[3]);
        let dhcp_enabled = self.bool()?;
        Some(Characteristics { device_address, ip_config: IpConfig { ip, dhcp_enabled } })
    }

    fn names(&mut self) -> Option<Vec<String>> {
        let n = self.u16()?;
        (0..n).map(|_| self.string()).collect()
    }
}

fn decode_body(kind: MessageKind, r: &mut PayloadReader<'_>) -> Option<MessageBody> {
    Some(match kind {
        MessageKind::SetCharacteristics => MessageBody::SetCharacteristics(r.characteristics()?),
        MessageKind::Ack => MessageBody::Ack,
        MessageKind::Nack => MessageBody::Nack(r.string()?),
        MessageKind::Interrogate => MessageBody::Interrogate,
        MessageKind::Rebooting => MessageBody::Rebooting,
        MessageKind::InterrogateReply => {
            let characteristics = r.characteristics()?;
            let device_type = r.string()?;
            let firmware_version = r.string()?.parse().ok()?;
            let nparams = r.u16()?;
            let mut params = BTreeMap::new();
            for _ in 0..nparams {
                let k = r.string()?;
                let v = r.string()?;
                params.insert(k, v);
            }
            let profile = HardwareProfile::new(device_type, params, firmware_version)?;
            let config_revision = r.u64()?;
            let config_names = r.names()?;
            let active_config_digest = Digest64(r.u64()?);
            MessageBody::InterrogateReply(DeviceInfo {
                characteristics,
                profile,
                config_names,
                config_revision,
                active_config_digest,
            })
        }
        MessageKind::Heartbeat => {
            if r.buf.is_empty() {
                MessageBody::Heartbeat(None)
            } else {
                let healthy = r.bool()?;
                let config_revision = r.u64()?;
                MessageBody::Heartbeat(Some(HeartbeatStatus { healthy, config_revision }))
            }
        }
        MessageKind::ActivateConfig => MessageBody::ActivateConfig(r.names()?),
    })
}

#[derive(Debug, thiserror::Error)]
pub enum ConduitError {
    /// No usable reply in time, including refused or dropped connections.
    #[error("conduit timeout: {0}")]
    Timeout(String),
    #[error("device refused request: {0}")]
    NackReceived(String),
    #[error("conduit protocol error: {0}")]
    Protocol(String),
    #[error("{0:?} is not a request")]
    NotARequest(MessageKind),
}

/// Request/reply client. One TCP connection per request; each attempt gets
/// a fresh correlation id.
#[derive(Debug)]
pub struct ConduitClient {
    timeout: Duration,
    next_correlation: AtomicU64,
    mismatched: AtomicU64,
}

impl ConduitClient {
    pub fn new(timeout: Duration) -> Self {
        ConduitClient { timeout, next_correlation: AtomicU64::new(1), mismatched: AtomicU64::new(0) }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    /// Replies discarded for carrying the wrong correlation id.
    pub fn mismatched_replies(&self) -> u64 {
        self.mismatched.load(Ordering::Relaxed)
    }

    /// Sends one request and waits for its reply. A `Nack` reply is
    /// returned as [`ConduitError::NackReceived`].
    pub fn send_request(&self, endpoint: SocketAddr, body: MessageBody) -> Result<ConduitMessage, ConduitError> {
        if !body.is_request() {
            return Err(ConduitError::NotARequest(body.kind()));
        }
        let correlation_id = self.next_correlation.fetch_add(1, Ordering::Relaxed);
        let request = ConduitMessage::new(correlation_id, body);
        let deadline = Instant::now() + self.timeout;
        let timeout_err = |what: &str| ConduitError::Timeout(format!("{endpoint}: {what}"));

        let mut stream = TcpStream::connect_timeout(&endpoint, self.timeout)
            .map_err(|e| timeout_err(&format!("connect: {e}")))?;
        let _ = stream.set_nodelay(true);
        stream.set_write_timeout(Some(self.timeout)).map_err(|e| timeout_err(&e.to_string()))?;
        trace!(%endpoint, correlation_id, kind = request.body.kind().as_str(), "conduit send");
        write_frame(&mut stream, &request).map_err(|e| timeout_err(&format!("send: {e}")))?;

        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(timeout_err("no reply"));
            }
            stream.set_read_timeout(Some(remaining)).map_err(|e| timeout_err(&e.to_string()))?;
            let reply = match read_frame(&mut stream) {
                Ok(Some(reply)) => reply,
                Ok(None) => return Err(timeout_err("connection closed without reply")),
                Err(FrameError::Io(e)) => return Err(timeout_err(&e.to_string())),
                Err(e) => return Err(ConduitError::Protocol(e.to_string())),
            };
            if reply.correlation_id != correlation_id {
                self.mismatched.fetch_add(1, Ordering::Relaxed);
                continue;
            }
            if !request.body.accepts_reply(&reply.body) {
                return Err(ConduitError::Protocol(format!(
                    "{} answered with {}",
                    request.body.kind().as_str(),
                    reply.body.kind().as_str()
                )));
            }
            if let MessageBody::Nack(reason) = reply.body {
                return Err(ConduitError::NackReceived(reason));
            }
            return Ok(reply);
        }
    }
}
