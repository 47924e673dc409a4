//! Simulated fleet device: a conduit listener and an FTP listener on
//! loopback over shared device state, with scriptable faults.
//!
//! Firmware update: a file stored under `/firmware/` is staged, its first
//! line naming the version it carries. The next conduit request is answered
//! with `Rebooting`; the device then ignores all traffic for its reboot
//! delay and comes back running the staged version.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Ipv4Addr, Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use tracing::{debug, trace};

use crate::clock::{Clock, Timestamp};
use crate::digest::{config_set_digest, sha256_hex, Digest64};
use crate::inventory::{Characteristics, DeviceAddress, FirmwareVersion, HardwareProfile, IpConfig};
use crate::link::conduit::{read_frame, write_frame};
use crate::link::{
    config_path, ConduitMessage, DeviceEndpoints, DeviceInfo, HeartbeatStatus, MessageBody, MessageKind, CONFIG_DIR,
    FIRMWARE_DIR,
};
use crate::snmp::MacAddress;

/// Simulated time a device takes to answer one conduit request.
pub const CONDUIT_LATENCY: Duration = Duration::from_millis(2);
/// Simulated time to set up one FTP session.
pub const FTP_SESSION_LATENCY: Duration = Duration::from_millis(5);
/// Simulated FTP throughput, bytes per second.
pub const FTP_BYTES_PER_SEC: u64 = 10 * 1024 * 1024;
pub const DEFAULT_REBOOT_DELAY: Duration = Duration::from_secs(5);

/// Builds a firmware image the simulated devices understand.
pub fn firmware_image(device_type: &str, version: &FirmwareVersion) -> Vec<u8> {
    let mut image = format!("{version}\n# firmware for {device_type}\n").into_bytes();
    image.extend((0..4096u32).map(|i| (i.wrapping_mul(2_654_435_761) >> 24) as u8));
    image
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    SetCharacteristics,
    /// The first interrogation after characteristics were set.
    FirmwareCheck,
    ActivateConfig,
}

impl std::str::FromStr for CrashPoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "set_characteristics" => Ok(CrashPoint::SetCharacteristics),
            "firmware_check" => Ok(CrashPoint::FirmwareCheck),
            "activate_config" => Ok(CrashPoint::ActivateConfig),
            other => Err(format!("unknown crash point {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DeviceFaults {
    pub crash_on: Option<CrashPoint>,
    /// Abort STORs whose path starts with this prefix halfway through.
    pub ftp_abort_prefix: Option<String>,
    /// Flip a bit in the next stored file.
    pub corrupt_next_transfer: bool,
    /// Come back from a reboot on the old firmware.
    pub boot_old_firmware: bool,
    pub reject_activation: bool,
    pub nack_set_characteristics: bool,
    /// Heartbeats report the device unhealthy.
    pub report_failure: bool,
}

/// One thing the device observed, in arrival order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Interaction {
    /// `reply` is `None` when the device was silent.
    Conduit { request: MessageKind, reply: Option<MessageKind> },
    Stor { path: String, bytes: u64, completed: bool },
    Retr { path: String, bytes: u64 },
}

impl Interaction {
    /// Traffic that changes device state on behalf of a heal.
    pub fn is_restoring(&self) -> bool {
        match self {
            Interaction::Conduit { request, .. } => {
                matches!(request, MessageKind::SetCharacteristics | MessageKind::ActivateConfig)
            }
            Interaction::Stor { .. } => true,
            Interaction::Retr { .. } => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeviceSeed {
    pub mac: MacAddress,
    pub profile: HardwareProfile,
    pub characteristics: Characteristics,
    /// Configuration files present and active at power-on.
    pub config: Vec<(String, Vec<u8>)>,
    pub reboot_delay: Duration,
}

impl DeviceSeed {
    pub fn new(mac: MacAddress, device_type: &str, firmware: &str) -> Self {
        DeviceSeed {
            mac,
            profile: HardwareProfile::new(device_type, BTreeMap::new(), firmware.parse().expect("valid firmware"))
                .expect("non-empty type"),
            characteristics: Characteristics {
                device_address: DeviceAddress::new(1).expect("nonzero"),
                ip_config: IpConfig { ip: Ipv4Addr::new(192, 168, 0, 1), dhcp_enabled: true },
            },
            config: Vec::new(),
            reboot_delay: DEFAULT_REBOOT_DELAY,
        }
    }
}

#[derive(Debug)]
pub struct DeviceState {
    pub mac: MacAddress,
    pub profile: HardwareProfile,
    pub characteristics: Characteristics,
    pub files: BTreeMap<String, Vec<u8>>,
    pub active_config: Vec<String>,
    pub active_config_digest: Digest64,
    pub config_revision: u64,
    pub attached: bool,
    pub crashed: bool,
    pub reboot_delay: Duration,
    staged_firmware: Option<FirmwareVersion>,
    reboot_pending: bool,
    rebooting_until: Option<Timestamp>,
    characteristics_set: bool,
    pub faults: DeviceFaults,
    pub log: Vec<Interaction>,
    /// Bytes received per remote path, including aborted transfers.
    pub bytes_received: BTreeMap<String, u64>,
    pub reboots: u32,
}

impl DeviceState {
    fn new(seed: DeviceSeed) -> Self {
        let mut files = BTreeMap::new();
        let mut active = Vec::new();
        for (name, bytes) in seed.config {
            files.insert(config_path(&name), bytes);
            active.push(name);
        }
        let mut state = DeviceState {
            mac: seed.mac,
            profile: seed.profile,
            characteristics: seed.characteristics,
            files,
            active_config: Vec::new(),
            active_config_digest: config_set_digest([]),
            config_revision: 0,
            attached: false,
            crashed: false,
            reboot_delay: seed.reboot_delay,
            staged_firmware: None,
            reboot_pending: false,
            rebooting_until: None,
            characteristics_set: false,
            faults: DeviceFaults::default(),
            log: Vec::new(),
            bytes_received: BTreeMap::new(),
            reboots: 0,
        };
        state.activate(active).expect("seed files exist");
        state.config_revision = 1;
        state
    }

    fn activate(&mut self, names: Vec<String>) -> Result<(), String> {
        let mut set = Vec::with_capacity(names.len());
        for name in &names {
            let bytes = self.files.get(&config_path(name)).ok_or_else(|| format!("no such file {name}"))?;
            set.push((name.as_str(), bytes.as_slice()));
        }
        self.active_config_digest = config_set_digest(set);
        self.active_config = names;
        self.config_revision += 1;
        Ok(())
    }

    /// Completes a reboot whose delay has passed.
    fn settle(&mut self, now: Timestamp) {
        if let Some(until) = self.rebooting_until {
            if now >= until {
                self.rebooting_until = None;
                if let Some(v) = self.staged_firmware.take() {
                    if !self.faults.boot_old_firmware {
                        self.profile.firmware_version = v;
                    }
                }
                self.reboots += 1;
            }
        }
    }

    pub fn is_silent(&self, now: Timestamp) -> bool {
        !self.attached || self.crashed || self.rebooting_until.is_some_and(|t| now < t)
    }

    pub fn info(&self) -> DeviceInfo {
        DeviceInfo {
            characteristics: self.characteristics,
            profile: self.profile.clone(),
            config_names: self.active_config.clone(),
            config_revision: self.config_revision,
            active_config_digest: self.active_config_digest,
        }
    }

    pub fn firmware_bytes(&self) -> u64 {
        self.bytes_under(FIRMWARE_DIR)
    }

    pub fn config_bytes(&self) -> u64 {
        self.bytes_under(CONFIG_DIR)
    }

    fn bytes_under(&self, dir: &str) -> u64 {
        self.bytes_received.iter().filter(|(p, _)| p.starts_with(dir)).map(|(_, n)| n).sum()
    }

    /// Replaces a configuration file and activates the same set again, as
    /// an operator edit on the device would.
    pub fn edit_config(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(config_path(name), bytes);
        let mut names = self.active_config.clone();
        if !names.iter().any(|n| n == name) {
            names.push(name.to_string());
        }
        self.activate(names).expect("file just written");
    }

    fn handle_request(&mut self, body: MessageBody) -> Option<MessageBody> {
        if self.reboot_pending {
            self.reboot_pending = false;
            return Some(MessageBody::Rebooting);
        }
        match body {
            MessageBody::SetCharacteristics(c) => {
                if self.faults.crash_on == Some(CrashPoint::SetCharacteristics) {
                    self.crashed = true;
                    return None;
                }
                if self.faults.nack_set_characteristics {
                    return Some(MessageBody::Nack("characteristics locked".into()));
                }
                self.characteristics = c;
                self.characteristics_set = true;
                Some(MessageBody::Ack)
            }
            MessageBody::Interrogate => {
                if self.characteristics_set && self.faults.crash_on == Some(CrashPoint::FirmwareCheck) {
                    self.crashed = true;
                    return None;
                }
                Some(MessageBody::InterrogateReply(self.info()))
            }
            MessageBody::Heartbeat(_) => Some(MessageBody::Heartbeat(Some(HeartbeatStatus {
                healthy: !self.faults.report_failure,
                config_revision: self.config_revision,
            }))),
            MessageBody::ActivateConfig(names) => {
                if self.faults.crash_on == Some(CrashPoint::ActivateConfig) {
                    self.crashed = true;
                    return None;
                }
                if self.faults.reject_activation {
                    return Some(MessageBody::Nack("activation rejected".into()));
                }
                match self.activate(names) {
                    Ok(()) => Some(MessageBody::Ack),
                    Err(e) => Some(MessageBody::Nack(e)),
                }
            }
            other => Some(MessageBody::Nack(format!("unexpected {}", other.kind().as_str()))),
        }
    }
}

type Shared = Arc<Mutex<DeviceState>>;

fn lock(state: &Shared) -> MutexGuard<'_, DeviceState> {
    state.lock().expect("device state poisoned")
}

pub struct SimDevice {
    mac: MacAddress,
    state: Shared,
    endpoints: DeviceEndpoints,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl SimDevice {
    pub fn start(seed: DeviceSeed, clock: Clock) -> std::io::Result<Self> {
        let mac = seed.mac;
        let state = Arc::new(Mutex::new(DeviceState::new(seed)));
        let conduit = TcpListener::bind("127.0.0.1:0")?;
        let ftp = TcpListener::bind("127.0.0.1:0")?;
        let endpoints = DeviceEndpoints { conduit: conduit.local_addr()?, ftp: ftp.local_addr()? };
        let stop = Arc::new(AtomicBool::new(false));
        let mut workers = Vec::new();
        {
            let (state, stop, clock) = (Arc::clone(&state), Arc::clone(&stop), clock.clone());
            workers.push(std::thread::Builder::new().name(format!("conduit-{mac}")).spawn(move || {
                accept_loop(conduit, &stop, |s| serve_conduit(s, &state, &clock))
            })?);
        }
        {
            let (state, stop) = (Arc::clone(&state), Arc::clone(&stop));
            workers.push(std::thread::Builder::new().name(format!("ftp-{mac}")).spawn(move || {
                accept_loop(ftp, &stop, |s| {
                    let (state, clock) = (Arc::clone(&state), clock.clone());
                    let _ = std::thread::Builder::new().name("ftp-session".into()).spawn(move || {
                        FtpSession::run(s, &state, &clock)
                    });
                })
            })?);
        }
        Ok(SimDevice { mac, state, endpoints, stop, workers })
    }

    pub fn mac(&self) -> MacAddress {
        self.mac
    }

    pub fn endpoints(&self) -> DeviceEndpoints {
        self.endpoints
    }

    /// Locks and exposes the device state.
    pub fn state(&self) -> MutexGuard<'_, DeviceState> {
        lock(&self.state)
    }

    pub fn set_attached(&self, attached: bool) {
        self.state().attached = attached;
    }

    pub fn crash(&self) {
        self.state().crashed = true;
    }

    pub fn log(&self) -> Vec<Interaction> {
        self.state().log.clone()
    }
}

impl Drop for SimDevice {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accepts.
        let _ = TcpStream::connect_timeout(&self.endpoints.conduit, Duration::from_millis(100));
        let _ = TcpStream::connect_timeout(&self.endpoints.ftp, Duration::from_millis(100));
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn accept_loop(listener: TcpListener, stop: &AtomicBool, mut handle: impl FnMut(TcpStream)) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        if let Ok(stream) = stream {
            handle(stream);
        }
    }
}

/// One request per connection, answered inline: the accept thread is the
/// device's single conduit session.
fn serve_conduit(mut stream: TcpStream, state: &Shared, clock: &Clock) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let _ = stream.set_nodelay(true);
    let request = match read_frame(&mut stream) {
        Ok(Some(m)) => m,
        _ => return,
    };
    let now = clock.now();
    let reply = {
        let mut st = lock(state);
        st.settle(now);
        let kind = request.body.kind();
        let reply = if st.is_silent(now) { None } else { st.handle_request(request.body) };
        st.log.push(Interaction::Conduit { request: kind, reply: reply.as_ref().map(MessageBody::kind) });
        if reply == Some(MessageBody::Rebooting) {
            st.rebooting_until = Some(now.after(st.reboot_delay));
            debug!(mac = %st.mac, "rebooting");
        }
        reply
    };
    match reply {
        Some(body) => {
            clock.sleep(CONDUIT_LATENCY);
            let _ = write_frame(&mut stream, &ConduitMessage::new(request.correlation_id, body));
        }
        None => {
            let _ = stream.shutdown(Shutdown::Both);
        }
    }
}

struct FtpSession<'a> {
    control: BufReader<TcpStream>,
    out: TcpStream,
    state: &'a Shared,
    clock: &'a Clock,
    passive: Option<TcpListener>,
    allocated: Option<u64>,
}

impl<'a> FtpSession<'a> {
    fn run(stream: TcpStream, state: &'a Shared, clock: &'a Clock) {
        let now = clock.now();
        {
            let mut st = lock(state);
            st.settle(now);
            if st.is_silent(now) {
                let _ = stream.shutdown(Shutdown::Both);
                return;
            }
        }
        clock.sleep(FTP_SESSION_LATENCY);
        let _ = stream.set_read_timeout(Some(Duration::from_secs(10)));
        let Ok(out) = stream.try_clone() else { return };
        let mut session = FtpSession {
            control: BufReader::new(stream),
            out,
            state,
            clock,
            passive: None,
            allocated: None,
        };
        let _ = session.serve();
    }

    fn reply(&mut self, code: u16, text: &str) -> std::io::Result<()> {
        trace!(code, text, "ftp reply");
        self.out.write_all(format!("{code} {text}\r\n").as_bytes())
    }

    fn serve(&mut self) -> std::io::Result<()> {
        self.reply(220, "sim device ready")?;
        let mut line = String::new();
        loop {
            line.clear();
            if self.control.read_line(&mut line)? == 0 {
                return Ok(());
            }
            let cmd = line.trim_end();
            let (verb, arg) = cmd.split_once(' ').unwrap_or((cmd, ""));
            match verb.to_ascii_uppercase().as_str() {
                "USER" => self.reply(331, "password please")?,
                "PASS" => self.reply(230, "logged in")?,
                "TYPE" if arg.eq_ignore_ascii_case("I") => self.reply(200, "binary")?,
                "TYPE" => self.reply(504, "binary only")?,
                "ALLO" => {
                    self.allocated = arg.trim().parse().ok();
                    self.reply(200, "ok")?
                }
                "PASV" => {
                    let l = TcpListener::bind("127.0.0.1:0")?;
                    let port = l.local_addr()?.port();
                    self.passive = Some(l);
                    self.reply(227, &format!("Entering Passive Mode (127,0,0,1,{},{})", port >> 8, port & 0xff))?
                }
                "STOR" => self.stor(arg)?,
                "RETR" => self.retr(arg)?,
                "HASH" => {
                    let found = lock(self.state).files.get(arg).map(|b| (b.len(), sha256_hex(b)));
                    match found {
                        Some((len, hex)) => {
                            let end = len.saturating_sub(1);
                            self.reply(213, &format!("SHA-256 0-{end} {hex} {arg}"))?
                        }
                        None => self.reply(550, "no such file")?,
                    }
                }
                "QUIT" => {
                    self.reply(221, "bye")?;
                    return Ok(());
                }
                _ => self.reply(502, "not implemented")?,
            }
        }
    }

    fn data_connection(&mut self) -> std::io::Result<Option<TcpStream>> {
        let Some(listener) = self.passive.take() else {
            self.reply(425, "use PASV first")?;
            return Ok(None);
        };
        let (stream, _) = listener.accept()?;
        stream.set_read_timeout(Some(Duration::from_secs(10)))?;
        Ok(Some(stream))
    }

    fn stor(&mut self, path: &str) -> std::io::Result<()> {
        let Some(mut data) = self.data_connection()? else { return Ok(()) };
        let path = path.to_string();
        self.reply(150, "send it")?;
        let abort_at = {
            let st = lock(self.state);
            st.faults.ftp_abort_prefix.as_ref().filter(|p| path.starts_with(p.as_str())).map(|_| self.allocated.unwrap_or(2) / 2)
        };
        let mut bytes = Vec::new();
        let completed = match abort_at {
            Some(limit) => {
                let mut chunk = vec![0u8; 4096];
                while (bytes.len() as u64) < limit.max(1) {
                    let n = data.read(&mut chunk)?;
                    if n == 0 {
                        break;
                    }
                    bytes.extend_from_slice(&chunk[..n]);
                }
                bytes.truncate(limit as usize);
                let _ = data.shutdown(Shutdown::Both);
                false
            }
            None => {
                data.read_to_end(&mut bytes)?;
                true
            }
        };
        drop(data);
        self.allocated = None;
        let n = bytes.len() as u64;
        self.clock.sleep(Duration::from_nanos(n.saturating_mul(1_000_000_000) / FTP_BYTES_PER_SEC));
        {
            let mut st = lock(self.state);
            *st.bytes_received.entry(path.clone()).or_default() += n;
            st.log.push(Interaction::Stor { path: path.clone(), bytes: n, completed });
            if completed {
                if std::mem::take(&mut st.faults.corrupt_next_transfer) {
                    match bytes.last_mut() {
                        Some(b) => *b ^= 0x01,
                        None => bytes.push(0),
                    }
                }
                if path.starts_with(FIRMWARE_DIR) {
                    st.staged_firmware = staged_version(&bytes);
                    st.reboot_pending = true;
                }
                st.files.insert(path, bytes);
            }
        }
        if completed {
            self.reply(226, "stored")
        } else {
            self.reply(426, "connection closed; transfer aborted")
        }
    }

    fn retr(&mut self, path: &str) -> std::io::Result<()> {
        let bytes = lock(self.state).files.get(path).cloned();
        let Some(bytes) = bytes else {
            return self.reply(550, "no such file");
        };
        let Some(mut data) = self.data_connection()? else { return Ok(()) };
        self.reply(150, "here it comes")?;
        data.write_all(&bytes)?;
        drop(data);
        self.clock.sleep(Duration::from_nanos((bytes.len() as u64).saturating_mul(1_000_000_000) / FTP_BYTES_PER_SEC));
        lock(self.state).log.push(Interaction::Retr { path: path.to_string(), bytes: bytes.len() as u64 });
        self.reply(226, "sent")
    }
}

fn staged_version(image: &[u8]) -> Option<FirmwareVersion> {
    let first = image.split(|&b| b == b'\n').next()?;
    std::str::from_utf8(first).ok()?.split_whitespace().next()?.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::{ConduitClient, ConduitError, FtpClient, FtpError};

    fn device() -> SimDevice {
        let mut seed = DeviceSeed::new("00:0f:d7:00:00:01".parse().unwrap(), "amp", "1.1.0");
        seed.config.push(("main.xml".into(), b"<cfg/>".to_vec()));
        seed.reboot_delay = Duration::from_secs(3);
        let d = SimDevice::start(seed, Clock::virtual_clock()).unwrap();
        d.set_attached(true);
        d
    }

    fn conduit() -> ConduitClient {
        ConduitClient::new(Duration::from_secs(2))
    }

    fn ftp() -> FtpClient {
        FtpClient::new(Duration::from_secs(2), Duration::from_secs(2))
    }

    #[test]
    fn interrogate_returns_seed() {
        let d = device();
        let reply = conduit().send_request(d.endpoints().conduit, MessageBody::Interrogate).unwrap();
        let MessageBody::InterrogateReply(info) = reply.body else { panic!() };
        assert_eq!(info.profile.device_type, "amp");
        assert_eq!(info.profile.firmware_version.to_string(), "1.1.0");
        assert_eq!(info.config_names, vec!["main.xml".to_string()]);
        assert_eq!(info.active_config_digest, config_set_digest([("main.xml", &b"<cfg/>"[..])]));
    }

    #[test]
    fn set_characteristics_is_idempotent() {
        let d = device();
        let c = Characteristics {
            device_address: DeviceAddress::new(42).unwrap(),
            ip_config: IpConfig { ip: Ipv4Addr::new(10, 0, 0, 42), dhcp_enabled: false },
        };
        for _ in 0..2 {
            let r = conduit().send_request(d.endpoints().conduit, MessageBody::SetCharacteristics(c)).unwrap();
            assert_eq!(r.body, MessageBody::Ack);
        }
        let MessageBody::InterrogateReply(info) =
            conduit().send_request(d.endpoints().conduit, MessageBody::Interrogate).unwrap().body
        else {
            panic!()
        };
        assert_eq!(info.characteristics, c);
    }

    #[test]
    fn detached_device_times_out() {
        let d = device();
        d.set_attached(false);
        let err = conduit().send_request(d.endpoints().conduit, MessageBody::Interrogate).unwrap_err();
        assert!(matches!(err, ConduitError::Timeout(_)));
        assert!(matches!(ftp().put(d.endpoints().ftp, "/config/x", b"y"), Err(FtpError::ConnectFailure { .. })));
    }

    #[test]
    fn transfer_sizes_have_matching_receipts() {
        let d = device();
        for size in [0usize, 1, 1024, 1 << 20] {
            let payload: Vec<u8> = (0..size).map(|i| (i % 253) as u8).collect();
            let path = format!("/config/f{size}");
            let receipt = ftp().put(d.endpoints().ftp, &path, &payload).unwrap();
            assert_eq!(receipt.byte_count, size as u64);
            assert_eq!(receipt.digest, Digest64::of(&payload));
            assert_eq!(d.state().files[&path], payload);
            assert_eq!(ftp().get(d.endpoints().ftp, &path).unwrap(), payload);
        }
    }

    #[test]
    fn abort_fault_closes_halfway() {
        let d = device();
        d.state().faults.ftp_abort_prefix = Some("/firmware".into());
        let payload = vec![7u8; 100_000];
        let err = ftp().put(d.endpoints().ftp, "/firmware/2.0.img", &payload).unwrap_err();
        assert!(matches!(err, FtpError::TransferAborted(_)), "{err:?}");
        assert!(!d.state().files.contains_key("/firmware/2.0.img"));
        assert_eq!(d.state().firmware_bytes(), 50_000);
    }

    #[test]
    fn corrupt_fault_changes_receipt_once() {
        let d = device();
        d.state().faults.corrupt_next_transfer = true;
        let r = ftp().put(d.endpoints().ftp, "/config/a", b"hello").unwrap();
        assert_ne!(r.digest, Digest64::of(b"hello"));
        let r = ftp().put(d.endpoints().ftp, "/config/a", b"hello").unwrap();
        assert_eq!(r.digest, Digest64::of(b"hello"));
    }

    #[test]
    fn firmware_update_reboots_into_new_version() {
        let clock = Clock::virtual_clock();
        let seed = DeviceSeed::new("00:0f:d7:00:00:02".parse().unwrap(), "amp", "1.1.0");
        let d = SimDevice::start(seed, clock.clone()).unwrap();
        d.set_attached(true);
        let image = firmware_image("amp", &"1.2.0".parse().unwrap());
        ftp().put(d.endpoints().ftp, "/firmware/1.2.0.img", &image).unwrap();
        let ep = d.endpoints().conduit;
        assert_eq!(conduit().send_request(ep, MessageBody::Interrogate).unwrap().body, MessageBody::Rebooting);
        assert!(conduit().send_request(ep, MessageBody::Interrogate).is_err(), "silent while rebooting");
        clock.sleep(DEFAULT_REBOOT_DELAY);
        let MessageBody::InterrogateReply(info) = conduit().send_request(ep, MessageBody::Interrogate).unwrap().body
        else {
            panic!()
        };
        assert_eq!(info.profile.firmware_version.to_string(), "1.2.0");
        assert_eq!(d.state().reboots, 1);
    }

    #[test]
    fn activation_changes_digest_and_revision() {
        let d = device();
        let before = d.state().config_revision;
        ftp().put(d.endpoints().ftp, "/config/b.xml", b"<b/>").unwrap();
        let r = conduit()
            .send_request(d.endpoints().conduit, MessageBody::ActivateConfig(vec!["b.xml".into()]))
            .unwrap();
        assert_eq!(r.body, MessageBody::Ack);
        let st = d.state();
        assert_eq!(st.active_config_digest, config_set_digest([("b.xml", &b"<b/>"[..])]));
        assert_eq!(st.config_revision, before + 1);
    }

    #[test]
    fn missing_file_activation_is_nacked() {
        let d = device();
        let err = conduit()
            .send_request(d.endpoints().conduit, MessageBody::ActivateConfig(vec!["nope".into()]))
            .unwrap_err();
        assert!(matches!(err, ConduitError::NackReceived(_)));
    }

    #[test]
    fn log_records_every_request() {
        let d = device();
        let _ = conduit().send_request(d.endpoints().conduit, MessageBody::Heartbeat(None));
        d.crash();
        let _ = conduit().send_request(d.endpoints().conduit, MessageBody::Heartbeat(None));
        assert_eq!(
            d.log(),
            vec![
                Interaction::Conduit { request: MessageKind::Heartbeat, reply: Some(MessageKind::Heartbeat) },
                Interaction::Conduit { request: MessageKind::Heartbeat, reply: None },
            ]
        );
    }
}
