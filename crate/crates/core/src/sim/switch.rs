//! Simulated managed switch: an SNMP v2c agent on loopback UDP whose three
//! bridge tables are generated from the current port attachments.

use std::collections::BTreeMap;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use tracing::trace;

use super::SimError;
use crate::snmp::pdu::{error_status, Message, Pdu, PduKind};
use crate::snmp::{MacAddress, Oid, TableRoots, Value};

#[derive(Debug, Default, Clone)]
pub struct SwitchFaults {
    /// Drop every request.
    pub silent: bool,
    /// Answer every request with authorizationError.
    pub reject_all: bool,
    /// Extra objects merged into the served MIB.
    pub injected: BTreeMap<Oid, Value>,
}

#[derive(Debug)]
struct SwitchState {
    community: Vec<u8>,
    roots: TableRoots,
    port_count: u32,
    attachments: BTreeMap<MacAddress, u32>,
    faults: SwitchFaults,
    mib: Option<BTreeMap<Oid, Value>>,
    requests: u64,
}

impl SwitchState {
    fn mib(&mut self) -> &BTreeMap<Oid, Value> {
        if self.mib.is_none() {
            let mut mib = BTreeMap::new();
            for (mac, port) in &self.attachments {
                let index: Vec<u32> = mac.octets().iter().map(|&o| u32::from(o)).collect();
                mib.insert(self.roots.mac_table.child(&index), Value::OctetString(mac.octets().to_vec()));
                mib.insert(self.roots.port_table.child(&index), Value::Integer(i64::from(*port)));
            }
            for port in 1..=self.port_count {
                mib.insert(self.roots.interface_table.child(&[port]), Value::OctetString(interface_name(port).into_bytes()));
            }
            mib.extend(self.faults.injected.iter().map(|(k, v)| (k.clone(), v.clone())));
            self.mib = Some(mib);
        }
        self.mib.as_ref().expect("built above")
    }

    fn answer(&mut self, request: &Message) -> Option<Message> {
        self.requests += 1;
        if self.faults.silent {
            return None;
        }
        let mut pdu = Pdu {
            kind: PduKind::Response,
            request_id: request.pdu.request_id,
            error_status: error_status::NO_ERROR,
            error_index: 0,
            varbinds: Vec::new(),
        };
        if self.faults.reject_all || request.community != self.community {
            pdu.error_status = error_status::AUTHORIZATION_ERROR;
            pdu.varbinds = request.pdu.varbinds.clone();
            return Some(Message { version: request.version, community: request.community.clone(), pdu });
        }
        let kind = request.pdu.kind;
        for (oid, _) in &request.pdu.varbinds {
            let mib = self.mib();
            let vb = match kind {
                PduKind::Get => (oid.clone(), mib.get(oid).cloned().unwrap_or(Value::NoSuchObject)),
                PduKind::GetNext => {
                    use std::ops::Bound::{Excluded, Unbounded};
                    match mib.range((Excluded(oid.clone()), Unbounded)).next() {
                        Some((k, v)) => (k.clone(), v.clone()),
                        None => (oid.clone(), Value::EndOfMibView),
                    }
                }
                _ => {
                    pdu.error_status = error_status::GEN_ERR;
                    (oid.clone(), Value::Null)
                }
            };
            pdu.varbinds.push(vb);
        }
        Some(Message { version: request.version, community: request.community.clone(), pdu })
    }
}

pub fn interface_name(port: u32) -> String {
    format!("Gi0/{port}")
}

pub struct SimSwitch {
    state: Arc<Mutex<SwitchState>>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl SimSwitch {
    pub fn start(community: &str, roots: TableRoots, port_count: u32) -> std::io::Result<Self> {
        let socket = UdpSocket::bind("127.0.0.1:0")?;
        socket.set_read_timeout(Some(Duration::from_millis(20)))?;
        let addr = socket.local_addr()?;
        let state = Arc::new(Mutex::new(SwitchState {
            community: community.as_bytes().to_vec(),
            roots,
            port_count,
            attachments: BTreeMap::new(),
            faults: SwitchFaults::default(),
            mib: None,
            requests: 0,
        }));
        let stop = Arc::new(AtomicBool::new(false));
        let worker = {
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            std::thread::Builder::new().name("sim-switch".into()).spawn(move || serve(socket, state, stop))?
        };
        Ok(SimSwitch { state, addr, stop, worker: Some(worker) })
    }

    pub fn endpoint(&self) -> SocketAddr {
        self.addr
    }

    fn with<T>(&self, f: impl FnOnce(&mut SwitchState) -> T) -> T {
        f(&mut self.state.lock().expect("switch state poisoned"))
    }

    pub fn port_count(&self) -> u32 {
        self.with(|s| s.port_count)
    }

    pub fn attach(&self, port: u32, mac: MacAddress) -> Result<(), SimError> {
        self.with(|s| {
            if port == 0 || port > s.port_count {
                return Err(SimError::NoSuchPort(port));
            }
            if s.attachments.contains_key(&mac) {
                return Err(SimError::DuplicateMac(mac));
            }
            s.attachments.insert(mac, port);
            s.mib = None;
            Ok(())
        })
    }

    /// Returns the port the MAC was on.
    pub fn detach(&self, mac: &MacAddress) -> Result<u32, SimError> {
        self.with(|s| {
            let port = s.attachments.remove(mac).ok_or(SimError::UnknownMac(*mac))?;
            s.mib = None;
            Ok(port)
        })
    }

    pub fn attachments(&self) -> BTreeMap<MacAddress, u32> {
        self.with(|s| s.attachments.clone())
    }

    pub fn port_of(&self, mac: &MacAddress) -> Option<u32> {
        self.with(|s| s.attachments.get(mac).copied())
    }

    pub fn set_faults(&self, faults: SwitchFaults) {
        self.with(|s| {
            s.faults = faults;
            s.mib = None;
        })
    }

    pub fn faults(&self) -> SwitchFaults {
        self.with(|s| s.faults.clone())
    }

    pub fn requests_served(&self) -> u64 {
        self.with(|s| s.requests)
    }
}

impl Drop for SimSwitch {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn serve(socket: UdpSocket, state: Arc<Mutex<SwitchState>>, stop: Arc<AtomicBool>) {
    let mut buf = vec![0u8; 65_535];
    while !stop.load(Ordering::SeqCst) {
        let (n, from) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(_) => continue,
        };
        let Ok(request) = Message::decode(&buf[..n]) else {
            trace!(%from, "undecodable datagram dropped");
            continue;
        };
        let reply = state.lock().expect("switch state poisoned").answer(&request);
        if let Some(reply) = reply {
            let _ = socket.send_to(&reply.encode(), from);
        }
    }
}
