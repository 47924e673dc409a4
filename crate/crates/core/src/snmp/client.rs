use std::io::ErrorKind;
use std::net::{IpAddr, SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use tracing::{debug, trace};

use super::pdu::{error_status, Message, Pdu, PduKind, Value, VERSION_2C};
use super::Oid;

pub const DEFAULT_SNMP_PORT: u16 = 161;

#[derive(Debug, thiserror::Error)]
pub enum SnmpError {
    /// No answer after all retries. Also what a silently-dropping agent
    /// looks like when the community is wrong.
    #[error("agent {agent} did not answer after {attempts} attempts")]
    Timeout { agent: SocketAddr, attempts: u32 },
    #[error("agent {0} refused the community string")]
    AuthFailure(SocketAddr),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("community must not be empty")]
    EmptyCommunity,
    #[error("cannot resolve agent address {0:?}")]
    BadEndpoint(String),
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct SnmpClientOptions {
    pub timeout: Duration,
    pub retries: u32,
}

impl Default for SnmpClientOptions {
    fn default() -> Self {
        SnmpClientOptions { timeout: Duration::from_secs(1), retries: 2 }
    }
}

/// A v2c manager session bound to one agent.
pub struct SnmpClient {
    socket: UdpSocket,
    agent: SocketAddr,
    community: Vec<u8>,
    options: SnmpClientOptions,
    next_request_id: i32,
    discarded: u64,
}

impl SnmpClient {
    pub fn connect(agent: &str, community: &str, options: SnmpClientOptions) -> Result<Self, SnmpError> {
        if community.is_empty() {
            return Err(SnmpError::EmptyCommunity);
        }
        let agent = resolve_agent(agent)?;
        let bind: SocketAddr = if agent.is_ipv4() {
            "0.0.0.0:0".parse().unwrap()
        } else {
            "[::]:0".parse().unwrap()
        };
        let socket = UdpSocket::bind(bind)?;
        Ok(SnmpClient {
            socket,
            agent,
            community: community.as_bytes().to_vec(),
            options,
            next_request_id: 1,
            discarded: 0,
        })
    }

    pub fn agent(&self) -> SocketAddr {
        self.agent
    }

    /// Responses dropped because their request-id or source did not match.
    pub fn discarded_responses(&self) -> u64 {
        self.discarded
    }

    fn request(&mut self, kind: PduKind, varbinds: Vec<(Oid, Value)>) -> Result<Pdu, SnmpError> {
        let request_id = self.next_request_id;
        self.next_request_id = self.next_request_id.wrapping_add(1).max(1);
        let msg = Message {
            version: VERSION_2C,
            community: self.community.clone(),
            pdu: Pdu { kind, request_id, error_status: 0, error_index: 0, varbinds },
        };
        let bytes = msg.encode();
        let attempts = self.options.retries + 1;
        let mut buf = vec![0u8; 65_535];
        for attempt in 0..attempts {
            trace!(agent = %self.agent, request_id, attempt, "snmp send");
            self.socket.send_to(&bytes, self.agent)?;
            let deadline = Instant::now() + self.options.timeout;
            loop {
                let remaining = deadline.saturating_duration_since(Instant::now());
                if remaining.is_zero() {
                    break;
                }
                self.socket.set_read_timeout(Some(remaining))?;
                let (n, from) = match self.socket.recv_from(&mut buf) {
                    Ok(r) => r,
                    Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => break,
                    // ICMP port unreachable surfaces here on some platforms.
                    Err(e) if e.kind() == ErrorKind::ConnectionRefused => break,
                    Err(e) => return Err(e.into()),
                };
                if from != self.agent {
                    self.discarded += 1;
                    continue;
                }
                let reply = Message::decode(&buf[..n])
                    .map_err(|e| SnmpError::MalformedResponse(e.to_string()))?;
                if reply.pdu.kind != PduKind::Response || reply.pdu.request_id != request_id {
                    self.discarded += 1;
                    continue;
                }
                return Ok(reply.pdu);
            }
        }
        Err(SnmpError::Timeout { agent: self.agent, attempts })
    }

    /// One GetNext exchange. `Ok(None)` means the agent reported the end of
    /// its view.
    pub fn get_next(&mut self, oid: &Oid) -> Result<Option<(Oid, Value)>, SnmpError> {
        let pdu = self.request(PduKind::GetNext, vec![(oid.clone(), Value::Null)])?;
        match pdu.error_status {
            error_status::NO_ERROR => {}
            // v1-style end of view.
            error_status::NO_SUCH_NAME => return Ok(None),
            error_status::AUTHORIZATION_ERROR => return Err(SnmpError::AuthFailure(self.agent)),
            other => {
                return Err(SnmpError::MalformedResponse(format!("agent error-status {other}")))
            }
        }
        let mut varbinds = pdu.varbinds.into_iter();
        let (next, value) = match (varbinds.next(), varbinds.next()) {
            (Some(vb), None) => vb,
            _ => return Err(SnmpError::MalformedResponse("expected exactly one varbind".into())),
        };
        if value == Value::EndOfMibView {
            return Ok(None);
        }
        Ok(Some((next, value)))
    }

    /// Every varbind strictly under `root`, in ascending order.
    pub fn walk(&mut self, root: &Oid) -> Result<Vec<(Oid, Value)>, SnmpError> {
        let mut out: Vec<(Oid, Value)> = Vec::new();
        let mut cursor = root.clone();
        while let Some((oid, value)) = self.get_next(&cursor)? {
            if !oid.is_under(root) {
                break;
            }
            if oid <= cursor {
                return Err(SnmpError::MalformedResponse(format!(
                    "agent returned {oid} after {cursor}; walk would not terminate"
                )));
            }
            if value.is_exception() {
                return Err(SnmpError::MalformedResponse(format!("exception value at {oid}")));
            }
            cursor = oid.clone();
            out.push((oid, value));
        }
        debug!(agent = %self.agent, %root, rows = out.len(), "walk complete");
        Ok(out)
    }
}

/// Walks `root` on `agent` with a fresh session.
pub fn snmp_walk(
    agent: &str,
    community: &str,
    root: &Oid,
    options: SnmpClientOptions,
) -> Result<Vec<(Oid, Value)>, SnmpError> {
    SnmpClient::connect(agent, community, options)?.walk(root)
}

fn resolve_agent(agent: &str) -> Result<SocketAddr, SnmpError> {
    if let Ok(addr) = agent.parse::<SocketAddr>() {
        return Ok(addr);
    }
    if let Ok(ip) = agent.parse::<IpAddr>() {
        return Ok(SocketAddr::new(ip, DEFAULT_SNMP_PORT));
    }
    let resolved = if agent.contains(':') {
        agent.to_socket_addrs()
    } else {
        (agent, DEFAULT_SNMP_PORT).to_socket_addrs()
    };
    resolved
        .ok()
        .and_then(|mut it| it.next())
        .ok_or_else(|| SnmpError::BadEndpoint(agent.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_community_rejected_before_io() {
        assert!(matches!(
            SnmpClient::connect("127.0.0.1:161", "", SnmpClientOptions::default()),
            Err(SnmpError::EmptyCommunity)
        ));
    }

    #[test]
    fn default_port_applied() {
        assert_eq!(resolve_agent("127.0.0.1").unwrap().port(), 161);
        assert_eq!(resolve_agent("127.0.0.1:1161").unwrap().port(), 1161);
    }

    #[test]
    fn silent_agent_times_out() {
        let silent = UdpSocket::bind("127.0.0.1:0").unwrap();
        let addr = silent.local_addr().unwrap().to_string();
        let options = SnmpClientOptions { timeout: Duration::from_millis(30), retries: 1 };
        let mut client = SnmpClient::connect(&addr, "public", options).unwrap();
        let root: Oid = ".1.3.6.1".parse().unwrap();
        match client.walk(&root) {
            Err(SnmpError::Timeout { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("expected timeout, got {other:?}"),
        }
    }
}
