//! Minimal FTP client: anonymous login, binary type, passive mode, STOR and
//! RETR. After a STOR the client asks for the stored file's digest with the
//! `HASH` extension command and falls back to reading the file back when
//! the server does not implement it.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, TcpStream};
use std::time::Duration;

use tracing::debug;

use crate::digest::Digest64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferReceipt {
    pub remote_path: String,
    pub byte_count: u64,
    /// Digest of the bytes as stored on the remote side.
    pub digest: Digest64,
}

#[derive(Debug, thiserror::Error)]
pub enum FtpError {
    #[error("cannot connect to {endpoint}: {detail}")]
    ConnectFailure { endpoint: SocketAddr, detail: String },
    #[error("transfer aborted: {0}")]
    TransferAborted(String),
    #[error("server replied {code}: {message}")]
    ServerError { code: u16, message: String },
    #[error("ftp protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone)]
pub struct FtpClient {
    pub connect_timeout: Duration,
    pub io_timeout: Duration,
}

impl Default for FtpClient {
    fn default() -> Self {
        FtpClient { connect_timeout: Duration::from_secs(5), io_timeout: Duration::from_secs(10) }
    }
}

struct Reply {
    code: u16,
    text: String,
}

struct Session {
    endpoint: SocketAddr,
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    client: FtpClient,
}

impl FtpClient {
    pub fn new(connect_timeout: Duration, io_timeout: Duration) -> Self {
        FtpClient { connect_timeout, io_timeout }
    }

    /// Stores `bytes` at `remote_path` in binary mode.
    pub fn put(&self, endpoint: SocketAddr, remote_path: &str, bytes: &[u8]) -> Result<TransferReceipt, FtpError> {
        let mut session = Session::open(endpoint, self.clone())?;
        session.command(&format!("ALLO {}", bytes.len()))?;
        let mut data = session.passive()?;
        let reply = session.command(&format!("STOR {remote_path}"))?;
        if !matches!(reply.code, 125 | 150) {
            return Err(server_error(reply));
        }
        let write_result = data.write_all(bytes).and_then(|_| data.flush());
        let _ = data.shutdown(std::net::Shutdown::Write);
        drop(data);
        let done = session.read_reply().map_err(|e| match write_result.as_ref() {
            Err(w) => FtpError::TransferAborted(format!("{w}; {e}")),
            Ok(()) => e,
        })?;
        match (done.code, write_result) {
            (226 | 250, Ok(())) => {}
            (226 | 250, Err(e)) => return Err(FtpError::TransferAborted(e.to_string())),
            (421 | 425 | 426 | 451, _) => return Err(FtpError::TransferAborted(done.text)),
            _ => return Err(server_error(done)),
        }

        let digest = match session.remote_hash(remote_path)? {
            Some(d) => d,
            None => Digest64::of(&session.retrieve(remote_path)?),
        };
        session.quit();
        debug!(%endpoint, remote_path, bytes = bytes.len(), %digest, "stored");
        Ok(TransferReceipt { remote_path: remote_path.to_string(), byte_count: bytes.len() as u64, digest })
    }

    /// Fetches `remote_path` in binary mode.
    pub fn get(&self, endpoint: SocketAddr, remote_path: &str) -> Result<Vec<u8>, FtpError> {
        let mut session = Session::open(endpoint, self.clone())?;
        let bytes = session.retrieve(remote_path)?;
        session.quit();
        Ok(bytes)
    }
}

fn server_error(reply: Reply) -> FtpError {
    FtpError::ServerError { code: reply.code, message: reply.text }
}

fn io_to_protocol(e: io::Error) -> FtpError {
    FtpError::Protocol(e.to_string())
}

impl Session {
    fn open(endpoint: SocketAddr, client: FtpClient) -> Result<Self, FtpError> {
        let connect_err = |e: io::Error| FtpError::ConnectFailure { endpoint, detail: e.to_string() };
        let stream = TcpStream::connect_timeout(&endpoint, client.connect_timeout).map_err(connect_err)?;
        stream.set_read_timeout(Some(client.io_timeout)).map_err(connect_err)?;
        stream.set_write_timeout(Some(client.io_timeout)).map_err(connect_err)?;
        let writer = stream.try_clone().map_err(connect_err)?;
        let mut session = Session { endpoint, reader: BufReader::new(stream), writer, client };
        let greeting = session.read_reply().map_err(|e| FtpError::ConnectFailure {
            endpoint,
            detail: e.to_string(),
        })?;
        if greeting.code != 220 {
            return Err(server_error(greeting));
        }
        let user = session.command("USER anonymous")?;
        match user.code {
            230 => {}
            331 => {
                let pass = session.command("PASS fleetheal@")?;
                if pass.code != 230 {
                    return Err(server_error(pass));
                }
            }
            _ => return Err(server_error(user)),
        }
        let ty = session.command("TYPE I")?;
        if ty.code != 200 {
            return Err(server_error(ty));
        }
        Ok(session)
    }

    fn read_reply(&mut self) -> Result<Reply, FtpError> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).map_err(io_to_protocol)?;
        if n == 0 {
            return Err(FtpError::TransferAborted("control connection closed".into()));
        }
        let parse_code = |l: &str| l.get(..3).and_then(|c| c.parse::<u16>().ok());
        let code = parse_code(&line).ok_or_else(|| FtpError::Protocol(format!("bad reply {line:?}")))?;
        let mut text = line[3..].trim_start_matches([' ', '-']).trim_end().to_string();
        // Multi-line replies: "123-first" ... "123 last".
        if line.as_bytes().get(3) == Some(&b'-') {
            loop {
                let mut more = String::new();
                if self.reader.read_line(&mut more).map_err(io_to_protocol)? == 0 {
                    return Err(FtpError::Protocol("truncated multi-line reply".into()));
                }
                let last = parse_code(&more) == Some(code) && more.as_bytes().get(3) == Some(&b' ');
                text.push('\n');
                text.push_str(more.trim_end());
                if last {
                    break;
                }
            }
        }
        Ok(Reply { code, text })
    }

    fn command(&mut self, cmd: &str) -> Result<Reply, FtpError> {
        self.writer.write_all(format!("{cmd}\r\n").as_bytes()).map_err(io_to_protocol)?;
        let reply = self.read_reply()?;
        if reply.code == 421 {
            return Err(FtpError::TransferAborted(reply.text));
        }
        Ok(reply)
    }

    fn passive(&mut self) -> Result<TcpStream, FtpError> {
        let reply = self.command("PASV")?;
        if reply.code != 227 {
            return Err(server_error(reply));
        }
        let addr = parse_pasv(&reply.text).ok_or_else(|| FtpError::Protocol(format!("bad PASV reply {:?}", reply.text)))?;
        // Some servers report an unroutable address; the control peer is
        // what we can actually reach.
        let addr = if addr.ip().is_unspecified() {
            SocketAddr::new(self.endpoint.ip(), addr.port())
        } else {
            SocketAddr::V4(addr)
        };
        let data = TcpStream::connect_timeout(&addr, self.client.connect_timeout)
            .map_err(|e| FtpError::ConnectFailure { endpoint: addr, detail: e.to_string() })?;
        data.set_read_timeout(Some(self.client.io_timeout)).map_err(io_to_protocol)?;
        data.set_write_timeout(Some(self.client.io_timeout)).map_err(io_to_protocol)?;
        Ok(data)
    }

    fn retrieve(&mut self, remote_path: &str) -> Result<Vec<u8>, FtpError> {
        let mut data = self.passive()?;
        let reply = self.command(&format!("RETR {remote_path}"))?;
        if !matches!(reply.code, 125 | 150) {
            return Err(server_error(reply));
        }
        let mut bytes = Vec::new();
        let read_result = data.read_to_end(&mut bytes);
        drop(data);
        let done = self.read_reply()?;
        match (done.code, read_result) {
            (226 | 250, Ok(_)) => Ok(bytes),
            (226 | 250, Err(e)) => Err(FtpError::TransferAborted(e.to_string())),
            (425 | 426 | 451, _) => Err(FtpError::TransferAborted(done.text)),
            _ => Err(server_error(done)),
        }
    }

    /// `Ok(None)` when the server does not implement HASH.
    fn remote_hash(&mut self, remote_path: &str) -> Result<Option<Digest64>, FtpError> {
        let reply = self.command(&format!("HASH {remote_path}"))?;
        match reply.code {
            213 => parse_hash_reply(&reply.text)
                .map(Some)
                .ok_or_else(|| FtpError::Protocol(format!("bad HASH reply {:?}", reply.text))),
            500 | 501 | 502 | 504 => Ok(None),
            _ => Err(server_error(reply)),
        }
    }

    fn quit(mut self) {
        let _ = self.command("QUIT");
    }
}

/// Parses "Entering Passive Mode (h1,h2,h3,h4,p1,p2)".
pub fn parse_pasv(text: &str) -> Option<SocketAddrV4> {
    let start = text.find('(')?;
    let end = text[start..].find(')')? + start;
    let nums = text[start + 1..end]
        .split(',')
        .map(|n| n.trim().parse::<u8>())
        .collect::<Result<Vec<_>, _>>()
        .ok()?;
    if nums.len() != 6 {
        return None;
    }
    let ip = Ipv4Addr::new(nums[0], nums[1], nums[2], nums[3]);
    Some(SocketAddrV4::new(ip, u16::from(nums[4]) << 8 | u16::from(nums[5])))
}

/// Parses "SHA-256 0-<n> <hex> <path>" and truncates to the project digest.
fn parse_hash_reply(text: &str) -> Option<Digest64> {
    let mut fields = text.split_whitespace();
    if !fields.next()?.eq_ignore_ascii_case("SHA-256") {
        return None;
    }
    let _range = fields.next()?;
    let hex = fields.next()?;
    if hex.len() != 64 {
        return None;
    }
    u64::from_str_radix(&hex[..16], 16).ok().map(Digest64)
}
