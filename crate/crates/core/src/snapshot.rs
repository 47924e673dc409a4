//! On-disk store of each device's last working point.
//!
//! Layout under the store root:
//!
//! ```text
//! <root>/<mac with dashes>/<generation, 20 digits>[.<n>]/manifest
//! <root>/<mac with dashes>/<generation, 20 digits>[.<n>]/files/<index>.bin
//! ```
//!
//! A snapshot is assembled in a `.tmp-*` sibling directory and renamed into
//! place, so a reader sees either the whole snapshot or nothing. The
//! manifest is a line-oriented `key=value` file whose last line checksums
//! every line before it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::Write;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::digest::{config_set_digest, Digest64, DIGEST_ALGORITHM};
use crate::inventory::{Characteristics, DeviceAddress, FirmwareVersion, HardwareProfile, IpConfig};
use crate::snmp::MacAddress;

pub const DEFAULT_HISTORY_DEPTH: usize = 5;
const MANIFEST: &str = "manifest";
const FILES: &str = "files";
const MAGIC: &str = "fleetheal-snapshot 1";
const TMP_PREFIX: &str = ".tmp-";
const TRASH_PREFIX: &str = ".trash-";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigFile {
    pub name: String,
    pub bytes: Vec<u8>,
    pub checksum: Digest64,
}

impl ConfigFile {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        let checksum = Digest64::of(&bytes);
        ConfigFile { name: name.into(), bytes, checksum }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub mac: MacAddress,
    pub device_address: DeviceAddress,
    pub ip_config: IpConfig,
    pub device_type: String,
    pub hardware_params: BTreeMap<String, String>,
    pub firmware_version: FirmwareVersion,
    pub config_files: Vec<ConfigFile>,
    pub taken_at_generation: u64,
}

impl ConfigSnapshot {
    pub fn new(
        mac: MacAddress,
        characteristics: Characteristics,
        profile: HardwareProfile,
        config_files: Vec<ConfigFile>,
        taken_at_generation: u64,
    ) -> Result<Self, SnapshotError> {
        let mut names = BTreeSet::new();
        for f in &config_files {
            if !names.insert(f.name.as_str()) {
                return Err(SnapshotError::DuplicateFile(f.name.clone()));
            }
            if f.name.is_empty() || f.name.contains('/') {
                return Err(SnapshotError::BadFileName(f.name.clone()));
            }
        }
        Ok(ConfigSnapshot {
            mac,
            device_address: characteristics.device_address,
            ip_config: characteristics.ip_config,
            device_type: profile.device_type,
            hardware_params: profile.hardware_params,
            firmware_version: profile.firmware_version,
            config_files,
            taken_at_generation,
        })
    }

    pub fn characteristics(&self) -> Characteristics {
        Characteristics { device_address: self.device_address, ip_config: self.ip_config }
    }

    /// Digest of the whole configuration set, comparable with a device's
    /// reported active-config digest.
    pub fn config_digest(&self) -> Digest64 {
        config_set_digest(self.config_files.iter().map(|f| (f.name.as_str(), f.bytes.as_slice())))
    }

    pub fn file_names(&self) -> Vec<String> {
        self.config_files.iter().map(|f| f.name.clone()).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("no snapshot for {0}")]
    NotFound(MacAddress),
    #[error("every stored snapshot for {mac} is corrupt")]
    Corrupt { mac: MacAddress, diagnostics: Vec<String> },
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("duplicate configuration file name {0:?}")]
    DuplicateFile(String),
    #[error("invalid configuration file name {0:?}")]
    BadFileName(String),
}

impl From<std::io::Error> for SnapshotError {
    fn from(e: std::io::Error) -> Self {
        SnapshotError::Storage(e.to_string())
    }
}

/// A successfully loaded snapshot plus notes about newer ones that were
/// skipped because they failed verification.
#[derive(Debug, Clone)]
pub struct LoadedSnapshot {
    pub snapshot: ConfigSnapshot,
    pub skipped: Vec<String>,
}

const NEVER: u64 = u64::MAX;

#[derive(Debug)]
pub struct SnapshotStore {
    root: PathBuf,
    history_depth: usize,
    checkpoints: AtomicU64,
    fail_at: AtomicU64,
}

impl SnapshotStore {
    pub fn open(root: impl Into<PathBuf>, history_depth: usize) -> Result<Self, SnapshotError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(SnapshotStore {
            root,
            history_depth: history_depth.max(1),
            checkpoints: AtomicU64::new(0),
            fail_at: AtomicU64::new(NEVER),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn history_depth(&self) -> usize {
        self.history_depth
    }

    /// Makes the write step with index `step` (counted from the next save)
    /// fail as if the process died there. A data write interrupted this way
    /// leaves a truncated file behind.
    pub fn interrupt_at(&self, step: u64) {
        self.checkpoints.store(0, Ordering::SeqCst);
        self.fail_at.store(step, Ordering::SeqCst);
    }

    pub fn clear_interrupt(&self) {
        self.fail_at.store(NEVER, Ordering::SeqCst);
    }

    /// Write steps taken since the last `interrupt_at` or `reset_checkpoints`.
    pub fn checkpoints(&self) -> u64 {
        self.checkpoints.load(Ordering::SeqCst)
    }

    pub fn reset_checkpoints(&self) {
        self.checkpoints.store(0, Ordering::SeqCst);
    }

    fn checkpoint(&self) -> bool {
        let n = self.checkpoints.fetch_add(1, Ordering::SeqCst);
        if n == self.fail_at.load(Ordering::SeqCst) {
            self.fail_at.store(NEVER, Ordering::SeqCst);
            return false;
        }
        true
    }

    fn interrupted() -> SnapshotError {
        SnapshotError::Storage("write interrupted".into())
    }

    fn step<T>(&self, op: impl FnOnce() -> std::io::Result<T>) -> Result<T, SnapshotError> {
        if !self.checkpoint() {
            return Err(Self::interrupted());
        }
        Ok(op()?)
    }

    fn write_file(&self, path: &Path, bytes: &[u8]) -> Result<(), SnapshotError> {
        let mut f = File::create(path)?;
        if !self.checkpoint() {
            let _ = f.write_all(&bytes[..bytes.len() / 2]);
            return Err(Self::interrupted());
        }
        f.write_all(bytes)?;
        f.sync_all()?;
        Ok(())
    }

    fn device_dir(&self, mac: &MacAddress) -> PathBuf {
        self.root.join(mac.to_path_component())
    }

    /// Stored snapshot directories for `mac`, newest first.
    fn entries(&self, mac: &MacAddress) -> Result<Vec<(u64, u32, PathBuf)>, SnapshotError> {
        let dir = self.device_dir(mac);
        let read = match fs::read_dir(&dir) {
            Ok(r) => r,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for entry in read {
            let entry = entry?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some((generation, seq)) = parse_entry_name(name) {
                out.push((generation, seq, entry.path()));
            }
        }
        out.sort_by_key(|e| std::cmp::Reverse((e.0, e.1)));
        Ok(out)
    }

    /// Generations of the snapshots currently stored for `mac`, newest first.
    pub fn generations(&self, mac: &MacAddress) -> Result<Vec<u64>, SnapshotError> {
        Ok(self.entries(mac)?.into_iter().map(|(g, _, _)| g).collect())
    }

    pub fn save(&self, snapshot: &ConfigSnapshot) -> Result<(), SnapshotError> {
        let dir = self.device_dir(&snapshot.mac);
        fs::create_dir_all(&dir)?;
        self.sweep_leftovers(&dir);

        let existing = self.entries(&snapshot.mac)?;
        let seq = existing
            .iter()
            .filter(|(g, _, _)| *g == snapshot.taken_at_generation)
            .map(|(_, s, _)| s + 1)
            .max()
            .unwrap_or(0);
        let final_name = entry_name(snapshot.taken_at_generation, seq);
        let tmp = dir.join(format!("{TMP_PREFIX}{final_name}-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }

        self.step(|| fs::create_dir_all(tmp.join(FILES)))?;
        for (i, file) in snapshot.config_files.iter().enumerate() {
            self.write_file(&tmp.join(FILES).join(format!("{i}.bin")), &file.bytes)?;
        }
        self.write_file(&tmp.join(MANIFEST), render_manifest(snapshot).as_bytes())?;
        self.step(|| fs::rename(&tmp, dir.join(&final_name)))?;
        self.step(|| File::open(&dir)?.sync_all())?;
        debug!(mac = %snapshot.mac, generation = snapshot.taken_at_generation, "snapshot saved");

        // Prune past the history depth. Each victim is renamed aside first
        // so a half-deleted snapshot is never mistaken for a stored one.
        for (generation, seq, path) in existing.into_iter().skip(self.history_depth.saturating_sub(1)) {
            let trash = dir.join(format!("{TRASH_PREFIX}{}", entry_name(generation, seq)));
            self.step(|| fs::rename(&path, &trash))?;
            self.step(|| fs::remove_dir_all(&trash))?;
        }
        Ok(())
    }

    fn sweep_leftovers(&self, dir: &Path) {
        let Ok(read) = fs::read_dir(dir) else { return };
        for entry in read.flatten() {
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with(TMP_PREFIX) || name.starts_with(TRASH_PREFIX) {
                let _ = fs::remove_dir_all(entry.path());
            }
        }
    }

    /// The newest snapshot that passes verification.
    pub fn load_latest(&self, mac: &MacAddress) -> Result<LoadedSnapshot, SnapshotError> {
        let entries = self.entries(mac)?;
        if entries.is_empty() {
            return Err(SnapshotError::NotFound(*mac));
        }
        let mut skipped = Vec::new();
        for (generation, _, path) in entries {
            match read_snapshot(&path) {
                Ok(snapshot) if snapshot.mac == *mac => {
                    for note in &skipped {
                        warn!(%mac, "{note}");
                    }
                    return Ok(LoadedSnapshot { snapshot, skipped });
                }
                Ok(_) => skipped.push(format!("snapshot {generation}: manifest names another device")),
                Err(reason) => skipped.push(format!("snapshot {generation}: {reason}")),
            }
        }
        warn!(%mac, count = skipped.len(), "no valid snapshot");
        Err(SnapshotError::Corrupt { mac: *mac, diagnostics: skipped })
    }
}

fn entry_name(generation: u64, seq: u32) -> String {
    if seq == 0 {
        format!("{generation:020}")
    } else {
        format!("{generation:020}.{seq}")
    }
}

fn parse_entry_name(name: &str) -> Option<(u64, u32)> {
    let (gen, seq) = match name.split_once('.') {
        Some((g, s)) => (g, s.parse().ok()?),
        None => (name, 0),
    };
    if gen.len() != 20 || !gen.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((gen.parse().ok()?, seq))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '=' => out.push_str("\\e"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next() {
            Some('\\') => '\\',
            Some('n') => '\n',
            Some('r') => '\r',
            Some('t') => '\t',
            Some('e') => '=',
            other => return Err(format!("bad escape {other:?}")),
        });
    }
    Ok(out)
}

/// Renders the manifest text, including its trailing checksum line.
pub fn render_manifest(s: &ConfigSnapshot) -> String {
    let mut body = String::new();
    let mut line = |k: &str, v: &str| {
        body.push_str(&escape(k));
        body.push('=');
        body.push_str(&escape(v));
        body.push('\n');
    };
    line("format", MAGIC);
    line("mac", &s.mac.to_string());
    line("device_address", &s.device_address.to_string());
    line("ip", &s.ip_config.ip.to_string());
    line("dhcp_enabled", &s.ip_config.dhcp_enabled.to_string());
    line("device_type", &s.device_type);
    for (k, v) in &s.hardware_params {
        line(&format!("hw.{k}"), v);
    }
    line("firmware_version", &s.firmware_version.to_string());
    line("taken_at_generation", &s.taken_at_generation.to_string());
    line("digest_algorithm", DIGEST_ALGORITHM);
    line("file_count", &s.config_files.len().to_string());
    for (i, f) in s.config_files.iter().enumerate() {
        line(&format!("file.{i}.name"), &f.name);
        line(&format!("file.{i}.size"), &f.bytes.len().to_string());
        line(&format!("file.{i}.checksum"), &f.checksum.to_string());
    }
    let checksum = Digest64::of(body.as_bytes());
    body.push_str(&format!("manifest_checksum={checksum}\n"));
    body
}

struct ManifestFile {
    name: String,
    size: u64,
    checksum: Digest64,
}

/// Parses and verifies a manifest. File contents are attached by the caller.
fn parse_manifest(text: &str) -> Result<(ConfigSnapshot, Vec<ManifestFile>), String> {
    let body_end = text.rfind("manifest_checksum=").ok_or("missing manifest checksum")?;
    let (body, tail) = text.split_at(body_end);
    let declared: Digest64 = tail
        .trim_end_matches('\n')
        .strip_prefix("manifest_checksum=")
        .and_then(|h| h.parse().ok())
        .ok_or("unreadable manifest checksum")?;
    if !text.ends_with('\n') || Digest64::of(body.as_bytes()) != declared {
        return Err("manifest checksum mismatch".into());
    }

    let mut fields = BTreeMap::new();
    let mut hardware_params = BTreeMap::new();
    for raw in body.lines() {
        let (k, v) = raw.split_once('=').ok_or_else(|| format!("malformed line {raw:?}"))?;
        let (k, v) = (unescape(k)?, unescape(v)?);
        if let Some(param) = k.strip_prefix("hw.") {
            hardware_params.insert(param.to_string(), v);
        } else if fields.insert(k.clone(), v).is_some() {
            return Err(format!("duplicate key {k}"));
        }
    }
    let get = |k: &str| fields.get(k).map(String::as_str).ok_or_else(|| format!("missing key {k}"));
    if get("format")? != MAGIC {
        return Err("unknown manifest format".into());
    }
    if get("digest_algorithm")? != DIGEST_ALGORITHM {
        return Err(format!("unsupported digest {}", get("digest_algorithm")?));
    }
    let bad = |k: &str| format!("bad value for {k}");
    let mac: MacAddress = get("mac")?.parse().map_err(|_| bad("mac"))?;
    let device_address = get("device_address")?
        .parse()
        .ok()
        .and_then(DeviceAddress::new)
        .ok_or_else(|| bad("device_address"))?;
    let ip: Ipv4Addr = get("ip")?.parse().map_err(|_| bad("ip"))?;
    let dhcp_enabled: bool = get("dhcp_enabled")?.parse().map_err(|_| bad("dhcp_enabled"))?;
    let firmware_version = get("firmware_version")?.parse().map_err(|_| bad("firmware_version"))?;
    let taken_at_generation = get("taken_at_generation")?.parse().map_err(|_| bad("taken_at_generation"))?;
    let count: usize = get("file_count")?.parse().map_err(|_| bad("file_count"))?;
    let mut files = Vec::with_capacity(count);
    for i in 0..count {
        files.push(ManifestFile {
            name: get(&format!("file.{i}.name"))?.to_string(),
            size: get(&format!("file.{i}.size"))?.parse().map_err(|_| bad("size"))?,
            checksum: get(&format!("file.{i}.checksum"))?.parse().map_err(|_| bad("checksum"))?,
        });
    }
    let snapshot = ConfigSnapshot {
        mac,
        device_address,
        ip_config: IpConfig { ip, dhcp_enabled },
        device_type: get("device_type")?.to_string(),
        hardware_params,
        firmware_version,
        config_files: Vec::new(),
        taken_at_generation,
    };
    Ok((snapshot, files))
}

fn read_snapshot(dir: &Path) -> Result<ConfigSnapshot, String> {
    let text = fs::read_to_string(dir.join(MANIFEST)).map_err(|e| format!("manifest unreadable: {e}"))?;
    let (mut snapshot, files) = parse_manifest(&text)?;
    let mut names = BTreeSet::new();
    for (i, f) in files.into_iter().enumerate() {
        if !names.insert(f.name.clone()) {
            return Err(format!("duplicate file {}", f.name));
        }
        let bytes = fs::read(dir.join(FILES).join(format!("{i}.bin"))).map_err(|e| format!("file {}: {e}", f.name))?;
        if bytes.len() as u64 != f.size || Digest64::of(&bytes) != f.checksum {
            return Err(format!("file {} fails its checksum", f.name));
        }
        snapshot.config_files.push(ConfigFile { name: f.name, bytes, checksum: f.checksum });
    }
    Ok(snapshot)
}
