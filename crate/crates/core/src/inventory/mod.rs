//! Fleet inventory: what the orchestrator believes about every device it has
//! seen on the switch, and the status machine those beliefs follow.

mod diff;
pub mod monitor;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::snmp::MacAddress;

pub use diff::{diff_tables, InventoryDiff};
pub use monitor::{
    classify_failures, interrogate_device, poll_once, update_candidates, CandidateUpdate,
    ClassifyOutcome, MonitorConfig, MonitorState, PollResult, PollSkipped, SnmpTableSource,
    TableSource,
};

/// Network-unique logical device address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeviceAddress(u32);

impl DeviceAddress {
    pub fn new(v: u32) -> Option<Self> {
        (v >= 1).then_some(DeviceAddress(v))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for DeviceAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IpConfig {
    pub ip: Ipv4Addr,
    pub dhcp_enabled: bool,
}

/// The identity settings carried over to a replacement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Characteristics {
    pub device_address: DeviceAddress,
    pub ip_config: IpConfig,
}

/// Dotted-integer firmware version with 1 to 4 components. Equality is
/// component-wise, so "1.2" and "1.2.0" differ.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FirmwareVersion(Vec<u32>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid firmware version {0:?}")]
pub struct VersionParseError(pub String);

impl FromStr for FirmwareVersion {
    type Err = VersionParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts = s
            .trim()
            .split('.')
            .map(|p| p.parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| VersionParseError(s.to_string()))?;
        if parts.is_empty() || parts.len() > 4 {
            return Err(VersionParseError(s.to_string()));
        }
        Ok(FirmwareVersion(parts))
    }
}

impl fmt::Display for FirmwareVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|p| p.to_string()).collect();
        f.write_str(&parts.join("."))
    }
}

impl Serialize for FirmwareVersion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FirmwareVersion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub device_type: String,
    pub hardware_params: BTreeMap<String, String>,
    pub firmware_version: FirmwareVersion,
}

impl HardwareProfile {
    pub fn new(
        device_type: impl Into<String>,
        hardware_params: BTreeMap<String, String>,
        firmware_version: FirmwareVersion,
    ) -> Option<Self> {
        let device_type = device_type.into();
        (!device_type.is_empty()).then_some(HardwareProfile { device_type, hardware_params, firmware_version })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeviceStatus {
    Online,
    Unreachable,
    ReportedFailed,
    Healing,
    Retired,
    Candidate,
}

impl DeviceStatus {
    pub const ALL: [DeviceStatus; 6] = [
        DeviceStatus::Online,
        DeviceStatus::Unreachable,
        DeviceStatus::ReportedFailed,
        DeviceStatus::Healing,
        DeviceStatus::Retired,
        DeviceStatus::Candidate,
    ];

    pub fn is_failed(self) -> bool {
        matches!(self, DeviceStatus::Unreachable | DeviceStatus::ReportedFailed)
    }

    pub fn can_transition_to(self, next: DeviceStatus) -> bool {
        use DeviceStatus::*;
        matches!(
            (self, next),
            (Online, Unreachable)
                | (Online, ReportedFailed)
                | (Unreachable, Online)
                | (ReportedFailed, Online)
                | (Unreachable, Retired)
                | (ReportedFailed, Retired)
                | (Candidate, Online)
                // a candidate is held while a job works on it
                | (Candidate, Healing)
                | (Healing, Online)
                | (Healing, Candidate)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceStatus::Online => "online",
            DeviceStatus::Unreachable => "unreachable",
            DeviceStatus::ReportedFailed => "reported_failed",
            DeviceStatus::Healing => "healing",
            DeviceStatus::Retired => "retired",
            DeviceStatus::Candidate => "candidate",
        }
    }
}

impl fmt::Display for DeviceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub mac: MacAddress,
    /// Assigned logical identity. Candidates have none until adopted.
    pub device_address: Option<DeviceAddress>,
    pub ip_config: Option<IpConfig>,
    /// Unknown until the device answers an interrogation.
    pub profile: Option<HardwareProfile>,
    /// Last bridge port the device was seen on.
    pub port: Option<u32>,
    status: DeviceStatus,
    pub last_seen_generation: u64,
    pub discovered_at_generation: u64,
    pub discovered_at: Timestamp,
    /// Consecutive polls the device was missing from the switch table.
    pub missed_polls: u32,
    /// Configuration revision the latest snapshot was taken at.
    pub snapshot_revision: Option<u64>,
}

impl DeviceRecord {
    pub fn discovered(mac: MacAddress, port: u32, status: DeviceStatus, generation: u64, at: Timestamp) -> Self {
        assert!(
            matches!(status, DeviceStatus::Online | DeviceStatus::Candidate),
            "new records start online or as candidates"
        );
        DeviceRecord {
            mac,
            device_address: None,
            ip_config: None,
            profile: None,
            port: Some(port),
            status,
            last_seen_generation: generation,
            discovered_at_generation: generation,
            discovered_at: at,
            missed_polls: 0,
            snapshot_revision: None,
        }
    }

    pub fn status(&self) -> DeviceStatus {
        self.status
    }

    pub fn characteristics(&self) -> Option<Characteristics> {
        Some(Characteristics { device_address: self.device_address?, ip_config: self.ip_config? })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureCause {
    LinkLoss,
    Reported,
}

impl FailureCause {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureCause::LinkLoss => "link_loss",
            FailureCause::Reported => "reported",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub mac: MacAddress,
    pub cause: FailureCause,
    pub detected_at_generation: u64,
    pub detected_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InventoryError {
    #[error("no record for {0}")]
    UnknownMac(MacAddress),
    #[error("device address {address} held by both {first} and {second}")]
    DuplicateAddress { address: DeviceAddress, first: MacAddress, second: MacAddress },
    #[error("{mac}: discovered at generation {discovered} after last seen {last_seen}")]
    GenerationOrder { mac: MacAddress, discovered: u64, last_seen: u64 },
    #[error("{0} is online without a bound port")]
    OnlineUnbound(MacAddress),
    #[error("open failure for {0} whose record is not failed")]
    DanglingFailure(MacAddress),
}

/// Device records plus open failures. Mutated by a single writer (the
/// control loop); status changes go through [`Inventory::set_status`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    records: BTreeMap<MacAddress, DeviceRecord>,
    failures: BTreeMap<MacAddress, FailureEvent>,
}

impl Inventory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, mac: &MacAddress) -> Option<&DeviceRecord> {
        self.records.get(mac)
    }

    pub fn get_mut(&mut self, mac: &MacAddress) -> Option<&mut DeviceRecord> {
        self.records.get_mut(mac)
    }

    pub fn records(&self) -> impl Iterator<Item = &DeviceRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, record: DeviceRecord) {
        self.records.insert(record.mac, record);
    }

    /// Drops a record outright. Only used for candidates that left the
    /// switch and for retired MACs that reappear as fresh hardware.
    pub fn forget(&mut self, mac: &MacAddress) -> Option<DeviceRecord> {
        self.failures.remove(mac);
        self.records.remove(mac)
    }

    /// Moves a record to `next`. Panics on an illegal transition: that is a
    /// defect in the caller, not a runtime condition.
    pub fn set_status(&mut self, mac: &MacAddress, next: DeviceStatus) {
        let record = self.records.get_mut(mac).unwrap_or_else(|| panic!("no record for {mac}"));
        assert!(
            record.status.can_transition_to(next),
            "illegal status transition {} -> {} for {mac}",
            record.status,
            next
        );
        record.status = next;
    }

    pub fn open_failure(&mut self, event: FailureEvent) {
        self.failures.entry(event.mac).or_insert(event);
    }

    pub fn close_failure(&mut self, mac: &MacAddress) -> Option<FailureEvent> {
        self.failures.remove(mac)
    }

    pub fn failure(&self, mac: &MacAddress) -> Option<&FailureEvent> {
        self.failures.get(mac)
    }

    /// Open failures ordered by detection generation, then MAC.
    pub fn open_failures(&self) -> Vec<&FailureEvent> {
        let mut v: Vec<&FailureEvent> = self.failures.values().collect();
        v.sort_by_key(|f| (f.detected_at_generation, f.mac));
        v
    }

    pub fn with_status(&self, status: DeviceStatus) -> impl Iterator<Item = &DeviceRecord> {
        self.records.values().filter(move |r| r.status == status)
    }

    /// A non-retired record other than those in `except` holding `address`.
    pub fn address_holder(&self, address: DeviceAddress, except: &[MacAddress]) -> Option<&DeviceRecord> {
        self.records.values().find(|r| {
            r.status != DeviceStatus::Retired && r.device_address == Some(address) && !except.contains(&r.mac)
        })
    }

    pub fn counts_by_status(&self) -> BTreeMap<DeviceStatus, usize> {
        let mut counts: BTreeMap<DeviceStatus, usize> = DeviceStatus::ALL.iter().map(|s| (*s, 0)).collect();
        for r in self.records.values() {
            *counts.entry(r.status).or_default() += 1;
        }
        counts
    }

    /// Checks the record-level invariants that must hold between mutations.
    pub fn check_invariants(&self) -> Result<(), InventoryError> {
        let mut holders: BTreeMap<DeviceAddress, MacAddress> = BTreeMap::new();
        for r in self.records.values() {
            if r.discovered_at_generation > r.last_seen_generation {
                return Err(InventoryError::GenerationOrder {
                    mac: r.mac,
                    discovered: r.discovered_at_generation,
                    last_seen: r.last_seen_generation,
                });
            }
            if r.status == DeviceStatus::Online && r.port.is_none() {
                return Err(InventoryError::OnlineUnbound(r.mac));
            }
            if r.status == DeviceStatus::Retired {
                continue;
            }
            if let Some(address) = r.device_address {
                if let Some(first) = holders.insert(address, r.mac) {
                    return Err(InventoryError::DuplicateAddress { address, first, second: r.mac });
                }
            }
        }
        let failed: BTreeSet<MacAddress> =
            self.records.values().filter(|r| r.status.is_failed()).map(|r| r.mac).collect();
        if let Some(mac) = self.failures.keys().find(|m| !failed.contains(m)) {
            return Err(InventoryError::DanglingFailure(*mac));
        }
        Ok(())
    }
}
