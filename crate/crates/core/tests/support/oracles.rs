//! Slow, obviously-correct reference implementations the real code is
//! checked against.

use std::collections::{BTreeMap, BTreeSet};

use fleetheal::healing::{MatchPolicy, RejectReason};
use fleetheal::inventory::DeviceRecord;
use fleetheal::snapshot::ConfigSnapshot;
use fleetheal::snmp::{InterfaceTable, MacAddress, MacTable, PortNumberTable, SwitchLookupTable};

/// What a join should produce: (port, interface name, mac) triples plus the
/// three drop counters.
#[derive(Debug, PartialEq, Eq)]
pub struct JoinOracle {
    pub triples: BTreeSet<(u32, String, MacAddress)>,
    pub mac_without_port: usize,
    pub port_without_interface: usize,
    pub port_without_mac: usize,
}

/// Nested-loop join over the raw entry lists. `None` when some MAC would
/// land on two different ports.
pub fn join(mac: &MacTable, portnum: &PortNumberTable, iface: &InterfaceTable) -> Option<JoinOracle> {
    let mut out = JoinOracle {
        triples: BTreeSet::new(),
        mac_without_port: 0,
        port_without_interface: 0,
        port_without_mac: 0,
    };
    for (mac_index, address) in &mac.entries {
        let mut had_port = false;
        for (port_index, port) in &portnum.entries {
            if port_index != mac_index {
                continue;
            }
            had_port = true;
            let mut had_iface = false;
            for (iface_port, name) in &iface.entries {
                if iface_port == port {
                    had_iface = true;
                    out.triples.insert((*port, name.clone(), *address));
                }
            }
            if !had_iface {
                out.port_without_interface += 1;
            }
        }
        if !had_port {
            out.mac_without_port += 1;
        }
    }
    for (port_index, _) in &portnum.entries {
        if !mac.entries.iter().any(|(i, _)| i == port_index) {
            out.port_without_mac += 1;
        }
    }
    for (p1, _, m1) in &out.triples {
        for (p2, _, m2) in &out.triples {
            if m1 == m2 && p1 != p2 {
                return None;
            }
        }
    }
    Some(out)
}

pub fn triples(table: &SwitchLookupTable) -> BTreeSet<(u32, String, MacAddress)> {
    let mut out = BTreeSet::new();
    for (port, entry) in &table.ports {
        for mac in &entry.macs {
            out.insert((*port, entry.if_name.clone(), *mac));
        }
    }
    out
}

/// Pairs present in `next` but not `prev`, and the reverse, by scanning.
pub fn pair_difference(
    prev: &SwitchLookupTable,
    next: &SwitchLookupTable,
) -> (BTreeSet<(u32, MacAddress)>, BTreeSet<(u32, MacAddress)>) {
    let flat = |t: &SwitchLookupTable| -> Vec<(u32, MacAddress)> {
        t.ports.iter().flat_map(|(p, e)| e.macs.iter().map(move |m| (*p, *m))).collect()
    };
    let (a, b) = (flat(prev), flat(next));
    let added = b.iter().filter(|x| !a.contains(x)).copied().collect();
    let removed = a.iter().filter(|x| !b.contains(x)).copied().collect();
    (added, removed)
}

/// Every rule a candidate breaks, checked one by one.
pub fn broken_rules(
    failed: &DeviceRecord,
    failure_generation: u64,
    candidate: &DeviceRecord,
    snapshot: &ConfigSnapshot,
    busy: &BTreeSet<MacAddress>,
    policy: &MatchPolicy,
) -> Vec<RejectReason> {
    let mut broken = Vec::new();
    if busy.contains(&candidate.mac) {
        broken.push(RejectReason::Busy);
    }
    if candidate.discovered_at_generation <= failure_generation {
        broken.push(RejectReason::PredatesFailure);
    }
    let same_port = failed.port.is_some() && failed.port == candidate.port;
    if !policy.allow_cross_port && !same_port {
        broken.push(RejectReason::WrongPort);
    }
    match &candidate.profile {
        None => broken.push(RejectReason::ProfileUnknown),
        Some(profile) => {
            if profile.device_type != snapshot.device_type {
                broken.push(RejectReason::TypeMismatch);
            }
            let keys: Vec<String> = match &policy.required_params {
                Some(keys) => keys.iter().cloned().collect(),
                None => snapshot.hardware_params.keys().cloned().collect(),
            };
            let mut mismatch = false;
            for k in keys {
                if profile.hardware_params.get(&k) != snapshot.hardware_params.get(&k) {
                    mismatch = true;
                }
            }
            if mismatch {
                broken.push(RejectReason::HardwareParamMismatch);
            }
        }
    }
    broken
}

pub struct RuleVerdict {
    pub chosen: Option<MacAddress>,
    pub rejected: BTreeMap<MacAddress, RejectReason>,
}

/// Brute-force selection: evaluate every rule on every candidate, keep the
/// clean ones, then take the earliest-discovered, lowest-MAC one.
pub fn select(
    failed: &DeviceRecord,
    failure_generation: u64,
    candidates: &[DeviceRecord],
    snapshot: &ConfigSnapshot,
    busy: &BTreeSet<MacAddress>,
    policy: &MatchPolicy,
) -> RuleVerdict {
    let mut rejected = BTreeMap::new();
    let mut clean = Vec::new();
    for c in candidates {
        let broken = broken_rules(failed, failure_generation, c, snapshot, busy, policy);
        match broken.iter().min() {
            Some(first) => {
                rejected.insert(c.mac, *first);
            }
            None => clean.push(c),
        }
    }
    clean.sort_by(|a, b| {
        a.discovered_at_generation.cmp(&b.discovered_at_generation).then(a.mac.cmp(&b.mac))
    });
    RuleVerdict { chosen: clean.first().map(|c| c.mac), rejected }
}
