//! Seeded fixtures for the benchmarks. Sizes are in entries or candidates.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fleetheal::clock::Timestamp;
use fleetheal::healing::MatchPolicy;
use fleetheal::inventory::{Characteristics, DeviceAddress, DeviceRecord, DeviceStatus, HardwareProfile, IpConfig};
use fleetheal::snapshot::ConfigSnapshot;
use fleetheal::snmp::pdu::{Message, Pdu, PduKind};
use fleetheal::snmp::{
    InterfaceTable, MacAddress, MacTable, Oid, PortEntry, PortNumberTable, SwitchLookupTable, Value,
};

pub fn mac_from(n: u32) -> MacAddress {
    let b = n.to_be_bytes();
    MacAddress::new([0x02, 0x1f, b[0], b[1], b[2], b[3]])
}

/// Raw switch tables with `n` learned MACs spread over 48 ports. Every
/// MAC has a port and every port an interface name.
pub fn raw_tables(n: u32, seed: u64) -> (MacTable, PortNumberTable, InterfaceTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut macs = MacTable::default();
    let mut ports = PortNumberTable::default();
    let mut iface = InterfaceTable::default();
    for i in 0..n {
        let mac = mac_from(i);
        let index: Vec<u32> = mac.octets().iter().map(|&o| u32::from(o)).collect();
        let port = rng.gen_range(1..=48);
        macs.entries.push((index.clone(), mac));
        ports.entries.push((index, port));
        iface.entries.insert(port, format!("Gi0/{port}"));
    }
    (macs, ports, iface)
}

fn table(generation: u64, pairs: &BTreeSet<(u32, MacAddress)>) -> SwitchLookupTable {
    let mut t = SwitchLookupTable { generation, ..Default::default() };
    for (port, mac) in pairs {
        t.ports
            .entry(*port)
            .or_insert_with(|| PortEntry { if_name: format!("Gi0/{port}"), macs: BTreeSet::new() })
            .macs
            .insert(*mac);
    }
    t
}

/// Two consecutive tables of about `n` devices where a tenth left or moved.
pub fn table_pair(n: u32, seed: u64) -> (SwitchLookupTable, SwitchLookupTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prev: BTreeSet<_> = (0..n).map(|i| (rng.gen_range(1..=48), mac_from(i))).collect();
    let mut next = BTreeSet::new();
    for &(port, mac) in &prev {
        match rng.gen_range(0..20) {
            0 => {}
            1 => {
                next.insert((rng.gen_range(1..=48), mac));
            }
            _ => {
                next.insert((port, mac));
            }
        }
    }
    for i in n..n + n / 20 {
        next.insert((rng.gen_range(1..=48), mac_from(i)));
    }
    (table(1, &prev), table(2, &next))
}

/// A GetNext response carrying `n` MAC table varbinds.
pub fn walk_response(n: u32) -> Message {
    let root: Oid = fleetheal::snmp::tables::DEFAULT_MAC_TABLE_ROOT.parse().unwrap();
    let varbinds = (0..n)
        .map(|i| {
            let mac = mac_from(i);
            let mut arcs = root.arcs().to_vec();
            arcs.extend(mac.octets().iter().map(|&o| u32::from(o)));
            (Oid::new(arcs).unwrap(), Value::OctetString(mac.octets().to_vec()))
        })
        .collect();
    Message {
        version: 1,
        community: b"public".to_vec(),
        pdu: Pdu { kind: PduKind::Response, request_id: 4711, error_status: 0, error_index: 0, varbinds },
    }
}

pub struct MatchSet {
    pub failed: DeviceRecord,
    pub failure_generation: u64,
    pub snapshot: ConfigSnapshot,
    pub candidates: Vec<DeviceRecord>,
    pub busy: BTreeSet<MacAddress>,
    pub policy: MatchPolicy,
}

/// A failed device with `n` candidates, about a third of them valid.
pub fn match_set(n: u32, seed: u64) -> MatchSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hw = BTreeMap::from([("channels".to_string(), "4".to_string())]);
    let profile = HardwareProfile::new("amp", hw.clone(), "1.0".parse().unwrap()).unwrap();
    let mut failed = DeviceRecord::discovered(mac_from(0), 1, DeviceStatus::Online, 1, Timestamp::ZERO);
    failed.profile = Some(profile.clone());
    let snapshot = ConfigSnapshot::new(
        failed.mac,
        Characteristics {
            device_address: DeviceAddress::new(7).unwrap(),
            ip_config: IpConfig { ip: Ipv4Addr::new(10, 0, 0, 7), dhcp_enabled: false },
        },
        profile,
        vec![],
        9,
    )
    .unwrap();
    let candidates = (1..=n)
        .map(|i| {
            let port = if rng.gen_bool(0.6) { 1 } else { rng.gen_range(2..=4) };
            let mut c = DeviceRecord::discovered(mac_from(i), port, DeviceStatus::Candidate, rng.gen_range(9..14), Timestamp::ZERO);
            let ty = if rng.gen_bool(0.8) { "amp" } else { "dsp" };
            c.profile = Some(HardwareProfile::new(ty, hw.clone(), "0.9".parse().unwrap()).unwrap());
            c
        })
        .collect();
    MatchSet { failed, failure_generation: 10, snapshot, candidates, busy: BTreeSet::new(), policy: MatchPolicy::default() }
}
