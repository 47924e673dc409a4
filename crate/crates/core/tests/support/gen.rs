//! Seeded generators shared by the property tests and the acceptance run.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::Rng;

use fleetheal::clock::Timestamp;
use fleetheal::healing::MatchPolicy;
use fleetheal::inventory::{Characteristics, DeviceAddress, DeviceRecord, DeviceStatus, HardwareProfile, IpConfig};
use fleetheal::snapshot::ConfigSnapshot;
use fleetheal::snmp::{InterfaceTable, MacAddress, MacTable, PortEntry, PortNumberTable, SwitchLookupTable};

pub fn mac_from(n: u32) -> MacAddress {
    let b = n.to_be_bytes();
    MacAddress::new([0x02, 0x1f, b[0], b[1], b[2], b[3]])
}

pub fn random_mac<R: Rng>(rng: &mut R) -> MacAddress {
    let mut o: [u8; 6] = rng.gen();
    o[0] &= 0xfe;
    MacAddress::new(o)
}

/// Three raw tables where roughly `overlap` of each leg finds its partner
/// in the next one. Each table holds at most 200 entries.
pub fn join_instance<R: Rng>(rng: &mut R, overlap: f64) -> (MacTable, PortNumberTable, InterfaceTable) {
    let n = rng.gen_range(0..=200usize);
    let mut macs = MacTable::default();
    let mut used_indexes = BTreeSet::new();
    let mut values: Vec<MacAddress> = Vec::new();
    while macs.entries.len() < n {
        let value = if !values.is_empty() && rng.gen_bool(0.02) {
            *values.choose(rng).unwrap()
        } else {
            random_mac(rng)
        };
        // Usually the FDB index is the MAC itself; sometimes a switch uses
        // a different index.
        let index: Vec<u32> = if rng.gen_bool(0.8) {
            value.octets().iter().map(|&o| u32::from(o)).collect()
        } else {
            (0..6).map(|_| rng.gen_range(0..256)).collect()
        };
        if used_indexes.insert(index.clone()) {
            values.push(value);
            macs.entries.push((index, value));
        }
    }
    macs.skipped = rng.gen_range(0..3);
    macs.entries.shuffle(rng);

    let mut ports = PortNumberTable::default();
    for (index, _) in &macs.entries {
        if ports.entries.len() < 200 && rng.gen_bool(overlap) {
            ports.entries.push((index.clone(), rng.gen_range(1..=48)));
        }
    }
    let extra = rng.gen_range(0..=10usize);
    for _ in 0..extra {
        let index: Vec<u32> = (0..6).map(|_| rng.gen_range(0..256)).collect();
        if ports.entries.len() < 200 && !used_indexes.contains(&index) && used_indexes.insert(index.clone()) {
            ports.entries.push((index, rng.gen_range(1..=48)));
        }
    }
    ports.entries.shuffle(rng);

    let mut iface = InterfaceTable::default();
    let referenced: BTreeSet<u32> = ports.entries.iter().map(|(_, p)| *p).collect();
    for port in referenced {
        if rng.gen_bool(overlap) {
            iface.entries.insert(port, format!("Gi0/{port}"));
        }
    }
    for _ in 0..rng.gen_range(0..=5) {
        let port = rng.gen_range(49..=200);
        iface.entries.insert(port, format!("Te1/{port}"));
    }
    (macs, ports, iface)
}

pub fn table_from_pairs(generation: u64, pairs: &BTreeSet<(u32, MacAddress)>) -> SwitchLookupTable {
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

/// (port, mac) pairs over a small MAC universe so consecutive tables share
/// devices; each MAC sits on one port.
pub fn random_pairs<R: Rng>(rng: &mut R, universe: u32) -> BTreeSet<(u32, MacAddress)> {
    let mut out = BTreeSet::new();
    for i in 0..universe {
        if rng.gen_bool(0.5) {
            out.insert((rng.gen_range(1..=24), mac_from(i)));
        }
    }
    out
}

/// Two consecutive tables: either independent draws or the second derived
/// from the first by removals, additions and port moves.
pub fn table_pair<R: Rng>(rng: &mut R) -> (SwitchLookupTable, SwitchLookupTable) {
    let universe = rng.gen_range(0..=120);
    let prev = random_pairs(rng, universe);
    let next = if rng.gen_bool(0.3) {
        random_pairs(rng, universe)
    } else {
        let mut next = BTreeSet::new();
        for &(port, mac) in &prev {
            match rng.gen_range(0..10) {
                0 => {}
                1 => {
                    next.insert((rng.gen_range(1..=24), mac));
                }
                _ => {
                    next.insert((port, mac));
                }
            }
        }
        for i in universe..universe + rng.gen_range(0..8) {
            next.insert((rng.gen_range(1..=24), mac_from(i)));
        }
        next
    };
    let g = rng.gen_range(1..1000);
    (table_from_pairs(g, &prev), table_from_pairs(g + 1, &next))
}

pub struct MatchInstance {
    pub failed: DeviceRecord,
    pub failure_generation: u64,
    pub snapshot: ConfigSnapshot,
    pub candidates: Vec<DeviceRecord>,
    pub busy: BTreeSet<MacAddress>,
    pub policy: MatchPolicy,
}

const TYPES: [&str; 3] = ["Crown I-Tech HD", "Crown DCiN 300N", "BSS BLU-100"];

fn params<R: Rng>(rng: &mut R) -> BTreeMap<String, String> {
    let mut p = BTreeMap::new();
    p.insert("channels".to_string(), ["2", "4"][rng.gen_range(0..2)].to_string());
    if rng.gen_bool(0.5) {
        p.insert("psu".to_string(), ["ac", "dc"][rng.gen_range(0..2)].to_string());
    }
    p
}

pub fn match_instance<R: Rng>(rng: &mut R) -> MatchInstance {
    let failure_generation = rng.gen_range(5..50);
    let failed_port = rng.gen_range(1..=4);
    let ty = TYPES[rng.gen_range(0..TYPES.len())];
    let hw = params(rng);
    let profile = HardwareProfile::new(ty, hw.clone(), "1.0".parse().unwrap()).unwrap();
    let mut failed = DeviceRecord::discovered(mac_from(0), failed_port, DeviceStatus::Online, 1, Timestamp::ZERO);
    failed.profile = Some(profile.clone());
    let snapshot = ConfigSnapshot::new(
        failed.mac,
        Characteristics {
            device_address: DeviceAddress::new(7).unwrap(),
            ip_config: IpConfig { ip: Ipv4Addr::new(10, 0, 0, 7), dhcp_enabled: false },
        },
        profile,
        vec![],
        failure_generation - 1,
    )
    .unwrap();
    let count = rng.gen_range(0..=8);
    let mut candidates = Vec::new();
    let mut used = BTreeSet::new();
    while candidates.len() < count {
        let n = rng.gen_range(1..64);
        if !used.insert(n) {
            continue;
        }
        let port = if rng.gen_bool(0.6) { failed_port } else { rng.gen_range(1..=4) };
        // Few distinct generations so ties on discovery time are common.
        let generation = failure_generation - 2 + rng.gen_range(0..6);
        let mut c = DeviceRecord::discovered(mac_from(n), port, DeviceStatus::Candidate, generation, Timestamp::ZERO);
        if rng.gen_bool(0.9) {
            let t = if rng.gen_bool(0.7) { ty } else { TYPES[rng.gen_range(0..TYPES.len())] };
            let p = if rng.gen_bool(0.7) { hw.clone() } else { params(rng) };
            c.profile = Some(HardwareProfile::new(t, p, "0.9".parse().unwrap()).unwrap());
        }
        candidates.push(c);
    }
    let busy = candidates.iter().filter(|_| rng.gen_bool(0.1)).map(|c| c.mac).collect();
    let policy = MatchPolicy {
        allow_cross_port: rng.gen_bool(0.15),
        required_params: if rng.gen_bool(0.2) { Some(BTreeSet::from(["channels".to_string()])) } else { None },
    };
    MatchInstance { failed, failure_generation, snapshot, candidates, busy, policy }
}
