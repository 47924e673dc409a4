mod support;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Duration;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fleetheal::clock::Clock;
use fleetheal::config::parse_config;
use fleetheal::healing::select_replacement;
use fleetheal::inventory::{
    classify_failures, diff_tables, poll_once, update_candidates, DeviceStatus, FailureCause, Inventory,
    MonitorConfig, MonitorState, TableSource,
};
use fleetheal::snmp::pdu::{Message, Pdu, PduKind};
use fleetheal::snmp::{build_lookup_table, JoinDiagnostics, Oid, SwitchLookupTable, TableError, Value};

use support::{gen, oracles};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn join_agrees_with_nested_loops(seed in any::<u64>(), overlap in prop::sample::select(vec![0.0, 0.5, 1.0])) {
        let (m, p, i) = gen::join_instance(&mut rng(seed), overlap);
        let expected = oracles::join(&m, &p, &i);
        match build_lookup_table(&m, &p, &i) {
            Ok((table, diag)) => {
                let expected = expected.expect("oracle found no conflict");
                prop_assert_eq!(oracles::triples(&table), expected.triples);
                prop_assert_eq!(diag.mac_without_port, expected.mac_without_port);
                prop_assert_eq!(diag.port_without_interface, expected.port_without_interface);
                prop_assert_eq!(diag.port_without_mac, expected.port_without_mac);
                prop_assert_eq!(diag.mac_values_skipped, m.skipped);
            }
            Err(TableError::JoinConflict { .. }) => prop_assert!(expected.is_none()),
            Err(e) => prop_assert!(false, "unexpected error {}", e),
        }
    }

    #[test]
    fn join_ignores_entry_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (mut m, mut p, i) = gen::join_instance(&mut r, 0.5);
        let first = build_lookup_table(&m, &p, &i).map(|(t, _)| t.canonical_text());
        m.entries.shuffle(&mut r);
        p.entries.shuffle(&mut r);
        let second = build_lookup_table(&m, &p, &i).map(|(t, _)| t.canonical_text());
        prop_assert_eq!(first.ok(), second.ok());
    }

    #[test]
    fn diff_round_trips(seed in any::<u64>()) {
        let (prev, next) = gen::table_pair(&mut rng(seed));
        let diff = diff_tables(&prev, &next);
        prop_assert_eq!(diff.apply(&prev.pairs()), next.pairs());
        let (added, removed) = oracles::pair_difference(&prev, &next);
        prop_assert_eq!(diff.added, added);
        prop_assert_eq!(diff.removed, removed);
    }

    #[test]
    fn matcher_agrees_with_rule_evaluator(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = gen::match_instance(&mut r);
        let expected = oracles::select(&inst.failed, inst.failure_generation, &inst.candidates, &inst.snapshot, &inst.busy, &inst.policy);
        let mut order: Vec<&_> = inst.candidates.iter().collect();
        for _ in 0..4 {
            order.shuffle(&mut r);
            let got = select_replacement(&inst.failed, inst.failure_generation, &order, &inst.snapshot, &inst.busy, &inst.policy);
            prop_assert_eq!(got.chosen, expected.chosen);
            let rejected: BTreeMap<_, _> = got.rejected.iter().copied().collect();
            prop_assert_eq!(&rejected, &expected.rejected);
        }
        if let Some(chosen) = expected.chosen {
            let c = inst.candidates.iter().find(|c| c.mac == chosen).unwrap();
            prop_assert!(c.discovered_at_generation > inst.failure_generation);
            prop_assert_eq!(&c.profile.as_ref().unwrap().device_type, &inst.snapshot.device_type);
            if !inst.policy.allow_cross_port {
                prop_assert_eq!(c.port, inst.failed.port);
            }
        }
    }

    #[test]
    fn ber_messages_round_trip(
        request_id in any::<i32>(),
        community in prop::collection::vec(any::<u8>(), 0..40),
        arcs in prop::collection::vec(prop::collection::vec(0u32..u32::MAX, 0..12), 0..6),
        int in any::<i64>(),
        bytes in prop::collection::vec(any::<u8>(), 0..300),
    ) {
        let bindings = arcs
            .into_iter()
            .enumerate()
            .map(|(n, tail)| {
                let mut all = vec![1, 3];
                all.extend(tail);
                let value = match n % 4 {
                    0 => Value::Null,
                    1 => Value::Integer(int),
                    2 => Value::OctetString(bytes.clone()),
                    _ => Value::EndOfMibView,
                };
                (Oid::new(all).unwrap(), value)
            })
            .collect();
        let msg = Message {
            version: 1,
            community,
            pdu: Pdu { kind: PduKind::Response, request_id, error_status: 0, error_index: 0, varbinds: bindings },
        };
        prop_assert_eq!(Message::decode(&msg.encode()).unwrap(), msg);
    }
}

struct Scripted(VecDeque<SwitchLookupTable>);

impl TableSource for Scripted {
    fn retrieve(&mut self) -> Result<(SwitchLookupTable, JoinDiagnostics), TableError> {
        Ok((self.0.pop_front().expect("script length"), JoinDiagnostics::default()))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Random presence schedules through the monitor: devices present every
    /// round never fail, absent ones fail exactly after K misses, candidates
    /// postdate the failure they could replace, and every status change is
    /// a legal one (illegal ones panic inside the inventory).
    #[test]
    fn monitor_schedules(seed in any::<u64>(), k in 1u32..5) {
        let mut r = rng(seed);
        use rand::Rng;
        let devices = r.gen_range(1..12u32);
        let rounds = r.gen_range(1..30usize);
        let mut presence: Vec<Vec<bool>> = Vec::new();
        let steady: BTreeSet<u32> = (0..devices).filter(|_| r.gen_bool(0.4)).collect();
        for _ in 0..rounds {
            presence.push((0..devices).map(|d| steady.contains(&d) || r.gen_bool(0.6)).collect());
        }
        let tables: VecDeque<SwitchLookupTable> = presence
            .iter()
            .map(|row| {
                let pairs = row.iter().enumerate().filter(|(_, p)| **p).map(|(d, _)| (d as u32 % 4 + 1, gen::mac_from(d as u32))).collect();
                gen::table_from_pairs(0, &pairs)
            })
            .collect();
        let clock = Clock::virtual_clock();
        let mut state = MonitorState::new(MonitorConfig { miss_threshold: k, switch_failure_threshold: 3 });
        let mut source = Scripted(tables);
        let mut inv = Inventory::new();
        let mut misses = vec![0u32; devices as usize];
        for row in &presence {
            let result = poll_once(&mut state, &mut source, &clock).unwrap();
            let failures = classify_failures(&mut inv, &result.table, &BTreeSet::new(), k, clock.now()).events;
            let earliest = inv.open_failures().iter().map(|f| f.detected_at_generation).min();
            let update = update_candidates(&mut inv, &result.diff, clock.now());
            inv.check_invariants().unwrap();
            for (d, present) in row.iter().enumerate() {
                let mac = gen::mac_from(d as u32);
                let failed_now = failures.iter().any(|f| f.mac == mac);
                if steady.contains(&(d as u32)) {
                    prop_assert!(!failed_now);
                }
                if *present {
                    misses[d] = 0;
                } else if inv.get(&mac).is_some_and(|rec| rec.status() == DeviceStatus::Online) || failed_now {
                    misses[d] += 1;
                }
                if failed_now {
                    prop_assert_eq!(misses[d], k, "failure after exactly K misses");
                    prop_assert_eq!(failures.iter().find(|f| f.mac == mac).unwrap().cause, FailureCause::LinkLoss);
                }
            }
            for (_, mac) in &update.candidates {
                let rec = inv.get(mac).unwrap();
                prop_assert!(earliest.is_some_and(|g| rec.discovered_at_generation > g));
            }
            clock.sleep(Duration::from_millis(100));
        }
        for d in &steady {
            prop_assert!(inv.failure(&gen::mac_from(*d)).is_none());
        }
    }

    #[test]
    fn bad_config_values_fail_at_load(
        key in prop::sample::select(vec!["pollPeriod", "stageBackoff", "conduitTimeout", "ftpConnectTimeout", "snmpTimeout", "missThreshold", "rebootBoundMultiplier", "historyDepth", "community"]),
    ) {
        let value = match key {
            "missThreshold" | "rebootBoundMultiplier" | "historyDepth" => "0",
            "community" => "",
            _ => "0s",
        };
        let text = if key == "community" {
            "switchEndpoint = 10.0.0.2\ncommunity =\n".to_string()
        } else {
            format!("switchEndpoint = 10.0.0.2\ncommunity = public\n{key} = {value}\n")
        };
        prop_assert!(parse_config(&text).is_err());
    }
}
