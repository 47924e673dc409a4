//! Continuous switch polling and the bookkeeping that turns table changes
//! into failures and replacement candidates.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use super::{
    diff_tables, DeviceRecord, DeviceStatus, FailureCause, FailureEvent, Inventory, InventoryDiff,
};
use crate::clock::{Clock, Timestamp};
use crate::link::{DeviceInfo, DeviceLink, LinkError};
use crate::snmp::{
    retrieve_lookup_table, JoinDiagnostics, MacAddress, SnmpClient, SwitchLookupTable, TableError,
    TableRoots,
};

/// Anything that can produce one joined lookup table per call.
pub trait TableSource {
    fn retrieve(&mut self) -> Result<(SwitchLookupTable, JoinDiagnostics), TableError>;
}

pub struct SnmpTableSource {
    client: SnmpClient,
    roots: TableRoots,
}

impl SnmpTableSource {
    pub fn new(client: SnmpClient, roots: TableRoots) -> Self {
        SnmpTableSource { client, roots }
    }
}

impl TableSource for SnmpTableSource {
    fn retrieve(&mut self) -> Result<(SwitchLookupTable, JoinDiagnostics), TableError> {
        retrieve_lookup_table(&mut self.client, &self.roots)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Consecutive polls a device must be missing before it counts as lost.
    pub miss_threshold: u32,
    /// Consecutive failed rounds before the switch is reported unreachable.
    pub switch_failure_threshold: u32,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { miss_threshold: 3, switch_failure_threshold: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorState {
    pub config: MonitorConfig,
    pub previous: SwitchLookupTable,
    pub generation: u64,
    pub consecutive_failures: u32,
    pub switch_reachable: bool,
    pub last_diagnostics: JoinDiagnostics,
}

impl MonitorState {
    pub fn new(config: MonitorConfig) -> Self {
        MonitorState {
            config,
            previous: SwitchLookupTable::default(),
            generation: 0,
            consecutive_failures: 0,
            switch_reachable: true,
            last_diagnostics: JoinDiagnostics::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PollResult {
    pub table: SwitchLookupTable,
    pub diff: InventoryDiff,
    pub diagnostics: JoinDiagnostics,
    /// The switch answered again after having been reported unreachable.
    pub switch_recovered: bool,
}

/// A round that produced no table. The generation did not advance.
#[derive(Debug)]
pub struct PollSkipped {
    pub error: TableError,
    pub consecutive_failures: u32,
    /// This round is the one that crossed the unreachability threshold.
    pub switch_now_unreachable: bool,
}

/// One retrieval round, diffed against the previous one.
pub fn poll_once(state: &mut MonitorState, source: &mut dyn TableSource, clock: &Clock) -> Result<PollResult, PollSkipped> {
    match source.retrieve() {
        Ok((table, diagnostics)) => {
            state.generation += 1;
            let table = table.stamped(state.generation, clock.now());
            let diff = diff_tables(&state.previous, &table);
            let switch_recovered = !state.switch_reachable;
            state.switch_reachable = true;
            state.consecutive_failures = 0;
            state.last_diagnostics = diagnostics;
            state.previous = table.clone();
            if diagnostics.dropped() > 0 {
                debug!(generation = state.generation, ?diagnostics, "entries dropped from join");
            }
            Ok(PollResult { table, diff, diagnostics, switch_recovered })
        }
        Err(error) => {
            state.consecutive_failures += 1;
            let crossed = state.switch_reachable && state.consecutive_failures >= state.config.switch_failure_threshold;
            if crossed {
                state.switch_reachable = false;
                warn!(failures = state.consecutive_failures, %error, "switch unreachable");
            }
            Err(PollSkipped { error, consecutive_failures: state.consecutive_failures, switch_now_unreachable: crossed })
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ClassifyOutcome {
    pub events: Vec<FailureEvent>,
    /// Reports naming devices the inventory does not know.
    pub unknown_reports: Vec<MacAddress>,
}

/// Applies one generation's presence information and failure reports.
///
/// An online device missing for `miss_threshold` consecutive generations
/// becomes unreachable with a link-loss failure; an online device named in
/// `reported` becomes reported-failed. Each device has at most one open
/// failure.
pub fn classify_failures(
    inventory: &mut Inventory,
    table: &SwitchLookupTable,
    reported: &BTreeSet<MacAddress>,
    miss_threshold: u32,
    now: Timestamp,
) -> ClassifyOutcome {
    let generation = table.generation;
    let mut outcome = ClassifyOutcome::default();
    let macs: Vec<MacAddress> = inventory.records().map(|r| r.mac).collect();
    for mac in macs {
        let port = table.port_of(&mac);
        let record = inventory.get_mut(&mac).expect("listed above");
        if let Some(port) = port {
            record.last_seen_generation = generation;
            record.missed_polls = 0;
            if matches!(record.status(), DeviceStatus::Online | DeviceStatus::Candidate | DeviceStatus::Healing) {
                record.port = Some(port);
            }
        } else if record.status() == DeviceStatus::Online {
            record.missed_polls += 1;
        }

        if record.status() != DeviceStatus::Online {
            continue;
        }
        let cause = if record.missed_polls >= miss_threshold {
            FailureCause::LinkLoss
        } else if reported.contains(&mac) {
            FailureCause::Reported
        } else {
            continue;
        };
        let next = match cause {
            FailureCause::LinkLoss => DeviceStatus::Unreachable,
            FailureCause::Reported => DeviceStatus::ReportedFailed,
        };
        inventory.set_status(&mac, next);
        let event = FailureEvent { mac, cause, detected_at_generation: generation, detected_at: now };
        info!(%mac, cause = cause.as_str(), generation, "device failed");
        inventory.open_failure(event.clone());
        outcome.events.push(event);
    }
    for mac in reported {
        if inventory.get(mac).is_none() {
            warn!(%mac, "failure report for unknown device ignored");
            outcome.unknown_reports.push(*mac);
        }
    }
    outcome
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct CandidateUpdate {
    /// New devices enrolled as ordinary online members.
    pub enrolled: Vec<(u32, MacAddress)>,
    /// New devices enrolled as replacement candidates.
    pub candidates: Vec<(u32, MacAddress)>,
    /// Failed devices whose own MAC came back; their failure is closed.
    pub returned: Vec<(u32, MacAddress)>,
    /// Candidates that left the switch and were dropped from the pool.
    pub forgotten: Vec<MacAddress>,
}

/// Sorts newly seen MACs into returning devices, ordinary enrollments and
/// replacement candidates. A new MAC is a candidate only if it was
/// discovered in a generation strictly after some open failure was detected.
pub fn update_candidates(inventory: &mut Inventory, diff: &InventoryDiff, now: Timestamp) -> CandidateUpdate {
    let generation = diff.generation;
    let mut update = CandidateUpdate::default();
    let still_present = diff.added_macs();

    for (_, mac) in &diff.removed {
        if still_present.contains(mac) {
            continue;
        }
        if inventory.get(mac).is_some_and(|r| r.status() == DeviceStatus::Candidate) {
            inventory.forget(mac);
            update.forgotten.push(*mac);
        }
    }

    let earliest_open_failure = inventory.open_failures().iter().map(|f| f.detected_at_generation).min();
    for &(port, mac) in &diff.added {
        let known = inventory.get(&mac).map(|r| r.status());
        match known {
            Some(status) if status.is_failed() => {
                inventory.close_failure(&mac);
                inventory.set_status(&mac, DeviceStatus::Online);
                let record = inventory.get_mut(&mac).expect("known");
                record.port = Some(port);
                record.missed_polls = 0;
                record.last_seen_generation = generation;
                info!(%mac, port, "failed device returned");
                update.returned.push((port, mac));
                continue;
            }
            Some(DeviceStatus::Retired) => {
                // Its identity was handed to a replacement; treat the
                // hardware as new.
                inventory.forget(&mac);
            }
            Some(_) => {
                let record = inventory.get_mut(&mac).expect("known");
                record.port = Some(port);
                record.last_seen_generation = generation;
                continue;
            }
            None => {}
        }

        let after_failure = earliest_open_failure.is_some_and(|g| generation > g);
        let status = if after_failure { DeviceStatus::Candidate } else { DeviceStatus::Online };
        inventory.insert(DeviceRecord::discovered(mac, port, status, generation, now));
        if after_failure {
            info!(%mac, port, generation, "replacement candidate enrolled");
            update.candidates.push((port, mac));
        } else {
            info!(%mac, port, generation, "device enrolled");
            update.enrolled.push((port, mac));
        }
    }
    update
}

/// Asks a device for its characteristics and hardware profile.
pub fn interrogate_device(link: &DeviceLink, mac: &MacAddress) -> Result<DeviceInfo, LinkError> {
    link.interrogate(mac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snmp::PortEntry;

    fn mac(last: u8) -> MacAddress {
        MacAddress::new([0xaa, 0, 0, 0, 0, last])
    }

    fn table(generation: u64, pairs: &[(u32, u8)]) -> SwitchLookupTable {
        let mut t = SwitchLookupTable { generation, ..Default::default() };
        for (port, last) in pairs {
            t.ports
                .entry(*port)
                .or_insert_with(|| PortEntry { if_name: format!("Gi0/{port}"), macs: BTreeSet::new() })
                .macs
                .insert(mac(*last));
        }
        t
    }

    struct Scripted {
        rounds: std::collections::VecDeque<Result<SwitchLookupTable, ()>>,
    }

    impl TableSource for Scripted {
        fn retrieve(&mut self) -> Result<(SwitchLookupTable, JoinDiagnostics), TableError> {
            match self.rounds.pop_front().expect("script exhausted") {
                Ok(t) => Ok((t, JoinDiagnostics::default())),
                Err(()) => Err(TableError::Walk(crate::snmp::SnmpError::Timeout {
                    agent: "127.0.0.1:161".parse().unwrap(),
                    attempts: 1,
                })),
            }
        }
    }

    /// Drives poll + classify + update for a scripted sequence of tables.
    fn run(
        script: Vec<Result<SwitchLookupTable, ()>>,
        k: u32,
    ) -> (Inventory, Vec<FailureEvent>, Vec<CandidateUpdate>) {
        let clock = Clock::virtual_clock();
        let mut state = MonitorState::new(MonitorConfig { miss_threshold: k, switch_failure_threshold: 2 });
        let mut source = Scripted { rounds: script.into() };
        let mut inv = Inventory::new();
        let mut events = Vec::new();
        let mut updates = Vec::new();
        while !source.rounds.is_empty() {
            if let Ok(result) = poll_once(&mut state, &mut source, &clock) {
                events.extend(classify_failures(&mut inv, &result.table, &BTreeSet::new(), k, clock.now()).events);
                updates.push(update_candidates(&mut inv, &result.diff, clock.now()));
                inv.check_invariants().unwrap();
            }
            clock.sleep(std::time::Duration::from_millis(100));
        }
        (inv, events, updates)
    }

    #[test]
    fn first_poll_adds_everything() {
        let clock = Clock::virtual_clock();
        let mut state = MonitorState::new(MonitorConfig::default());
        let mut source = Scripted { rounds: vec![Ok(table(0, &[(1, 1), (2, 2), (3, 3)]))].into() };
        let result = poll_once(&mut state, &mut source, &clock).unwrap();
        assert_eq!(result.diff.added.len(), 3);
        assert!(result.diff.removed.is_empty());
        assert_eq!(result.table.generation, 1);
    }

    #[test]
    fn identical_rounds_give_empty_diff() {
        let clock = Clock::virtual_clock();
        let mut state = MonitorState::new(MonitorConfig::default());
        let mut source = Scripted { rounds: vec![Ok(table(0, &[(5, 1)])), Ok(table(0, &[(5, 1)]))].into() };
        poll_once(&mut state, &mut source, &clock).unwrap();
        assert!(poll_once(&mut state, &mut source, &clock).unwrap().diff.is_empty());
    }

    #[test]
    fn switch_timeouts_freeze_generation() {
        let clock = Clock::virtual_clock();
        let mut state = MonitorState::new(MonitorConfig { miss_threshold: 3, switch_failure_threshold: 2 });
        let mut source = Scripted {
            rounds: vec![Ok(table(0, &[(5, 1)])), Err(()), Err(()), Err(()), Ok(table(0, &[(5, 1)]))].into(),
        };
        poll_once(&mut state, &mut source, &clock).unwrap();
        let first = poll_once(&mut state, &mut source, &clock).unwrap_err();
        assert!(!first.switch_now_unreachable);
        let second = poll_once(&mut state, &mut source, &clock).unwrap_err();
        assert!(second.switch_now_unreachable);
        let third = poll_once(&mut state, &mut source, &clock).unwrap_err();
        assert!(!third.switch_now_unreachable, "reported once");
        assert_eq!(state.generation, 1);
        let back = poll_once(&mut state, &mut source, &clock).unwrap();
        assert!(back.switch_recovered);
        assert_eq!(back.table.generation, 2);
        assert!(back.diff.is_empty());
    }

    #[test]
    fn absence_below_threshold_is_not_a_failure() {
        let (inv, events, _) = run(vec![Ok(table(0, &[(5, 1)])), Ok(table(0, &[]))], 3);
        assert!(events.is_empty());
        assert_eq!(inv.get(&mac(1)).unwrap().status(), DeviceStatus::Online);
        assert_eq!(inv.get(&mac(1)).unwrap().missed_polls, 1);
    }

    #[test]
    fn three_absences_with_k3_is_link_loss() {
        let (inv, events, _) =
            run(vec![Ok(table(0, &[(5, 1)])), Ok(table(0, &[])), Ok(table(0, &[])), Ok(table(0, &[]))], 3);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].cause, FailureCause::LinkLoss);
        // present at generation 1, absent at 2, 3, 4: run length 3 reached at 4
        assert_eq!(events[0].detected_at_generation, 4);
        assert_eq!(inv.get(&mac(1)).unwrap().status(), DeviceStatus::Unreachable);
        assert_eq!(inv.get(&mac(1)).unwrap().port, Some(5), "last port kept");
    }

    #[test]
    fn reported_failure_while_still_in_table() {
        let clock = Clock::virtual_clock();
        let mut inv = Inventory::new();
        inv.insert(DeviceRecord::discovered(mac(1), 5, DeviceStatus::Online, 1, Timestamp::ZERO));
        let t = table(2, &[(5, 1)]);
        let out = classify_failures(&mut inv, &t, &BTreeSet::from([mac(1), mac(9)]), 3, clock.now());
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.events[0].cause, FailureCause::Reported);
        assert_eq!(out.unknown_reports, vec![mac(9)]);
        assert_eq!(inv.get(&mac(1)).unwrap().status(), DeviceStatus::ReportedFailed);
        // a second report does not open a second failure
        let again = classify_failures(&mut inv, &table(3, &[(5, 1)]), &BTreeSet::from([mac(1)]), 3, clock.now());
        assert!(again.events.is_empty());
    }

    #[test]
    fn new_device_without_failures_is_enrolled() {
        let (inv, _, updates) = run(vec![Ok(table(0, &[(5, 1)])), Ok(table(0, &[(5, 1), (6, 2)]))], 3);
        assert_eq!(updates[1].enrolled, vec![(6, mac(2))]);
        assert!(updates[1].candidates.is_empty());
        assert_eq!(inv.get(&mac(2)).unwrap().status(), DeviceStatus::Online);
    }

    #[test]
    fn device_after_failure_is_candidate() {
        // failure detected at generation 4; candidate appears at 6
        let mut script = vec![Ok(table(0, &[(5, 1)]))];
        script.extend((0..4).map(|_| Ok(table(0, &[]))));
        script.push(Ok(table(0, &[(5, 2)])));
        let (inv, events, updates) = run(script, 3);
        assert_eq!(events[0].detected_at_generation, 4);
        assert_eq!(updates[5].candidates, vec![(5, mac(2))]);
        let cand = inv.get(&mac(2)).unwrap();
        assert_eq!(cand.status(), DeviceStatus::Candidate);
        assert_eq!(cand.discovered_at_generation, 6);
    }

    #[test]
    fn device_in_same_generation_as_failure_is_not_candidate() {
        let script = vec![
            Ok(table(0, &[(5, 1)])),
            Ok(table(0, &[])),
            Ok(table(0, &[])),
            Ok(table(0, &[(5, 2)])), // failure of mac 1 detected in this generation
        ];
        let (inv, events, updates) = run(script, 3);
        assert_eq!(events[0].detected_at_generation, 4);
        assert_eq!(updates[3].enrolled, vec![(5, mac(2))]);
        assert_eq!(inv.get(&mac(2)).unwrap().status(), DeviceStatus::Online);
    }

    #[test]
    fn returning_device_closes_its_failure() {
        let mut script = vec![Ok(table(0, &[(5, 1)]))];
        script.extend((0..3).map(|_| Ok(table(0, &[]))));
        script.push(Ok(table(0, &[(5, 1)])));
        let (inv, events, updates) = run(script, 3);
        assert_eq!(events.len(), 1);
        assert_eq!(updates[4].returned, vec![(5, mac(1))]);
        assert!(updates[4].candidates.is_empty());
        assert_eq!(inv.get(&mac(1)).unwrap().status(), DeviceStatus::Online);
        assert!(inv.open_failures().is_empty());
    }

    #[test]
    fn candidate_leaving_is_forgotten() {
        let mut script = vec![Ok(table(0, &[(5, 1)]))];
        script.extend((0..3).map(|_| Ok(table(0, &[]))));
        script.push(Ok(table(0, &[(5, 2)])));
        script.push(Ok(table(0, &[])));
        let (inv, _, updates) = run(script, 3);
        assert_eq!(updates[5].forgotten, vec![mac(2)]);
        assert!(inv.get(&mac(2)).is_none());
    }

    #[test]
    fn port_move_rebinds() {
        let (inv, events, _) = run(vec![Ok(table(0, &[(5, 1)])), Ok(table(0, &[(7, 1)]))], 3);
        assert!(events.is_empty());
        assert_eq!(inv.get(&mac(1)).unwrap().port, Some(7));
    }
}
