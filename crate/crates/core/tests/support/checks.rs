//! Assertions over scenario reports shared by the integration tests and
//! the acceptance run. Each returns a description of the first violation.

use std::collections::BTreeSet;

use fleetheal::events::EventKind;
use fleetheal::healing::{HealingJob, JobStage};
use fleetheal::link::MessageKind;
use fleetheal::sim::{Interaction, Scenario, ScenarioReport};
use fleetheal::snmp::MacAddress;

/// The stage a job was working on when it aborted.
pub fn aborted_during(job: &HealingJob) -> Option<JobStage> {
    let stamps = job.stage_timestamps();
    if job.stage() != JobStage::Aborted || stamps.len() < 2 {
        return None;
    }
    stamps[stamps.len() - 2].0.next()
}

/// Characteristics ack before any firmware bytes, firmware before any
/// config bytes, on every healed candidate; stage stamps strictly rise.
pub fn stage_order(report: &ScenarioReport) -> Result<usize, String> {
    let mut checked = 0;
    for job in report.jobs.iter().filter(|j| j.stage() == JobStage::Healed) {
        let stamps = job.stage_timestamps();
        if !stamps.windows(2).all(|w| w[0].1 < w[1].1 && w[0].0 < w[1].0) {
            return Err(format!("{}: stage stamps not increasing: {stamps:?}", job.id));
        }
        let log = &report.devices[&job.candidate_mac].log;
        let ack = log.iter().position(|i| {
            matches!(i, Interaction::Conduit { request: MessageKind::SetCharacteristics, reply: Some(MessageKind::Ack) })
        });
        let Some(ack) = ack else {
            return Err(format!("{}: no acknowledged SetCharacteristics", job.id));
        };
        let stor_at = |dir: &str| {
            log.iter()
                .enumerate()
                .filter(|(_, i)| matches!(i, Interaction::Stor { path, .. } if path.starts_with(dir)))
                .map(|(n, _)| n)
                .collect::<Vec<_>>()
        };
        let firmware = stor_at("/firmware/");
        let config = stor_at("/config/");
        if firmware.first().is_some_and(|&f| f < ack) || config.first().is_some_and(|&c| c < ack) {
            return Err(format!("{}: bytes sent before the characteristics ack", job.id));
        }
        if let (Some(&last_fw), Some(&first_cfg)) = (firmware.last(), config.first()) {
            if last_fw > first_cfg {
                return Err(format!("{}: firmware bytes after config bytes", job.id));
            }
        }
        checked += 1;
    }
    Ok(checked)
}

/// Devices that took part in a job, either side.
pub fn participants(report: &ScenarioReport) -> BTreeSet<MacAddress> {
    let mut out = BTreeSet::new();
    for e in &report.events {
        if let EventKind::JobCreated { failed, candidate, .. } = &e.kind {
            out.insert(*failed);
            out.insert(*candidate);
        }
    }
    out
}

/// No device outside a job ever saw restoring traffic.
pub fn non_interference(report: &ScenarioReport) -> Result<usize, String> {
    let involved = participants(report);
    let mut bystanders = 0;
    for (mac, outcome) in &report.devices {
        if involved.contains(mac) {
            continue;
        }
        bystanders += 1;
        if let Some(i) = outcome.log.iter().find(|i| i.is_restoring()) {
            return Err(format!("bystander {mac} received {i:?}"));
        }
        if outcome.firmware_bytes != 0 || outcome.config_bytes != 0 {
            return Err(format!("bystander {mac} received bytes"));
        }
    }
    Ok(bystanders)
}

/// The replacement took over everything the snapshot recorded.
pub fn restored_from_snapshot(report: &ScenarioReport, failed: &MacAddress, candidate: &MacAddress) -> Result<(), String> {
    let snap = report.snapshots.get(failed).ok_or_else(|| format!("no snapshot for {failed}"))?;
    let dev = &report.devices[candidate];
    if dev.characteristics != snap.characteristics() {
        return Err(format!("characteristics {:?} != {:?}", dev.characteristics, snap.characteristics()));
    }
    if dev.firmware_version != snap.firmware_version {
        return Err(format!("firmware {} != {}", dev.firmware_version, snap.firmware_version));
    }
    if dev.active_config_digest != snap.config_digest() {
        return Err("config digest differs".into());
    }
    Ok(())
}

/// Candidates that already ran the snapshot's firmware received no
/// firmware bytes. Returns how many such jobs were seen.
pub fn firmware_noop(scenario: &Scenario, report: &ScenarioReport) -> Result<usize, String> {
    let mut seen = 0;
    for job in report.jobs.iter().filter(|j| j.stage() == JobStage::Healed) {
        let seed = scenario.devices.iter().find(|d| d.mac == job.candidate_mac).expect("candidate was seeded");
        let snap = &report.snapshots[&job.failed_mac];
        if seed.profile.firmware_version == snap.firmware_version {
            seen += 1;
            let bytes = report.devices[&job.candidate_mac].firmware_bytes;
            if bytes != 0 {
                return Err(format!("{}: {bytes} firmware bytes with equal versions", job.id));
            }
        }
    }
    Ok(seen)
}
