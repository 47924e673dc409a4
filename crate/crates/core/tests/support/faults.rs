//! The abort matrix: one faulty replacement per case, followed by a healthy
//! one on the same port.

use fleetheal::healing::{AbortReason, JobStage};
use fleetheal::sim::{parse_scenario, run_scenario, Scenario, ScenarioReport};
use fleetheal::snmp::MacAddress;

use super::checks;

pub const FAILED: &str = "00:0f:d7:00:00:01";
pub const FAULTY: &str = "00:0f:d7:00:00:02";
pub const HEALTHY: &str = "00:0f:d7:00:00:03";
pub const BYSTANDER: &str = "00:0f:d7:00:00:04";

pub struct FaultCase {
    pub name: &'static str,
    /// Firmware the faulty replacement ships; "2.0" matches the snapshot.
    pub firmware: &'static str,
    pub reboot_delay: &'static str,
    /// Actions applied to the faulty device just before it is attached.
    pub actions: &'static [&'static str],
    pub stage: JobStage,
    pub reason: fn(&AbortReason) -> bool,
}

pub const CASES: &[FaultCase] = &[
    FaultCase {
        name: "conduit timeout while mapping characteristics",
        firmware: "1.0",
        reboot_delay: "2s",
        actions: &["fault {m} crash_on set_characteristics"],
        stage: JobStage::CharacteristicsMapped,
        reason: |r| matches!(r, AbortReason::ConduitTimeout(_)),
    },
    FaultCase {
        name: "characteristics refused",
        firmware: "1.0",
        reboot_delay: "2s",
        actions: &["fault {m} nack_set_characteristics"],
        stage: JobStage::CharacteristicsMapped,
        reason: |r| matches!(r, AbortReason::Refused(_)),
    },
    FaultCase {
        name: "conduit timeout while mapping firmware",
        firmware: "1.0",
        reboot_delay: "2s",
        actions: &["fault {m} crash_on firmware_check"],
        stage: JobStage::FirmwareMapped,
        reason: |r| matches!(r, AbortReason::ConduitTimeout(_)),
    },
    FaultCase {
        name: "firmware transfer abort",
        firmware: "1.0",
        reboot_delay: "2s",
        actions: &["fault {m} ftp_abort /firmware"],
        stage: JobStage::FirmwareMapped,
        reason: |r| matches!(r, AbortReason::TransferFailure(_)),
    },
    FaultCase {
        name: "firmware checksum corruption",
        firmware: "1.0",
        reboot_delay: "2s",
        actions: &["corrupt_next_transfer {m}"],
        stage: JobStage::FirmwareMapped,
        reason: |r| matches!(r, AbortReason::ChecksumMismatch(_)),
    },
    FaultCase {
        name: "reboot overrun",
        firmware: "1.0",
        reboot_delay: "30s",
        actions: &[],
        stage: JobStage::FirmwareMapped,
        reason: |r| matches!(r, AbortReason::RebootTimeout(_)),
    },
    FaultCase {
        name: "old firmware after reboot",
        firmware: "1.0",
        reboot_delay: "2s",
        actions: &["fault {m} boot_old_firmware"],
        stage: JobStage::FirmwareMapped,
        reason: |r| matches!(r, AbortReason::VersionMismatchAfterReboot { .. }),
    },
    FaultCase {
        name: "conduit timeout while mapping configuration",
        firmware: "2.0",
        reboot_delay: "2s",
        actions: &["fault {m} crash_on activate_config"],
        stage: JobStage::ConfigurationMapped,
        reason: |r| matches!(r, AbortReason::ConduitTimeout(_)),
    },
    FaultCase {
        name: "configuration transfer abort",
        firmware: "2.0",
        reboot_delay: "2s",
        actions: &["fault {m} ftp_abort /config"],
        stage: JobStage::ConfigurationMapped,
        reason: |r| matches!(r, AbortReason::TransferFailure(_)),
    },
    FaultCase {
        name: "configuration checksum corruption",
        firmware: "2.0",
        reboot_delay: "2s",
        actions: &["corrupt_next_transfer {m}"],
        stage: JobStage::ConfigurationMapped,
        reason: |r| matches!(r, AbortReason::ChecksumMismatch(_)),
    },
    FaultCase {
        name: "activation rejected",
        firmware: "2.0",
        reboot_delay: "2s",
        actions: &["fault {m} reject_activation"],
        stage: JobStage::ConfigurationMapped,
        reason: |r| matches!(r, AbortReason::ActivationRejected(_)),
    },
];

pub fn scenario_text(case: &FaultCase) -> String {
    let mut text = format!(
        "SET pollPeriod 1s
SET missThreshold 2
SET stageRetries 1
SET stageBackoff 100ms
FIRMWARE amp 2.0
DEVICE {FAILED} type=amp firmware=2.0 address=11 ip=10.0.0.11 dhcp=off hw.channels=4 config.preset='gain 1' config.routing='a->b'
DEVICE {FAULTY} type=amp firmware={} hw.channels=4 rebootDelay={}
DEVICE {HEALTHY} type=amp firmware=1.0 hw.channels=4 rebootDelay=2s
DEVICE {BYSTANDER} type=amp firmware=2.0 address=20 ip=10.0.0.20 hw.channels=4 config.preset='gain 9'
AT 0 attach 1 {FAILED}
AT 0 attach 2 {BYSTANDER}
AT 3s detach {FAILED}
",
        case.firmware, case.reboot_delay
    );
    for a in case.actions {
        text.push_str(&format!("AT 6s {}\n", a.replace("{m}", FAULTY)));
    }
    text.push_str(&format!("AT 6s attach 1 {FAULTY}\nAT 30s attach 1 {HEALTHY}\n"));
    text
}

pub fn run_case(case: &FaultCase) -> Result<(Scenario, ScenarioReport), String> {
    let scenario = parse_scenario(&scenario_text(case)).map_err(|e| e.to_string())?;
    let report = run_scenario(&scenario).map_err(|e| e.to_string())?;
    Ok((scenario, report))
}

/// Aborted in the expected stage for the expected reason, with the failure
/// left open for the healthy replacement, which then heals.
pub fn check_case(case: &FaultCase, report: &ScenarioReport) -> Result<(), String> {
    let failed: MacAddress = FAILED.parse().unwrap();
    let faulty: MacAddress = FAULTY.parse().unwrap();
    let healthy: MacAddress = HEALTHY.parse().unwrap();
    let first = report
        .jobs
        .iter()
        .find(|j| j.candidate_mac == faulty)
        .ok_or_else(|| format!("no job for the faulty device; events: {:#?}", report.event_lines()))?;
    if first.stage() != JobStage::Aborted {
        return Err(format!("faulty job ended {:?}", first.stage()));
    }
    let reason = first.failure_reason.as_ref().expect("aborted with reason");
    if !(case.reason)(reason) {
        return Err(format!("unexpected abort reason {reason}"));
    }
    if checks::aborted_during(first) != Some(case.stage) {
        return Err(format!("aborted during {:?}, expected {:?}", checks::aborted_during(first), case.stage));
    }
    let second = report
        .jobs
        .iter()
        .find(|j| j.candidate_mac == healthy)
        .ok_or_else(|| "failure did not stay open for a second candidate".to_string())?;
    if second.stage() != JobStage::Healed || second.failed_mac != failed {
        return Err(format!("second job ended {:?}", second.stage()));
    }
    if report.jobs.len() != 2 {
        return Err(format!("{} jobs, expected 2", report.jobs.len()));
    }
    checks::restored_from_snapshot(report, &failed, &healthy)?;
    report.inventory.check_invariants().map_err(|e| e.to_string())?;
    let leftover = report.inventory.get(&faulty).map(|r| r.status());
    if leftover.is_some_and(|s| s != fleetheal::inventory::DeviceStatus::Candidate) {
        return Err(format!("faulty device left as {leftover:?}"));
    }
    if report.inventory.failure(&failed).is_some() {
        return Err("failure still open after the heal".into());
    }
    Ok(())
}
