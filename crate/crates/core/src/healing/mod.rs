//! Replacement matching and the three-stage restore of a failed device's
//! last working point onto its replacement.

mod engine;
mod firmware;
mod matcher;

pub use engine::{EngineConfig, HealingEngine};
pub use firmware::{DirFirmwareRepository, FirmwareRepository, MemoryFirmwareRepository};
pub use matcher::{select_replacement, MatchDecision, MatchPolicy, RejectReason};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::snmp::MacAddress;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "J{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum JobStage {
    Matched,
    CharacteristicsMapped,
    FirmwareMapped,
    ConfigurationMapped,
    Healed,
    Aborted,
}

impl JobStage {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStage::Healed | JobStage::Aborted)
    }

    /// The stage a successful step leads to.
    pub fn next(self) -> Option<JobStage> {
        match self {
            JobStage::Matched => Some(JobStage::CharacteristicsMapped),
            JobStage::CharacteristicsMapped => Some(JobStage::FirmwareMapped),
            JobStage::FirmwareMapped => Some(JobStage::ConfigurationMapped),
            JobStage::ConfigurationMapped => Some(JobStage::Healed),
            JobStage::Healed | JobStage::Aborted => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobStage::Matched => "matched",
            JobStage::CharacteristicsMapped => "characteristics_mapped",
            JobStage::FirmwareMapped => "firmware_mapped",
            JobStage::ConfigurationMapped => "configuration_mapped",
            JobStage::Healed => "healed",
            JobStage::Aborted => "aborted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum AbortReason {
    #[error("conduit timeout: {0}")]
    ConduitTimeout(String),
    #[error("device address {address} already held by {holder}")]
    AddressConflict { address: u32, holder: MacAddress },
    #[error("device refused: {0}")]
    Refused(String),
    #[error("transfer failed: {0}")]
    TransferFailure(String),
    #[error("no firmware image for {device_type} {version}")]
    FirmwareUnavailable { device_type: String, version: String },
    #[error("device did not come back within {0:?}")]
    RebootTimeout(std::time::Duration),
    #[error("device runs {found} after reboot, expected {expected}")]
    VersionMismatchAfterReboot { expected: String, found: String },
    #[error("checksum mismatch on {0}")]
    ChecksumMismatch(String),
    #[error("activation rejected: {0}")]
    ActivationRejected(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("interrupted by shutdown")]
    Interrupted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealingJob {
    pub id: JobId,
    pub failed_mac: MacAddress,
    pub candidate_mac: MacAddress,
    stage: JobStage,
    stage_timestamps: Vec<(JobStage, Timestamp)>,
    pub failure_reason: Option<AbortReason>,
}

impl HealingJob {
    pub fn new(id: JobId, failed_mac: MacAddress, candidate_mac: MacAddress, at: Timestamp) -> Self {
        HealingJob {
            id,
            failed_mac,
            candidate_mac,
            stage: JobStage::Matched,
            stage_timestamps: vec![(JobStage::Matched, at)],
            failure_reason: None,
        }
    }

    pub fn stage(&self) -> JobStage {
        self.stage
    }

    pub fn stage_timestamps(&self) -> &[(JobStage, Timestamp)] {
        &self.stage_timestamps
    }

    pub fn timestamp_of(&self, stage: JobStage) -> Option<Timestamp> {
        self.stage_timestamps.iter().find(|(s, _)| *s == stage).map(|(_, t)| *t)
    }

    fn stamp(&mut self, stage: JobStage, at: Timestamp) -> Timestamp {
        let last = self.stage_timestamps.last().map(|(_, t)| *t).unwrap_or(Timestamp::ZERO);
        // Distinct stages never share an instant, even on a coarse clock.
        let at = if at > last { at } else { last.next_tick() };
        self.stage = stage;
        self.stage_timestamps.push((stage, at));
        at
    }

    /// Moves to the next stage in order.
    ///
    /// # Panics
    /// On a terminal job.
    pub fn advance(&mut self, at: Timestamp) -> JobStage {
        let next = self.stage.next().unwrap_or_else(|| panic!("job {} is already {}", self.id, self.stage.as_str()));
        self.stamp(next, at);
        next
    }

    /// # Panics
    /// On a terminal job.
    pub fn abort(&mut self, reason: AbortReason, at: Timestamp) {
        assert!(!self.stage.is_terminal(), "job {} is already {}", self.id, self.stage.as_str());
        self.failure_reason = Some(reason);
        self.stamp(JobStage::Aborted, at);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job() -> HealingJob {
        let m = |b| MacAddress::new([0, 0, 0, 0, 0, b]);
        HealingJob::new(JobId(1), m(1), m(2), Timestamp::from_nanos(100))
    }

    #[test]
    fn stages_advance_in_order_with_increasing_stamps() {
        let mut j = job();
        let same = Timestamp::from_nanos(100);
        assert_eq!(j.advance(same), JobStage::CharacteristicsMapped);
        assert_eq!(j.advance(same), JobStage::FirmwareMapped);
        assert_eq!(j.advance(Timestamp::from_nanos(500)), JobStage::ConfigurationMapped);
        assert_eq!(j.advance(same), JobStage::Healed);
        let stamps: Vec<_> = j.stage_timestamps().iter().map(|(_, t)| *t).collect();
        assert!(stamps.windows(2).all(|w| w[0] < w[1]), "{stamps:?}");
    }

    #[test]
    fn abort_from_any_live_stage() {
        for steps in 0..4 {
            let mut j = job();
            for _ in 0..steps {
                j.advance(Timestamp::from_nanos(200));
            }
            j.abort(AbortReason::Interrupted, Timestamp::from_nanos(300));
            assert_eq!(j.stage(), JobStage::Aborted);
        }
    }

    #[test]
    #[should_panic]
    fn healed_job_cannot_advance() {
        let mut j = job();
        for _ in 0..5 {
            j.advance(Timestamp::from_nanos(200));
        }
    }

    #[test]
    #[should_panic]
    fn aborted_job_cannot_abort_again() {
        let mut j = job();
        j.abort(AbortReason::Interrupted, Timestamp::ZERO);
        j.abort(AbortReason::Interrupted, Timestamp::ZERO);
    }
}
