//! Structured events from monitoring and healing, and the append-only log
//! they are written to, one event per line.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::healing::{AbortReason, JobId, JobStage, RejectReason};
use crate::inventory::FailureCause;
use crate::snmp::MacAddress;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    DeviceDiscovered { mac: MacAddress, port: u32 },
    DeviceReturned { mac: MacAddress, port: u32 },
    CandidateEnrolled { mac: MacAddress, port: u32 },
    CandidateForgotten { mac: MacAddress },
    DeviceFailed { mac: MacAddress, cause: FailureCause },
    SwitchUnreachable { consecutive_failures: u32 },
    SwitchRecovered,
    SnapshotSaved { mac: MacAddress, revision: u64 },
    NoCandidate { failed: MacAddress, rejected: Vec<(MacAddress, RejectReason)> },
    JobCreated { job: JobId, failed: MacAddress, candidate: MacAddress },
    JobStage { job: JobId, stage: JobStage },
    JobAborted { job: JobId, reason: AbortReason },
    Healed { job: JobId, failed: MacAddress, candidate: MacAddress, elapsed: Duration },
    Diagnostic { detail: String },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::DeviceDiscovered { .. } => "device_discovered",
            EventKind::DeviceReturned { .. } => "device_returned",
            EventKind::CandidateEnrolled { .. } => "candidate_enrolled",
            EventKind::CandidateForgotten { .. } => "candidate_forgotten",
            EventKind::DeviceFailed { .. } => "device_failed",
            EventKind::SwitchUnreachable { .. } => "switch_unreachable",
            EventKind::SwitchRecovered => "switch_recovered",
            EventKind::SnapshotSaved { .. } => "snapshot_saved",
            EventKind::NoCandidate { .. } => "no_candidate",
            EventKind::JobCreated { .. } => "job_created",
            EventKind::JobStage { .. } => "job_stage",
            EventKind::JobAborted { .. } => "job_aborted",
            EventKind::Healed { .. } => "healed",
            EventKind::Diagnostic { .. } => "diagnostic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub generation: u64,
    pub at: Timestamp,
    pub kind: EventKind,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} gen={} {}", self.at, self.generation, self.kind.name())?;
        match &self.kind {
            EventKind::DeviceDiscovered { mac, port }
            | EventKind::DeviceReturned { mac, port }
            | EventKind::CandidateEnrolled { mac, port } => write!(f, " mac={mac} port={port}"),
            EventKind::CandidateForgotten { mac } => write!(f, " mac={mac}"),
            EventKind::DeviceFailed { mac, cause } => write!(f, " mac={mac} cause={}", cause.as_str()),
            EventKind::SwitchUnreachable { consecutive_failures } => write!(f, " failures={consecutive_failures}"),
            EventKind::SwitchRecovered => Ok(()),
            EventKind::SnapshotSaved { mac, revision } => write!(f, " mac={mac} revision={revision}"),
            EventKind::NoCandidate { failed, rejected } => {
                write!(f, " failed={failed} rejected=")?;
                if rejected.is_empty() {
                    f.write_str("none")?;
                }
                for (i, (mac, reason)) in rejected.iter().enumerate() {
                    let sep = if i == 0 { "" } else { "," };
                    write!(f, "{sep}{mac}:{}", reason.as_str())?;
                }
                Ok(())
            }
            EventKind::JobCreated { job, failed, candidate } => {
                write!(f, " job={job} failed={failed} candidate={candidate}")
            }
            EventKind::JobStage { job, stage } => write!(f, " job={job} stage={}", stage.as_str()),
            EventKind::JobAborted { job, reason } => write!(f, " job={job} reason={:?}", reason.to_string()),
            EventKind::Healed { job, failed, candidate, elapsed } => write!(
                f,
                " job={job} failed={failed} candidate={candidate} elapsed={:.6}s",
                elapsed.as_secs_f64()
            ),
            EventKind::Diagnostic { detail } => write!(f, " detail={detail:?}"),
        }
    }
}

/// Pulls `gen=<n>` back out of a rendered event line.
pub fn generation_of_line(line: &str) -> Option<u64> {
    line.split_whitespace().find_map(|t| t.strip_prefix("gen=")).and_then(|g| g.parse().ok())
}

/// Append-only event log file.
pub struct EventLog {
    out: BufWriter<File>,
}

impl EventLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EventLog { out: BufWriter::new(file) })
    }

    pub fn append(&mut self, event: &Event) -> std::io::Result<()> {
        writeln!(self.out, "{event}")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let e = Event {
            generation: 7,
            at: Timestamp::from_duration(Duration::from_millis(1500)),
            kind: EventKind::DeviceFailed { mac: "00:0f:d7:00:00:01".parse().unwrap(), cause: FailureCause::LinkLoss },
        };
        assert_eq!(e.to_string(), "1.500000s gen=7 device_failed mac=00:0f:d7:00:00:01 cause=link_loss");
        assert_eq!(generation_of_line(&e.to_string()), Some(7));
    }

    #[test]
    fn log_appends_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.log");
        for g in [1, 2] {
            let mut log = EventLog::open(&path).unwrap();
            log.append(&Event { generation: g, at: Timestamp::ZERO, kind: EventKind::SwitchRecovered }).unwrap();
            log.flush().unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let gens: Vec<u64> = text.lines().filter_map(generation_of_line).collect();
        assert_eq!(gens, vec![1, 2]);
    }
}
