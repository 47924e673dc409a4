use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::matcher::{select_replacement, MatchDecision, MatchPolicy};
use super::{AbortReason, FirmwareRepository, HealingJob, JobId, JobStage};
use crate::clock::Clock;
use crate::digest::Digest64;
use crate::events::{Event, EventKind};
use crate::inventory::{DeviceStatus, FailureEvent, Inventory};
use crate::link::{
    config_path, firmware_path, ConduitError, DeviceInfo, DeviceLink, LinkError, MessageBody,
};
use crate::snapshot::{ConfigSnapshot, SnapshotError, SnapshotStore};
use crate::snmp::MacAddress;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Extra attempts after a conduit timeout, per request.
    pub stage_retries: u32,
    pub stage_backoff: Duration,
    pub poll_period: Duration,
    /// The post-update reboot wait is this many poll periods.
    pub reboot_bound_multiplier: u32,
    pub policy: MatchPolicy,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            stage_retries: 3,
            stage_backoff: Duration::from_secs(1),
            poll_period: Duration::from_secs(2),
            reboot_bound_multiplier: 10,
            policy: MatchPolicy::default(),
        }
    }
}

impl EngineConfig {
    pub fn reboot_bound(&self) -> Duration {
        self.poll_period * self.reboot_bound_multiplier
    }
}

/// Runs healing jobs one at a time, each to a terminal stage.
pub struct HealingEngine {
    config: EngineConfig,
    link: DeviceLink,
    firmware: Arc<dyn FirmwareRepository>,
    clock: Clock,
    jobs: Vec<HealingJob>,
    next_id: u64,
    /// (failed, candidate) pairs that already ended in an abort.
    exhausted: BTreeSet<(MacAddress, MacAddress)>,
    last_decision: BTreeMap<MacAddress, MatchDecision>,
    missing_snapshot: BTreeSet<MacAddress>,
}

struct Ctx<'a> {
    inventory: &'a mut Inventory,
    generation: u64,
    events: &'a mut Vec<Event>,
}

fn link_abort(e: LinkError) -> AbortReason {
    match e {
        e if e.is_timeout() => AbortReason::ConduitTimeout(e.to_string()),
        LinkError::Conduit(ConduitError::NackReceived(r)) => AbortReason::Refused(r),
        LinkError::Ftp(e) => AbortReason::TransferFailure(e.to_string()),
        other => AbortReason::Protocol(other.to_string()),
    }
}

impl HealingEngine {
    pub fn new(config: EngineConfig, link: DeviceLink, firmware: Arc<dyn FirmwareRepository>) -> Self {
        let clock = link.clock().clone();
        HealingEngine {
            config,
            link,
            firmware,
            clock,
            jobs: Vec::new(),
            next_id: 1,
            exhausted: BTreeSet::new(),
            last_decision: BTreeMap::new(),
            missing_snapshot: BTreeSet::new(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn jobs(&self) -> &[HealingJob] {
        &self.jobs
    }

    /// Reinstates jobs from a previous run. Jobs that were still live are
    /// aborted and their candidates released back to the pool.
    pub fn restore_jobs(&mut self, jobs: Vec<HealingJob>, inventory: &mut Inventory) -> Vec<HealingJob> {
        let now = self.clock.now();
        let mut interrupted = Vec::new();
        for mut job in jobs {
            if !job.stage().is_terminal() {
                job.abort(AbortReason::Interrupted, now);
                if inventory.get(&job.candidate_mac).is_some_and(|r| r.status() == DeviceStatus::Healing) {
                    inventory.set_status(&job.candidate_mac, DeviceStatus::Candidate);
                }
                interrupted.push(job.clone());
            }
            self.next_id = self.next_id.max(job.id.0 + 1);
            self.jobs.push(job);
        }
        interrupted
    }

    /// Drops bookkeeping about a candidate that left the network.
    pub fn forget_candidate(&mut self, mac: &MacAddress) {
        self.exhausted.retain(|(_, c)| c != mac);
    }

    fn event(&self, ctx: &mut Ctx<'_>, kind: EventKind) {
        ctx.events.push(Event { generation: ctx.generation, at: self.clock.now(), kind });
    }

    /// Tries to heal every open failure that has no job yet.
    pub fn run_jobs(
        &mut self,
        inventory: &mut Inventory,
        store: &SnapshotStore,
        generation: u64,
        shutdown: &AtomicBool,
    ) -> Vec<Event> {
        let mut events = Vec::new();
        let mut ctx = Ctx { inventory, generation, events: &mut events };
        let failures: Vec<FailureEvent> = ctx.inventory.open_failures().into_iter().cloned().collect();
        let open: BTreeSet<MacAddress> = failures.iter().map(|f| f.mac).collect();
        self.last_decision.retain(|m, _| open.contains(m));
        self.missing_snapshot.retain(|m| open.contains(m));

        for failure in failures {
            if shutdown.load(Ordering::SeqCst) {
                break;
            }
            if self.jobs.iter().any(|j| j.failed_mac == failure.mac && !j.stage().is_terminal()) {
                continue;
            }
            let snapshot = match store.load_latest(&failure.mac) {
                Ok(loaded) => {
                    self.missing_snapshot.remove(&failure.mac);
                    for note in loaded.skipped {
                        self.event(&mut ctx, EventKind::Diagnostic { detail: format!("{}: {note}", failure.mac) });
                    }
                    loaded.snapshot
                }
                Err(e) => {
                    if self.missing_snapshot.insert(failure.mac) {
                        let detail = match &e {
                            SnapshotError::Corrupt { diagnostics, .. } => format!("{e}: {}", diagnostics.join("; ")),
                            _ => e.to_string(),
                        };
                        self.event(&mut ctx, EventKind::Diagnostic { detail });
                    }
                    continue;
                }
            };
            let Some(failed) = ctx.inventory.get(&failure.mac).cloned() else { continue };
            let candidates: Vec<_> = ctx.inventory.with_status(DeviceStatus::Candidate).cloned().collect();
            if candidates.is_empty() {
                continue;
            }
            let busy: BTreeSet<MacAddress> = self
                .exhausted
                .iter()
                .filter(|(f, _)| *f == failure.mac)
                .map(|(_, c)| *c)
                .chain(self.jobs.iter().filter(|j| !j.stage().is_terminal()).map(|j| j.candidate_mac))
                .collect();
            let refs: Vec<_> = candidates.iter().collect();
            let decision = select_replacement(
                &failed,
                failure.detected_at_generation,
                &refs,
                &snapshot,
                &busy,
                &self.config.policy,
            );
            let Some(candidate) = decision.chosen else {
                if self.last_decision.get(&failure.mac) != Some(&decision) {
                    self.event(
                        &mut ctx,
                        EventKind::NoCandidate { failed: failure.mac, rejected: decision.rejected.clone() },
                    );
                    self.last_decision.insert(failure.mac, decision);
                }
                continue;
            };
            self.last_decision.remove(&failure.mac);
            self.heal(&mut ctx, failure.mac, candidate, &snapshot, shutdown);
        }
        events
    }

    fn heal(
        &mut self,
        ctx: &mut Ctx<'_>,
        failed: MacAddress,
        candidate: MacAddress,
        snapshot: &ConfigSnapshot,
        shutdown: &AtomicBool,
    ) {
        let id = JobId(self.next_id);
        self.next_id += 1;
        let mut job = HealingJob::new(id, failed, candidate, self.clock.now());
        ctx.inventory.set_status(&candidate, DeviceStatus::Healing);
        info!(job = %id, %failed, %candidate, "healing started");
        self.event(ctx, EventKind::JobCreated { job: id, failed, candidate });

        let outcome = (|| {
            let steps: [fn(&Self, &mut Ctx<'_>, &HealingJob, &ConfigSnapshot) -> Result<Option<DeviceInfo>, AbortReason>;
                3] = [Self::map_characteristics, Self::map_firmware, Self::map_configuration];
            let mut last_info = None;
            for step in steps {
                if shutdown.load(Ordering::SeqCst) {
                    return Err(AbortReason::Interrupted);
                }
                last_info = step(self, ctx, &job, snapshot)?;
                let stage = job.advance(self.clock.now());
                self.event(ctx, EventKind::JobStage { job: id, stage });
            }
            Ok(last_info.expect("configuration step reports device state"))
        })();

        match outcome {
            Ok(info) => self.finalize(ctx, &mut job, snapshot, info),
            Err(reason) => self.abort(ctx, &mut job, reason),
        }
        self.jobs.push(job);
    }

    /// One request with the retry budget applied to conduit timeouts only.
    fn request(&self, mac: &MacAddress, body: MessageBody) -> Result<MessageBody, LinkError> {
        let mut attempt = 0;
        loop {
            match self.link.request(mac, body.clone()) {
                Err(e) if e.is_timeout() && attempt < self.config.stage_retries => {
                    attempt += 1;
                    warn!(%mac, attempt, "conduit timeout, retrying");
                    self.clock.sleep(self.config.stage_backoff);
                }
                other => return other,
            }
        }
    }

    fn interrogate(&self, mac: &MacAddress) -> Result<DeviceInfo, AbortReason> {
        match self.request(mac, MessageBody::Interrogate).map_err(link_abort)? {
            MessageBody::InterrogateReply(info) => Ok(info),
            other => Err(AbortReason::Protocol(format!("unexpected {} to interrogate", other.kind().as_str()))),
        }
    }

    fn map_characteristics(
        &self,
        ctx: &mut Ctx<'_>,
        job: &HealingJob,
        snapshot: &ConfigSnapshot,
    ) -> Result<Option<DeviceInfo>, AbortReason> {
        let address = snapshot.device_address;
        if let Some(holder) = ctx.inventory.address_holder(address, &[job.failed_mac, job.candidate_mac]) {
            return Err(AbortReason::AddressConflict { address: address.get(), holder: holder.mac });
        }
        match self.request(&job.candidate_mac, MessageBody::SetCharacteristics(snapshot.characteristics())) {
            Ok(MessageBody::Ack) => Ok(None),
            Ok(other) => Err(AbortReason::Protocol(format!("unexpected {}", other.kind().as_str()))),
            Err(e) => Err(link_abort(e)),
        }
    }

    fn map_firmware(
        &self,
        _ctx: &mut Ctx<'_>,
        job: &HealingJob,
        snapshot: &ConfigSnapshot,
    ) -> Result<Option<DeviceInfo>, AbortReason> {
        let mac = &job.candidate_mac;
        let info = self.interrogate(mac)?;
        let expected = &snapshot.firmware_version;
        if &info.profile.firmware_version == expected {
            return Ok(Some(info));
        }
        let image = self.firmware.image(&snapshot.device_type, expected).ok_or_else(|| {
            AbortReason::FirmwareUnavailable { device_type: snapshot.device_type.clone(), version: expected.to_string() }
        })?;
        let path = firmware_path(&expected.to_string());
        let receipt = self.link.put(mac, &path, &image).map_err(|e| AbortReason::TransferFailure(e.to_string()))?;
        if receipt.digest != Digest64::of(&image) {
            return Err(AbortReason::ChecksumMismatch(path));
        }

        let bound = self.config.reboot_bound();
        let deadline = self.clock.now().after(bound);
        loop {
            match self.link.request(mac, MessageBody::Interrogate) {
                Ok(MessageBody::InterrogateReply(info)) => {
                    if &info.profile.firmware_version == expected {
                        return Ok(Some(info));
                    }
                    return Err(AbortReason::VersionMismatchAfterReboot {
                        expected: expected.to_string(),
                        found: info.profile.firmware_version.to_string(),
                    });
                }
                Ok(MessageBody::Rebooting) => {}
                Ok(other) => return Err(AbortReason::Protocol(format!("unexpected {}", other.kind().as_str()))),
                Err(e) if e.is_timeout() => {}
                Err(e) => return Err(link_abort(e)),
            }
            if self.clock.now() >= deadline {
                return Err(AbortReason::RebootTimeout(bound));
            }
            self.clock.sleep(self.config.poll_period / 2);
        }
    }

    fn map_configuration(
        &self,
        _ctx: &mut Ctx<'_>,
        job: &HealingJob,
        snapshot: &ConfigSnapshot,
    ) -> Result<Option<DeviceInfo>, AbortReason> {
        let mac = &job.candidate_mac;
        for file in &snapshot.config_files {
            let path = config_path(&file.name);
            let receipt =
                self.link.put(mac, &path, &file.bytes).map_err(|e| AbortReason::TransferFailure(e.to_string()))?;
            if receipt.digest != file.checksum {
                return Err(AbortReason::ChecksumMismatch(path));
            }
        }
        match self.request(mac, MessageBody::ActivateConfig(snapshot.file_names())) {
            Ok(MessageBody::Ack) => {}
            Ok(other) => return Err(AbortReason::Protocol(format!("unexpected {}", other.kind().as_str()))),
            Err(LinkError::Conduit(ConduitError::NackReceived(r))) => return Err(AbortReason::ActivationRejected(r)),
            Err(e) => return Err(link_abort(e)),
        }
        let info = self.interrogate(mac)?;
        if info.active_config_digest != snapshot.config_digest() {
            return Err(AbortReason::ChecksumMismatch("active configuration".into()));
        }
        Ok(Some(info))
    }

    fn finalize(&mut self, ctx: &mut Ctx<'_>, job: &mut HealingJob, snapshot: &ConfigSnapshot, info: DeviceInfo) {
        let record = ctx.inventory.get_mut(&job.candidate_mac).expect("candidate in inventory");
        record.device_address = Some(snapshot.device_address);
        record.ip_config = Some(snapshot.ip_config);
        record.profile = Some(info.profile);
        record.snapshot_revision = None;
        let discovered_at = record.discovered_at;
        ctx.inventory.set_status(&job.candidate_mac, DeviceStatus::Online);
        ctx.inventory.close_failure(&job.failed_mac);
        ctx.inventory.set_status(&job.failed_mac, DeviceStatus::Retired);
        job.advance(self.clock.now());
        let healed_at = job.timestamp_of(JobStage::Healed).expect("just stamped");
        let elapsed = healed_at.saturating_since(discovered_at);
        info!(job = %job.id, failed = %job.failed_mac, candidate = %job.candidate_mac, ?elapsed, "healed");
        self.event(
            ctx,
            EventKind::Healed { job: job.id, failed: job.failed_mac, candidate: job.candidate_mac, elapsed },
        );
    }

    fn abort(&mut self, ctx: &mut Ctx<'_>, job: &mut HealingJob, reason: AbortReason) {
        warn!(job = %job.id, candidate = %job.candidate_mac, %reason, "healing aborted");
        if let Some(record) = ctx.inventory.get_mut(&job.candidate_mac) {
            if matches!(reason, AbortReason::ConduitTimeout(_)) {
                // Needs a fresh interrogation before it can be matched again.
                record.profile = None;
            }
        }
        ctx.inventory.set_status(&job.candidate_mac, DeviceStatus::Candidate);
        if reason != AbortReason::Interrupted {
            self.exhausted.insert((job.failed_mac, job.candidate_mac));
        }
        job.abort(reason.clone(), self.clock.now());
        self.event(ctx, EventKind::JobAborted { job: job.id, reason });
    }
}
