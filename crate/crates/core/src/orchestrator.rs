//! The control loop: poll, classify, enroll, heal, snapshot. Also the
//! persisted daemon state and the local status channel.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::clock::{Clock, Timestamp};
use crate::config::OrchestratorConfig;
use crate::events::{Event, EventKind, EventLog};
use crate::healing::{
    DirFirmwareRepository, FirmwareRepository, HealingEngine, HealingJob, MemoryFirmwareRepository,
};
use crate::inventory::{
    classify_failures, poll_once, update_candidates, DeviceStatus, Inventory, MonitorState, SnmpTableSource,
    TableSource,
};
use crate::link::{config_path, DeviceDirectory, DeviceLink, FtpClient, StaticDirectory};
use crate::snapshot::{ConfigFile, ConfigSnapshot, SnapshotError, SnapshotStore};
use crate::snmp::{MacAddress, SnmpClient, SwitchLookupTable};

/// Events kept for the status report.
const RECENT_EVENTS: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("snapshot storage: {0}")]
    Storage(#[from] SnapshotError),
    #[error("event log: {0}")]
    EventLog(std::io::Error),
    #[error("state file: {0}")]
    State(String),
    #[error("setup: {0}")]
    Setup(String),
}

/// Everything that survives a restart.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersistedState {
    pub monitor: MonitorState,
    pub inventory: Inventory,
    pub jobs: Vec<HealingJob>,
    pub observed_revision: BTreeMap<MacAddress, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSummary {
    pub id: String,
    pub failed: MacAddress,
    pub candidate: MacAddress,
    pub stage: String,
    pub stage_timestamps: Vec<(String, Timestamp)>,
    pub failure_reason: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusReport {
    pub generation: u64,
    pub switch_reachable: bool,
    pub counts: BTreeMap<String, usize>,
    pub inventory_size: usize,
    pub open_failures: Vec<(MacAddress, String, u64)>,
    pub jobs: Vec<JobSummary>,
    pub recent_events: Vec<String>,
}

impl StatusReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "generation {}", self.generation);
        let _ = writeln!(out, "switch {}", if self.switch_reachable { "reachable" } else { "unreachable" });
        let _ = writeln!(out, "devices {}", self.inventory_size);
        for (status, n) in &self.counts {
            let _ = writeln!(out, "  {status} {n}");
        }
        let _ = writeln!(out, "open failures {}", self.open_failures.len());
        for (mac, cause, generation) in &self.open_failures {
            let _ = writeln!(out, "  {mac} {cause} since generation {generation}");
        }
        let _ = writeln!(out, "jobs {}", self.jobs.len());
        for j in &self.jobs {
            let _ = write!(out, "  {} {} -> {} {}", j.id, j.failed, j.candidate, j.stage);
            if let Some(r) = &j.failure_reason {
                let _ = write!(out, " ({r})");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "recent events {}", self.recent_events.len());
        for e in &self.recent_events {
            let _ = writeln!(out, "  {e}");
        }
        out
    }
}

/// Published after every round for the status channel.
#[derive(Debug, Clone, Default)]
pub struct StatusView {
    pub report: StatusReport,
    pub table_text: String,
}

pub struct Orchestrator {
    config: OrchestratorConfig,
    clock: Clock,
    monitor: MonitorState,
    inventory: Inventory,
    engine: HealingEngine,
    store: SnapshotStore,
    link: DeviceLink,
    source: Box<dyn TableSource + Send>,
    observed_revision: BTreeMap<MacAddress, u64>,
    log: Option<EventLog>,
    recent: VecDeque<Event>,
    shutdown: Arc<AtomicBool>,
    view: Arc<RwLock<StatusView>>,
}

impl Orchestrator {
    pub fn new(
        config: OrchestratorConfig,
        clock: Clock,
        source: Box<dyn TableSource + Send>,
        directory: Arc<dyn DeviceDirectory>,
        firmware: Arc<dyn FirmwareRepository>,
    ) -> Result<Self, OrchestratorError> {
        let store = SnapshotStore::open(&config.snapshot_dir, config.history_depth)?;
        let ftp = FtpClient::new(config.ftp_connect_timeout, FtpClient::default().io_timeout);
        let link = DeviceLink::new(directory, config.conduit_timeout, ftp, clock.clone());
        let engine = HealingEngine::new(config.engine(), link.clone(), firmware);
        let log = match &config.event_log {
            Some(path) => Some(EventLog::open(path).map_err(OrchestratorError::EventLog)?),
            None => None,
        };
        let mut orchestrator = Orchestrator {
            monitor: MonitorState::new(config.monitor()),
            config,
            clock,
            inventory: Inventory::new(),
            engine,
            store,
            link,
            source,
            observed_revision: BTreeMap::new(),
            log,
            recent: VecDeque::new(),
            shutdown: Arc::new(AtomicBool::new(false)),
            view: Arc::new(RwLock::new(StatusView::default())),
        };
        orchestrator.restore()?;
        orchestrator.publish();
        Ok(orchestrator)
    }

    /// Wiring for a live installation: SNMP to the configured switch,
    /// device endpoints from the device map, images from the firmware dir.
    pub fn from_config(config: OrchestratorConfig) -> Result<Self, OrchestratorError> {
        let client = SnmpClient::connect(&config.switch_endpoint, &config.community, config.snmp_options())
            .map_err(|e| OrchestratorError::Setup(e.to_string()))?;
        let source = Box::new(SnmpTableSource::new(client, config.table_roots.clone()));
        let directory: Arc<dyn DeviceDirectory> = match &config.device_map {
            Some(path) => Arc::new(StaticDirectory::load(path).map_err(|e| OrchestratorError::Setup(format!("{}: {e}", path.display())))?),
            None => Arc::new(StaticDirectory::default()),
        };
        let firmware: Arc<dyn FirmwareRepository> = match &config.firmware_dir {
            Some(dir) => Arc::new(DirFirmwareRepository::new(dir)),
            None => Arc::new(MemoryFirmwareRepository::default()),
        };
        Self::new(config, Clock::real(), source, directory, firmware)
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn inventory(&self) -> &Inventory {
        &self.inventory
    }

    pub fn jobs(&self) -> &[HealingJob] {
        self.engine.jobs()
    }

    pub fn generation(&self) -> u64 {
        self.monitor.generation
    }

    pub fn last_table(&self) -> &SwitchLookupTable {
        &self.monitor.previous
    }

    pub fn store(&self) -> &SnapshotStore {
        &self.store
    }

    pub fn shutdown_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.shutdown)
    }

    pub fn status_view(&self) -> Arc<RwLock<StatusView>> {
        Arc::clone(&self.view)
    }

    fn restore(&mut self) -> Result<(), OrchestratorError> {
        let Some(path) = self.config.state_file.clone() else { return Ok(()) };
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(OrchestratorError::State(format!("{}: {e}", path.display()))),
        };
        let state: PersistedState =
            serde_json::from_str(&text).map_err(|e| OrchestratorError::State(format!("{}: {e}", path.display())))?;
        let mut monitor = state.monitor;
        monitor.config = self.config.monitor();
        self.monitor = monitor;
        self.inventory = state.inventory;
        self.observed_revision = state.observed_revision;
        let interrupted = self.engine.restore_jobs(state.jobs, &mut self.inventory);
        info!(generation = self.monitor.generation, devices = self.inventory.len(), "state restored");
        let mut events = Vec::new();
        for job in interrupted {
            events.push(self.event(EventKind::JobAborted {
                job: job.id,
                reason: job.failure_reason.clone().expect("aborted job has a reason"),
            }));
        }
        self.record(&events)?;
        Ok(())
    }

    fn persist(&self) -> Result<(), OrchestratorError> {
        let Some(path) = &self.config.state_file else { return Ok(()) };
        let state = PersistedState {
            monitor: self.monitor.clone(),
            inventory: self.inventory.clone(),
            jobs: self.engine.jobs().to_vec(),
            observed_revision: self.observed_revision.clone(),
        };
        let text = serde_json::to_string_pretty(&state).map_err(|e| OrchestratorError::State(e.to_string()))?;
        write_atomically(path, text.as_bytes()).map_err(|e| OrchestratorError::State(format!("{}: {e}", path.display())))
    }

    fn event(&self, kind: EventKind) -> Event {
        Event { generation: self.monitor.generation, at: self.clock.now(), kind }
    }

    fn record(&mut self, events: &[Event]) -> Result<(), OrchestratorError> {
        for e in events {
            debug!("{e}");
            if let Some(log) = &mut self.log {
                log.append(e).map_err(OrchestratorError::EventLog)?;
            }
            if self.recent.len() == RECENT_EVENTS {
                self.recent.pop_front();
            }
            self.recent.push_back(e.clone());
        }
        if let Some(log) = &mut self.log {
            log.flush().map_err(OrchestratorError::EventLog)?;
        }
        Ok(())
    }

    pub fn status(&self) -> StatusReport {
        StatusReport {
            generation: self.monitor.generation,
            switch_reachable: self.monitor.switch_reachable,
            counts: self.inventory.counts_by_status().into_iter().map(|(s, n)| (s.to_string(), n)).collect(),
            inventory_size: self.inventory.len(),
            open_failures: self
                .inventory
                .open_failures()
                .into_iter()
                .map(|f| (f.mac, f.cause.as_str().to_string(), f.detected_at_generation))
                .collect(),
            jobs: self
                .engine
                .jobs()
                .iter()
                .map(|j| JobSummary {
                    id: j.id.to_string(),
                    failed: j.failed_mac,
                    candidate: j.candidate_mac,
                    stage: j.stage().as_str().to_string(),
                    stage_timestamps: j.stage_timestamps().iter().map(|(s, t)| (s.as_str().to_string(), *t)).collect(),
                    failure_reason: j.failure_reason.as_ref().map(|r| r.to_string()),
                })
                .collect(),
            recent_events: self.recent.iter().map(|e| e.to_string()).collect(),
        }
    }

    fn publish(&self) {
        let view = StatusView { report: self.status(), table_text: self.monitor.previous.canonical_text() };
        *self.view.write().expect("status view poisoned") = view;
    }

    /// One full monitoring and healing round. Returns the events it produced.
    pub fn round(&mut self) -> Result<Vec<Event>, OrchestratorError> {
        let mut events = Vec::new();
        match poll_once(&mut self.monitor, self.source.as_mut(), &self.clock) {
            Err(skipped) => {
                debug!(error = %skipped.error, "poll skipped");
                if skipped.switch_now_unreachable {
                    events.push(self.event(EventKind::SwitchUnreachable {
                        consecutive_failures: skipped.consecutive_failures,
                    }));
                }
            }
            Ok(result) => {
                if result.switch_recovered {
                    events.push(self.event(EventKind::SwitchRecovered));
                }
                let table = result.table;
                let reported = if self.config.heartbeat { self.heartbeats(&table, &mut events) } else { BTreeSet::new() };
                let now = self.clock.now();
                let classified =
                    classify_failures(&mut self.inventory, &table, &reported, self.config.miss_threshold, now);
                for f in classified.events {
                    events.push(self.event(EventKind::DeviceFailed { mac: f.mac, cause: f.cause }));
                }
                let update = update_candidates(&mut self.inventory, &result.diff, now);
                for (port, mac) in update.returned {
                    events.push(self.event(EventKind::DeviceReturned { mac, port }));
                }
                for (port, mac) in update.enrolled {
                    events.push(self.event(EventKind::DeviceDiscovered { mac, port }));
                }
                for (port, mac) in update.candidates {
                    events.push(self.event(EventKind::CandidateEnrolled { mac, port }));
                }
                for mac in update.forgotten {
                    self.engine.forget_candidate(&mac);
                    self.observed_revision.remove(&mac);
                    events.push(self.event(EventKind::CandidateForgotten { mac }));
                }
                self.interrogate_unknown(&table, &mut events);
                let generation = self.monitor.generation;
                events.extend(self.engine.run_jobs(&mut self.inventory, &self.store, generation, &self.shutdown));
                self.snapshots(&table, &mut events)?;
            }
        }
        self.record(&events)?;
        self.persist()?;
        self.publish();
        Ok(events)
    }

    /// Heartbeats online and reported-failed devices that are in the table.
    /// Returns the online ones that should be reported failed.
    fn heartbeats(&mut self, table: &SwitchLookupTable, events: &mut Vec<Event>) -> BTreeSet<MacAddress> {
        let mut reported = BTreeSet::new();
        let targets: Vec<(MacAddress, DeviceStatus)> = self
            .inventory
            .records()
            .filter(|r| matches!(r.status(), DeviceStatus::Online | DeviceStatus::ReportedFailed))
            .filter(|r| table.contains(&r.mac))
            .map(|r| (r.mac, r.status()))
            .collect();
        for (mac, status) in targets {
            match self.link.heartbeat(&mac) {
                Ok(Some(hb)) => {
                    self.observed_revision.insert(mac, hb.config_revision);
                    match (status, hb.healthy) {
                        (DeviceStatus::Online, false) => {
                            reported.insert(mac);
                        }
                        (DeviceStatus::ReportedFailed, true) => {
                            self.inventory.close_failure(&mac);
                            self.inventory.set_status(&mac, DeviceStatus::Online);
                            let port = table.port_of(&mac).expect("filtered on presence");
                            events.push(self.event(EventKind::DeviceReturned { mac, port }));
                        }
                        _ => {}
                    }
                }
                Ok(None) => {}
                Err(e) if e.is_timeout() => {
                    if status == DeviceStatus::Online {
                        reported.insert(mac);
                    }
                }
                Err(e) => {
                    warn!(%mac, error = %e, "heartbeat failed");
                    events.push(self.event(EventKind::Diagnostic { detail: format!("heartbeat {mac}: {e}") }));
                }
            }
        }
        reported
    }

    /// Fills in characteristics and profiles of present devices that do not
    /// have them yet.
    fn interrogate_unknown(&mut self, table: &SwitchLookupTable, events: &mut Vec<Event>) {
        let targets: Vec<(MacAddress, DeviceStatus)> = self
            .inventory
            .records()
            .filter(|r| matches!(r.status(), DeviceStatus::Online | DeviceStatus::Candidate))
            .filter(|r| r.profile.is_none() && table.contains(&r.mac))
            .map(|r| (r.mac, r.status()))
            .collect();
        for (mac, status) in targets {
            let info = match self.link.interrogate(&mac) {
                Ok(info) => info,
                Err(e) => {
                    debug!(%mac, error = %e, "interrogation failed");
                    continue;
                }
            };
            self.observed_revision.insert(mac, info.config_revision);
            if status == DeviceStatus::Online {
                let address = info.characteristics.device_address;
                if let Some(holder) = self.inventory.address_holder(address, &[mac]) {
                    let detail = format!("{mac} reports device address {address} already held by {}", holder.mac);
                    events.push(self.event(EventKind::Diagnostic { detail }));
                } else {
                    let record = self.inventory.get_mut(&mac).expect("listed above");
                    record.device_address = Some(address);
                    record.ip_config = Some(info.characteristics.ip_config);
                }
            }
            self.inventory.get_mut(&mac).expect("listed above").profile = Some(info.profile);
        }
    }

    /// Snapshots online devices that have none yet or whose configuration
    /// revision moved since the last one.
    fn snapshots(&mut self, table: &SwitchLookupTable, events: &mut Vec<Event>) -> Result<(), OrchestratorError> {
        let due: Vec<MacAddress> = self
            .inventory
            .with_status(DeviceStatus::Online)
            .filter(|r| table.contains(&r.mac) && r.device_address.is_some() && r.profile.is_some())
            .filter(|r| match (r.snapshot_revision, self.observed_revision.get(&r.mac)) {
                (None, _) => true,
                (Some(taken), Some(seen)) => taken != *seen,
                (Some(_), None) => false,
            })
            .map(|r| r.mac)
            .collect();
        for mac in due {
            if self.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let info = match self.link.interrogate(&mac) {
                Ok(info) => info,
                Err(e) => {
                    debug!(%mac, error = %e, "snapshot interrogation failed");
                    continue;
                }
            };
            let mut files = Vec::with_capacity(info.config_names.len());
            let mut complete = true;
            for name in &info.config_names {
                match self.link.get(&mac, &config_path(name)) {
                    Ok(bytes) => files.push(ConfigFile::new(name.clone(), bytes)),
                    Err(e) => {
                        events.push(self.event(EventKind::Diagnostic { detail: format!("snapshot {mac}: {e}") }));
                        complete = false;
                        break;
                    }
                }
            }
            if !complete {
                continue;
            }
            let revision = info.config_revision;
            let snapshot = match ConfigSnapshot::new(
                mac,
                info.characteristics,
                info.profile.clone(),
                files,
                self.monitor.generation,
            ) {
                Ok(s) => s,
                Err(e) => {
                    events.push(self.event(EventKind::Diagnostic { detail: format!("snapshot {mac}: {e}") }));
                    continue;
                }
            };
            self.store.save(&snapshot)?;
            let record = self.inventory.get_mut(&mac).expect("listed above");
            record.snapshot_revision = Some(revision);
            record.profile = Some(info.profile);
            self.observed_revision.insert(mac, revision);
            events.push(self.event(EventKind::SnapshotSaved { mac, revision }));
        }
        Ok(())
    }

    /// Rounds every poll period until `shutdown` (or the orchestrator's own
    /// handle) is set.
    pub fn run(&mut self, shutdown: &AtomicBool) -> Result<(), OrchestratorError> {
        let period = self.config.poll_period;
        let mut next = self.clock.now();
        let stop = |o: &Self| shutdown.load(Ordering::SeqCst) || o.shutdown.load(Ordering::SeqCst);
        while !stop(self) {
            self.round()?;
            next = next.after(period);
            let now = self.clock.now();
            if now > next {
                next = now;
            }
            while !stop(self) && self.clock.now() < next {
                let left = next.saturating_since(self.clock.now());
                self.clock.sleep(left.min(Duration::from_millis(50)));
            }
        }
        self.shutdown.store(true, Ordering::SeqCst);
        info!("shutting down");
        if let Some(log) = &mut self.log {
            log.flush().map_err(OrchestratorError::EventLog)?;
        }
        self.persist()
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(tmp, path)
}

/// Serves `STATUS` and `TABLE` requests, one line in and a text reply out
/// per connection.
pub struct StatusServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl StatusServer {
    pub fn start(endpoint: SocketAddr, view: Arc<RwLock<StatusView>>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(endpoint)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let worker = {
            let stop = Arc::clone(&stop);
            std::thread::Builder::new().name("status".into()).spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        return;
                    }
                    if let Ok(stream) = stream {
                        let _ = answer_status(stream, &view);
                    }
                }
            })?
        };
        Ok(StatusServer { addr, stop, worker: Some(worker) })
    }

    pub fn endpoint(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for StatusServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn answer_status(stream: TcpStream, view: &RwLock<StatusView>) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(2)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let reply = {
        let v = view.read().expect("status view poisoned");
        match line.trim().to_ascii_uppercase().as_str() {
            "STATUS" => v.report.render(),
            "TABLE" => v.table_text.clone(),
            "STATUS JSON" => serde_json::to_string(&v.report).unwrap_or_default() + "\n",
            other => format!("ERR unknown request {other:?}\n"),
        }
    };
    let mut stream = stream;
    stream.write_all(reply.as_bytes())
}

/// Client side of the status channel.
pub fn query_status(endpoint: SocketAddr, request: &str, timeout: Duration) -> std::io::Result<String> {
    let mut stream = TcpStream::connect_timeout(&endpoint, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.write_all(format!("{request}\n").as_bytes())?;
    let mut out = String::new();
    std::io::Read::read_to_string(&mut stream, &mut out)?;
    Ok(out)
}
