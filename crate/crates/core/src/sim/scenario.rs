//! Scripted experiments: a fleet description plus timed actions, run
//! against a live orchestrator on loopback.
//!
//! Grammar, one directive per line, `#` comments, shell-style quoting:
//!
//! ```text
//! CLOCK virtual|real
//! PORTS <n>
//! SET <configKey> <value>
//! FIRMWARE <type> <version>
//! DEVICE <mac> type=<t> firmware=<v> [address=<n>] [ip=<a.b.c.d>] [dhcp=on|off]
//!        [rebootDelay=<dur>] [hw.<key>=<v>]... [config.<name>=<text>]...
//! AT <time> attach <port> <mac>
//! AT <time> detach <mac>
//! AT <time> crash <mac>
//! AT <time> corrupt_next_transfer <mac>
//! AT <time> fault <mac> <name> [<arg>]
//! AT <time> set_config <mac> <name> <text>
//! AT <time> switch silent|reject|ok
//! AT <time> advance <dur>
//! ```
//!
//! Times are offsets from the start of the run (`0`, `2s`, `1500ms`). Fault
//! names: `crash_on <set_characteristics|firmware_check|activate_config>`,
//! `ftp_abort <path prefix>`, `boot_old_firmware`, `reject_activation`,
//! `nack_set_characteristics`, `report_failure`, `clear`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use tracing::debug;

use super::device::{CrashPoint, DeviceFaults, DeviceSeed, Interaction};
use super::network::SimNetwork;
use super::switch::SwitchFaults;
use super::SimError;
use crate::clock::{Clock, Timestamp};
use crate::config::OrchestratorConfig;
use crate::digest::Digest64;
use crate::events::{Event, EventKind};
use crate::healing::{HealingJob, JobId, MemoryFirmwareRepository};
use crate::inventory::{Characteristics, DeviceAddress, FirmwareVersion, Inventory, SnmpTableSource};
use crate::orchestrator::{Orchestrator, OrchestratorError};
use crate::snapshot::ConfigSnapshot;
use crate::snmp::{MacAddress, SnmpClient};

const COMMUNITY: &str = "public";
const DEFAULT_PORTS: u32 = 24;

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("line {line}: time {at:?} is earlier than the previous action")]
    TimeGoesBackward { line: usize, at: Duration },
    #[error("line {line}: unknown device {mac}")]
    UnknownDevice { line: usize, mac: MacAddress },
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("simulator: {0}")]
    Sim(#[from] SimError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("at {at:?}: {action}: {source}")]
    Action { at: Duration, action: String, source: SimError },
    #[error("setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Attach { port: u32, mac: MacAddress },
    Detach { mac: MacAddress },
    Crash { mac: MacAddress },
    CorruptNextTransfer { mac: MacAddress },
    Fault { mac: MacAddress, fault: FaultSpec },
    SetConfig { mac: MacAddress, name: String, text: String },
    Switch { silent: bool, reject: bool },
    Advance(Duration),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultSpec {
    CrashOn(CrashPoint),
    FtpAbort(String),
    BootOldFirmware,
    RejectActivation,
    NackSetCharacteristics,
    ReportFailure,
    Clear,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Attach { port, mac } => write!(f, "attach {port} {mac}"),
            Action::Detach { mac } => write!(f, "detach {mac}"),
            Action::Crash { mac } => write!(f, "crash {mac}"),
            Action::CorruptNextTransfer { mac } => write!(f, "corrupt_next_transfer {mac}"),
            Action::Fault { mac, fault } => write!(f, "fault {mac} {fault:?}"),
            Action::SetConfig { mac, name, .. } => write!(f, "set_config {mac} {name}"),
            Action::Switch { silent, reject } => write!(f, "switch silent={silent} reject={reject}"),
            Action::Advance(d) => write!(f, "advance {d:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedAction {
    pub at: Duration,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClockMode {
    #[default]
    Virtual,
    Real,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub clock: ClockMode,
    pub ports: u32,
    /// `SET` lines, applied on top of the scenario defaults.
    pub settings: Vec<(String, String)>,
    pub firmware: Vec<(String, FirmwareVersion)>,
    pub devices: Vec<DeviceSeed>,
    pub script: Vec<TimedAction>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            clock: ClockMode::Virtual,
            ports: DEFAULT_PORTS,
            settings: Vec::new(),
            firmware: Vec::new(),
            devices: Vec::new(),
            script: Vec::new(),
        }
    }
}

impl Scenario {
    /// Orchestrator settings for a run against `endpoint`, before the
    /// snapshot directory is filled in.
    pub fn config(&self, endpoint: &str) -> Result<OrchestratorConfig, String> {
        let mut config = OrchestratorConfig::with_defaults(endpoint, COMMUNITY);
        config.snmp_timeout = Duration::from_millis(200);
        config.snmp_retries = 1;
        for (k, v) in &self.settings {
            config.set(k, v).map_err(|e| format!("{k}: {e}"))?;
        }
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }
}

fn parse_duration(s: &str) -> Result<Duration, String> {
    if s == "0" {
        return Ok(Duration::ZERO);
    }
    humantime::parse_duration(s).map_err(|e| format!("bad duration {s:?}: {e}"))
}

fn parse_mac(s: &str) -> Result<MacAddress, String> {
    s.parse().map_err(|e| format!("bad mac {s:?}: {e}"))
}

fn parse_device(args: &[String]) -> Result<DeviceSeed, String> {
    let (mac, opts) = args.split_first().ok_or("DEVICE needs a mac")?;
    let mac = parse_mac(mac)?;
    let mut fields = BTreeMap::new();
    let mut hw = BTreeMap::new();
    let mut config = Vec::new();
    for opt in opts {
        let (k, v) = opt.split_once('=').ok_or_else(|| format!("expected key=value, got {opt:?}"))?;
        if let Some(param) = k.strip_prefix("hw.") {
            hw.insert(param.to_string(), v.to_string());
        } else if let Some(name) = k.strip_prefix("config.") {
            if name.is_empty() || name.contains('/') {
                return Err(format!("bad config file name {name:?}"));
            }
            config.push((name.to_string(), v.as_bytes().to_vec()));
        } else if fields.insert(k.to_string(), v.to_string()).is_some() {
            return Err(format!("repeated {k}"));
        }
    }
    let ty = fields.remove("type").ok_or("DEVICE needs type=")?;
    let fw = fields.remove("firmware").ok_or("DEVICE needs firmware=")?;
    fw.parse::<FirmwareVersion>().map_err(|e| e.to_string())?;
    if ty.is_empty() {
        return Err("empty device type".into());
    }
    let mut seed = DeviceSeed::new(mac, &ty, &fw);
    seed.profile.hardware_params = hw;
    seed.config = config;
    for (k, v) in fields {
        match k.as_str() {
            "address" => {
                let n: u32 = v.parse().map_err(|_| format!("bad address {v:?}"))?;
                seed.characteristics.device_address = DeviceAddress::new(n).ok_or("address must be nonzero")?;
            }
            "ip" => seed.characteristics.ip_config.ip = v.parse::<Ipv4Addr>().map_err(|e| format!("bad ip {v:?}: {e}"))?,
            "dhcp" => {
                seed.characteristics.ip_config.dhcp_enabled = match v.as_str() {
                    "on" | "true" => true,
                    "off" | "false" => false,
                    _ => return Err(format!("bad dhcp {v:?}")),
                }
            }
            "rebootDelay" => seed.reboot_delay = parse_duration(&v)?,
            other => return Err(format!("unknown device field {other:?}")),
        }
    }
    Ok(seed)
}

fn parse_fault(args: &[String]) -> Result<FaultSpec, String> {
    let name = args.first().ok_or("fault needs a name")?;
    let arg = args.get(1);
    let want_args = |n: usize| if args.len() == n { Ok(()) } else { Err(format!("fault {name}: wrong argument count")) };
    let spec = match name.as_str() {
        "crash_on" => {
            want_args(2)?;
            FaultSpec::CrashOn(arg.expect("checked").parse()?)
        }
        "ftp_abort" => {
            want_args(2)?;
            FaultSpec::FtpAbort(arg.expect("checked").clone())
        }
        "boot_old_firmware" => FaultSpec::BootOldFirmware,
        "reject_activation" => FaultSpec::RejectActivation,
        "nack_set_characteristics" => FaultSpec::NackSetCharacteristics,
        "report_failure" => FaultSpec::ReportFailure,
        "clear" => FaultSpec::Clear,
        other => return Err(format!("unknown fault {other:?}")),
    };
    if !matches!(spec, FaultSpec::CrashOn(_) | FaultSpec::FtpAbort(_)) {
        want_args(1)?;
    }
    Ok(spec)
}

fn parse_action(words: &[String]) -> Result<Action, String> {
    let (verb, args) = words.split_first().ok_or("missing action")?;
    let count = |n: usize| if args.len() == n { Ok(()) } else { Err(format!("{verb} takes {n} argument(s)")) };
    Ok(match verb.as_str() {
        "attach" => {
            count(2)?;
            let port = args[0].parse().map_err(|_| format!("bad port {:?}", args[0]))?;
            Action::Attach { port, mac: parse_mac(&args[1])? }
        }
        "detach" => {
            count(1)?;
            Action::Detach { mac: parse_mac(&args[0])? }
        }
        "crash" => {
            count(1)?;
            Action::Crash { mac: parse_mac(&args[0])? }
        }
        "corrupt_next_transfer" => {
            count(1)?;
            Action::CorruptNextTransfer { mac: parse_mac(&args[0])? }
        }
        "fault" => {
            let (mac, rest) = args.split_first().ok_or("fault needs a mac")?;
            Action::Fault { mac: parse_mac(mac)?, fault: parse_fault(rest)? }
        }
        "set_config" => {
            count(3)?;
            if args[1].is_empty() || args[1].contains('/') {
                return Err(format!("bad config file name {:?}", args[1]));
            }
            Action::SetConfig { mac: parse_mac(&args[0])?, name: args[1].clone(), text: args[2].clone() }
        }
        "switch" => {
            count(1)?;
            match args[0].as_str() {
                "silent" => Action::Switch { silent: true, reject: false },
                "reject" => Action::Switch { silent: false, reject: true },
                "ok" => Action::Switch { silent: false, reject: false },
                other => return Err(format!("unknown switch mode {other:?}")),
            }
        }
        "advance" => {
            count(1)?;
            Action::Advance(parse_duration(&args[0])?)
        }
        other => return Err(format!("unknown action {other:?}")),
    })
}

fn action_mac(action: &Action) -> Option<MacAddress> {
    match action {
        Action::Attach { mac, .. }
        | Action::Detach { mac }
        | Action::Crash { mac }
        | Action::CorruptNextTransfer { mac }
        | Action::Fault { mac, .. }
        | Action::SetConfig { mac, .. } => Some(*mac),
        Action::Switch { .. } | Action::Advance(_) => None,
    }
}

/// Parses and checks a whole script. Nothing runs if any line is bad.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScriptError> {
    let mut scenario = Scenario::default();
    let mut last_at = Duration::ZERO;
    let mut action_lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let syntax = |detail: String| ScriptError::Syntax { line, detail };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let words = shlex::split(trimmed).ok_or_else(|| syntax("unbalanced quotes".into()))?;
        let (directive, args) = words.split_first().expect("non-empty line");
        match directive.as_str() {
            "CLOCK" => {
                scenario.clock = match args {
                    [m] if m == "virtual" => ClockMode::Virtual,
                    [m] if m == "real" => ClockMode::Real,
                    _ => return Err(syntax("CLOCK takes virtual or real".into())),
                }
            }
            "PORTS" => {
                scenario.ports = match args {
                    [n] => n.parse().ok().filter(|&n| n > 0).ok_or_else(|| syntax(format!("bad port count {n:?}")))?,
                    _ => return Err(syntax("PORTS takes one number".into())),
                }
            }
            "SET" => match args {
                [k, v] => scenario.settings.push((k.clone(), v.clone())),
                _ => return Err(syntax("SET takes a key and a value".into())),
            },
            "FIRMWARE" => match args {
                [ty, v] => {
                    let v = v.parse().map_err(|e: crate::inventory::VersionParseError| syntax(e.to_string()))?;
                    scenario.firmware.push((ty.clone(), v));
                }
                _ => return Err(syntax("FIRMWARE takes a type and a version".into())),
            },
            "DEVICE" => {
                let seed = parse_device(args).map_err(syntax)?;
                if scenario.devices.iter().any(|d| d.mac == seed.mac) {
                    return Err(syntax(format!("device {} declared twice", seed.mac)));
                }
                scenario.devices.push(seed);
            }
            "AT" => {
                let (at, rest) = args.split_first().ok_or_else(|| syntax("AT needs a time".into()))?;
                let at = parse_duration(at).map_err(syntax)?;
                if at < last_at {
                    return Err(ScriptError::TimeGoesBackward { line, at });
                }
                last_at = at;
                let action = parse_action(rest).map_err(syntax)?;
                action_lines.push(line);
                scenario.script.push(TimedAction { at, action });
            }
            other => return Err(syntax(format!("unknown directive {other:?}"))),
        }
    }
    let known: BTreeSet<MacAddress> = scenario.devices.iter().map(|d| d.mac).collect();
    for (t, line) in scenario.script.iter().zip(action_lines) {
        if let Some(mac) = action_mac(&t.action) {
            if !known.contains(&mac) {
                return Err(ScriptError::UnknownDevice { line, mac });
            }
        }
    }
    if let Err(detail) = scenario.config("127.0.0.1:161") {
        return Err(ScriptError::Syntax { line: 0, detail });
    }
    Ok(scenario)
}

/// One completed heal, timed from the moment the replacement was attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HealRecord {
    pub job: JobId,
    pub failed: MacAddress,
    pub candidate: MacAddress,
    pub port: Option<u32>,
    pub device_type: String,
    /// Clock time from the candidate's attach to the healed event.
    pub simulated: Duration,
    /// Host time over the same span.
    pub wall: Duration,
}

/// What a device ended up with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceOutcome {
    pub characteristics: Characteristics,
    pub device_type: String,
    pub firmware_version: FirmwareVersion,
    pub active_config_digest: Digest64,
    pub firmware_bytes: u64,
    pub config_bytes: u64,
    pub log: Vec<Interaction>,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub clock: ClockMode,
    pub events: Vec<Event>,
    pub heals: Vec<HealRecord>,
    pub inventory: Inventory,
    pub jobs: Vec<HealingJob>,
    pub devices: BTreeMap<MacAddress, DeviceOutcome>,
    /// Every attach the script performed, in order.
    pub attachments: Vec<(Duration, u32, MacAddress)>,
    /// Latest stored snapshot per device at the end of the run.
    pub snapshots: BTreeMap<MacAddress, ConfigSnapshot>,
    pub rounds: u64,
    pub simulated: Duration,
    pub wall: Duration,
}

impl ScenarioReport {
    pub fn event_lines(&self) -> Vec<String> {
        self.events.iter().map(|e| e.to_string()).collect()
    }

    /// Event lines without their timestamps.
    pub fn event_shape(&self) -> Vec<String> {
        self.event_lines().into_iter().map(|l| l.split_once(' ').map(|(_, r)| r.to_string()).unwrap_or(l)).collect()
    }

    pub fn healed_count(&self) -> usize {
        self.events.iter().filter(|e| matches!(e.kind, EventKind::Healed { .. })).count()
    }

    /// Per-heal elapsed times as a results table:
    /// device type, quantity, time.
    pub fn render_table(&self, with_wall: bool) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<4} {:<20} {:<9} {:<17} {:<17} {:>4} {:>13}", "#", "Device type", "Quantity", "Failed", "Replacement", "Port", "Elapsed (s)");
        if with_wall {
            let _ = write!(out, " {:>10}", "Wall (s)");
        }
        out.push('\n');
        let mut quantities: BTreeMap<&str, usize> = BTreeMap::new();
        for h in &self.heals {
            *quantities.entry(h.device_type.as_str()).or_default() += 1;
        }
        for (i, h) in self.heals.iter().enumerate() {
            let port = h.port.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
            let _ = write!(
                out,
                "{:<4} {:<20} {:<9} {:<17} {:<17} {:>4} {:>13.3}",
                i + 1,
                h.device_type,
                quantities[h.device_type.as_str()],
                h.failed.to_string(),
                h.candidate.to_string(),
                port,
                h.simulated.as_secs_f64()
            );
            if with_wall {
                let _ = write!(out, " {:>10.3}", h.wall.as_secs_f64());
            }
            out.push('\n');
        }
        let mix: Vec<String> = quantities.iter().map(|(ty, n)| format!("{ty} (Quantity = {n})")).collect();
        let slowest = self.heals.iter().map(|h| h.simulated).max().unwrap_or_default();
        let _ = writeln!(
            out,
            "devices: {}; {} healed of {} jobs; all restored {:.3}s after attach",
            if mix.is_empty() { "none".to_string() } else { mix.join(", ") },
            self.heals.len(),
            self.jobs.len(),
            slowest.as_secs_f64()
        );
        out
    }
}

fn apply(net: &SimNetwork, action: &Action) -> Result<(), SimError> {
    match action {
        Action::Attach { port, mac } => net.attach(*port, *mac),
        Action::Detach { mac } => net.detach(mac).map(|_| ()),
        Action::Crash { mac } => net.crash(mac),
        Action::CorruptNextTransfer { mac } => {
            net.device(mac)?.state().faults.corrupt_next_transfer = true;
            Ok(())
        }
        Action::Fault { mac, fault } => {
            let device = net.device(mac)?;
            let mut state = device.state();
            let faults = &mut state.faults;
            match fault {
                FaultSpec::CrashOn(p) => faults.crash_on = Some(*p),
                FaultSpec::FtpAbort(prefix) => faults.ftp_abort_prefix = Some(prefix.clone()),
                FaultSpec::BootOldFirmware => faults.boot_old_firmware = true,
                FaultSpec::RejectActivation => faults.reject_activation = true,
                FaultSpec::NackSetCharacteristics => faults.nack_set_characteristics = true,
                FaultSpec::ReportFailure => faults.report_failure = true,
                FaultSpec::Clear => *faults = DeviceFaults::default(),
            }
            Ok(())
        }
        Action::SetConfig { mac, name, text } => {
            net.device(mac)?.state().edit_config(name, text.as_bytes().to_vec());
            Ok(())
        }
        Action::Switch { silent, reject } => {
            let mut faults: SwitchFaults = net.switch.faults();
            faults.silent = *silent;
            faults.reject_all = *reject;
            net.switch.set_faults(faults);
            Ok(())
        }
        Action::Advance(_) => Ok(()),
    }
}

/// Runs the script against a fresh simulator and orchestrator. Rounds run
/// every poll period; actions due by a round's start are applied before it.
/// After the last action the run continues for `missThreshold + 3` rounds,
/// or longer if an `advance` asks for it.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioReport, ScenarioError> {
    let started = Instant::now();
    let clock = match scenario.clock {
        ClockMode::Virtual => Clock::virtual_clock(),
        ClockMode::Real => Clock::real(),
    };
    let mut net = SimNetwork::start(COMMUNITY, Default::default(), scenario.ports, clock.clone())?;
    for seed in &scenario.devices {
        net.add_device(seed.clone())?;
    }
    let endpoint = net.switch.endpoint().to_string();
    let mut config = scenario.config(&endpoint).map_err(ScenarioError::Setup)?;
    net.switch.set_faults(SwitchFaults::default());
    let tables = config.table_roots.clone();
    let snapshot_dir = tempfile::tempdir().map_err(|e| ScenarioError::Setup(e.to_string()))?;
    config.snapshot_dir = snapshot_dir.path().to_path_buf();
    config.event_log = None;
    config.state_file = None;

    let firmware = Arc::new(MemoryFirmwareRepository::default());
    for (ty, v) in &scenario.firmware {
        firmware.insert(ty, v.clone(), super::firmware_image(ty, v));
    }
    let client = SnmpClient::connect(&endpoint, COMMUNITY, config.snmp_options())
        .map_err(|e| ScenarioError::Setup(e.to_string()))?;
    let source = Box::new(SnmpTableSource::new(client, tables));
    let period = config.poll_period;
    let settle_rounds = u64::from(config.miss_threshold) + 3;
    let mut orchestrator = Orchestrator::new(config, clock.clone(), source, Arc::new(net.directory()), firmware)?;

    let origin = clock.now();
    let mut horizon = scenario.script.last().map(|t| t.at).unwrap_or(Duration::ZERO);
    for t in &scenario.script {
        if let Action::Advance(d) = t.action {
            horizon = horizon.max(t.at + d);
        }
    }
    let end = origin.after(horizon).after(period * settle_rounds as u32);

    let mut pending = scenario.script.iter().peekable();
    let mut events = Vec::new();
    let mut attach_times: BTreeMap<MacAddress, (Timestamp, Instant)> = BTreeMap::new();
    let mut attachments = Vec::new();
    let mut heals = Vec::new();
    let mut rounds = 0u64;
    let mut next_round = origin;
    loop {
        let now = clock.now();
        if now > end && pending.peek().is_none() {
            break;
        }
        while let Some(t) = pending.peek() {
            if origin.after(t.at) > clock.now() {
                break;
            }
            debug!(at = ?t.at, action = %t.action, "scenario action");
            apply(&net, &t.action).map_err(|source| ScenarioError::Action {
                at: t.at,
                action: t.action.to_string(),
                source,
            })?;
            if let Action::Attach { port, mac } = t.action {
                attach_times.insert(mac, (clock.now(), Instant::now()));
                attachments.push((t.at, port, mac));
            }
            pending.next();
        }
        if clock.now() >= next_round {
            let produced = orchestrator.round()?;
            rounds += 1;
            for e in &produced {
                if let EventKind::Healed { job, failed, candidate, .. } = &e.kind {
                    let (sim_at, wall_at) = attach_times.get(candidate).copied().unwrap_or((origin, started));
                    let record = orchestrator.inventory().get(candidate);
                    heals.push(HealRecord {
                        job: *job,
                        failed: *failed,
                        candidate: *candidate,
                        port: record.and_then(|r| r.port),
                        device_type: record
                            .and_then(|r| r.profile.as_ref())
                            .map(|p| p.device_type.clone())
                            .unwrap_or_default(),
                        simulated: e.at.saturating_since(sim_at),
                        wall: wall_at.elapsed(),
                    });
                }
            }
            events.extend(produced);
            next_round = next_round.after(period);
            if clock.now() > next_round {
                next_round = clock.now();
            }
        }
        let wake = match pending.peek() {
            Some(t) => next_round.min(origin.after(t.at)),
            None => next_round,
        };
        clock.sleep_until(wake.max(clock.now()));
    }

    let mut devices = BTreeMap::new();
    for d in net.devices() {
        let s = d.state();
        devices.insert(
            d.mac(),
            DeviceOutcome {
                characteristics: s.characteristics,
                device_type: s.profile.device_type.clone(),
                firmware_version: s.profile.firmware_version.clone(),
                active_config_digest: s.active_config_digest,
                firmware_bytes: s.firmware_bytes(),
                config_bytes: s.config_bytes(),
                log: s.log.clone(),
            },
        );
    }
    let mut snapshots = BTreeMap::new();
    for mac in devices.keys() {
        if let Ok(loaded) = orchestrator.store().load_latest(mac) {
            snapshots.insert(*mac, loaded.snapshot);
        }
    }
    Ok(ScenarioReport {
        clock: scenario.clock,
        events,
        heals,
        inventory: orchestrator.inventory().clone(),
        jobs: orchestrator.jobs().to_vec(),
        devices,
        attachments,
        snapshots,
        rounds,
        simulated: clock.now().saturating_since(origin),
        wall: started.elapsed(),
    })
}
