//! Orchestrator configuration: a flat `key = value` file with camelCase
//! keys. `#` starts a comment. Unknown and repeated keys are errors.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::healing::{EngineConfig, MatchPolicy};
use crate::inventory::MonitorConfig;
use crate::snapshot::DEFAULT_HISTORY_DEPTH;
use crate::snmp::{Oid, SnmpClientOptions, TableRoots};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("{key}: {detail}")]
    Validation { key: &'static str, detail: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub switch_endpoint: String,
    pub community: String,
    pub table_roots: TableRoots,
    pub poll_period: Duration,
    pub miss_threshold: u32,
    pub stage_retries: u32,
    pub stage_backoff: Duration,
    pub reboot_bound_multiplier: u32,
    pub snapshot_dir: PathBuf,
    pub history_depth: usize,
    pub allow_cross_port: bool,
    pub conduit_timeout: Duration,
    pub ftp_connect_timeout: Duration,
    pub snmp_timeout: Duration,
    pub snmp_retries: u32,
    pub switch_failure_threshold: u32,
    /// Heartbeat devices every round; a silent or unhealthy device is
    /// reported failed.
    pub heartbeat: bool,
    pub event_log: Option<PathBuf>,
    pub state_file: Option<PathBuf>,
    pub status_endpoint: SocketAddr,
    pub device_map: Option<PathBuf>,
    pub firmware_dir: Option<PathBuf>,
    pub required_hardware_params: Option<BTreeSet<String>>,
}

pub const KEYS: &[&str] = &[
    "switchEndpoint",
    "community",
    "tableRoots",
    "pollPeriod",
    "missThreshold",
    "stageRetries",
    "stageBackoff",
    "rebootBoundMultiplier",
    "snapshotDir",
    "historyDepth",
    "allowCrossPort",
    "conduitTimeout",
    "ftpConnectTimeout",
    "snmpTimeout",
    "snmpRetries",
    "switchFailureThreshold",
    "heartbeat",
    "eventLog",
    "stateFile",
    "statusEndpoint",
    "deviceMap",
    "firmwareDir",
    "requiredHardwareParams",
];

pub const DEFAULT_STATUS_ENDPOINT: &str = "127.0.0.1:7161";

impl OrchestratorConfig {
    pub fn with_defaults(switch_endpoint: impl Into<String>, community: impl Into<String>) -> Self {
        OrchestratorConfig {
            switch_endpoint: switch_endpoint.into(),
            community: community.into(),
            table_roots: TableRoots::default(),
            poll_period: Duration::from_secs(2),
            miss_threshold: 3,
            stage_retries: 3,
            stage_backoff: Duration::from_secs(1),
            reboot_bound_multiplier: 10,
            snapshot_dir: PathBuf::from("snapshots"),
            history_depth: DEFAULT_HISTORY_DEPTH,
            allow_cross_port: false,
            conduit_timeout: Duration::from_secs(2),
            ftp_connect_timeout: Duration::from_secs(5),
            snmp_timeout: Duration::from_secs(1),
            snmp_retries: 2,
            switch_failure_threshold: 3,
            heartbeat: true,
            event_log: None,
            state_file: None,
            status_endpoint: DEFAULT_STATUS_ENDPOINT.parse().expect("valid default"),
            device_map: None,
            firmware_dir: None,
            required_hardware_params: None,
        }
    }

    /// Sets one key from its text form. Range checks happen in `validate`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let duration = |v: &str| humantime::parse_duration(v).map_err(|e| format!("bad duration {v:?}: {e}"));
        let int = |v: &str| v.parse::<u32>().map_err(|_| format!("bad integer {v:?}"));
        let boolean = |v: &str| match v {
            "true" | "yes" | "on" => Ok(true),
            "false" | "no" | "off" => Ok(false),
            _ => Err(format!("bad boolean {v:?}")),
        };
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key {
            "switchEndpoint" => self.switch_endpoint = value.to_string(),
            "community" => self.community = value.to_string(),
            "tableRoots" => {
                let roots = value
                    .split(',')
                    .map(|r| r.trim().parse::<Oid>().map_err(|e| format!("bad oid {r:?}: {e}")))
                    .collect::<Result<Vec<_>, _>>()?;
                let [mac_table, port_table, interface_table] = <[Oid; 3]>::try_from(roots)
                    .map_err(|v| format!("expected 3 comma-separated oids, got {}", v.len()))?;
                self.table_roots = TableRoots { mac_table, port_table, interface_table };
            }
            "pollPeriod" => self.poll_period = duration(value)?,
            "missThreshold" => self.miss_threshold = int(value)?,
            "stageRetries" => self.stage_retries = int(value)?,
            "stageBackoff" => self.stage_backoff = duration(value)?,
            "rebootBoundMultiplier" => self.reboot_bound_multiplier = int(value)?,
            "snapshotDir" => self.snapshot_dir = PathBuf::from(value),
            "historyDepth" => self.history_depth = int(value)? as usize,
            "allowCrossPort" => self.allow_cross_port = boolean(value)?,
            "conduitTimeout" => self.conduit_timeout = duration(value)?,
            "ftpConnectTimeout" => self.ftp_connect_timeout = duration(value)?,
            "snmpTimeout" => self.snmp_timeout = duration(value)?,
            "snmpRetries" => self.snmp_retries = int(value)?,
            "switchFailureThreshold" => self.switch_failure_threshold = int(value)?,
            "heartbeat" => self.heartbeat = boolean(value)?,
            "eventLog" => self.event_log = path(value),
            "stateFile" => self.state_file = path(value),
            "statusEndpoint" => {
                self.status_endpoint = value.parse().map_err(|_| format!("bad socket address {value:?}"))?
            }
            "deviceMap" => self.device_map = path(value),
            "firmwareDir" => self.firmware_dir = path(value),
            "requiredHardwareParams" => {
                self.required_hardware_params = if value == "*" {
                    None
                } else {
                    Some(value.split(',').map(|k| k.trim().to_string()).filter(|k| !k.is_empty()).collect())
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |key: &'static str, detail: &str| Err(ConfigError::Validation { key, detail: detail.into() });
        if self.switch_endpoint.trim().is_empty() {
            return fail("switchEndpoint", "must be set");
        }
        if self.community.is_empty() {
            return fail("community", "must be known in advance and non-empty");
        }
        for (key, d) in [
            ("pollPeriod", self.poll_period),
            ("stageBackoff", self.stage_backoff),
            ("conduitTimeout", self.conduit_timeout),
            ("ftpConnectTimeout", self.ftp_connect_timeout),
            ("snmpTimeout", self.snmp_timeout),
        ] {
            if d.is_zero() {
                return fail(key, "must be greater than zero");
            }
        }
        for (key, n) in [
            ("missThreshold", self.miss_threshold),
            ("rebootBoundMultiplier", self.reboot_bound_multiplier),
            ("switchFailureThreshold", self.switch_failure_threshold),
            ("historyDepth", self.history_depth as u32),
        ] {
            if n == 0 {
                return fail(key, "must be at least 1");
            }
        }
        Ok(())
    }

    pub fn monitor(&self) -> MonitorConfig {
        MonitorConfig { miss_threshold: self.miss_threshold, switch_failure_threshold: self.switch_failure_threshold }
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            stage_retries: self.stage_retries,
            stage_backoff: self.stage_backoff,
            poll_period: self.poll_period,
            reboot_bound_multiplier: self.reboot_bound_multiplier,
            policy: MatchPolicy {
                allow_cross_port: self.allow_cross_port,
                required_params: self.required_hardware_params.clone(),
            },
        }
    }

    pub fn snmp_options(&self) -> SnmpClientOptions {
        SnmpClientOptions { timeout: self.snmp_timeout, retries: self.snmp_retries }
    }
}

/// Parses and validates a configuration file's text. `switchEndpoint` and
/// `community` are required; everything else has a default.
pub fn parse_config(text: &str) -> Result<OrchestratorConfig, ConfigError> {
    let mut config = OrchestratorConfig::with_defaults("", "");
    let mut seen = BTreeSet::new();
    let mut has_community = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse { line, detail: format!("expected key = value, got {content:?}") })?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line, key: key.to_string() });
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::Parse { line, detail: format!("{key} given twice") });
        }
        has_community |= key == "community";
        config.set(key, value).map_err(|detail| ConfigError::Parse { line, detail })?;
    }
    if !has_community {
        return Err(ConfigError::Validation { key: "community", detail: "must be known in advance and non-empty".into() });
    }
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<OrchestratorConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse_config("switchEndpoint = 10.0.0.2\ncommunity = public\n").unwrap();
        assert_eq!(c.switch_endpoint, "10.0.0.2");
        assert_eq!(c.poll_period, Duration::from_secs(2));
        assert_eq!(c.miss_threshold, 3);
        assert_eq!(c.stage_retries, 3);
        assert_eq!(c.reboot_bound_multiplier, 10);
        assert_eq!(c.history_depth, 5);
        assert!(!c.allow_cross_port);
        assert_eq!(c.conduit_timeout, Duration::from_secs(2));
        assert_eq!(c.ftp_connect_timeout, Duration::from_secs(5));
        assert_eq!(c.table_roots, TableRoots::default());
    }

    #[test]
    fn empty_community_rejected() {
        let err = parse_config("switchEndpoint = s\ncommunity =\n").unwrap_err();
        assert!(matches!(err, ConfigError::Validation { key: "community", .. }), "{err}");
        let err = parse_config("switchEndpoint = s\n").unwrap_err();
        assert!(matches!(err, ConfigError::Validation { key: "community", .. }), "{err}");
    }

    #[test]
    fn zero_poll_period_rejected() {
        let err = parse_config("switchEndpoint = s\ncommunity = c\npollPeriod = 0s\n").unwrap_err();
        assert!(matches!(err, ConfigError::Validation { key: "pollPeriod", .. }), "{err}");
    }

    #[test]
    fn zero_miss_threshold_rejected() {
        let err = parse_config("switchEndpoint = s\ncommunity = c\nmissThreshold = 0\n").unwrap_err();
        assert!(matches!(err, ConfigError::Validation { key: "missThreshold", .. }));
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = parse_config("switchEndpoint = s\ncommunity = c\n\npolPeriod = 2s\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 4, .. }), "{err}");
    }

    #[test]
    fn repeated_key_rejected() {
        assert!(matches!(
            parse_config("switchEndpoint = s\ncommunity = c\ncommunity = d\n"),
            Err(ConfigError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn full_file() {
        let text = "\
# site config
switchEndpoint = 10.0.0.2:1161
community = venue
tableRoots = .1.2.3, 1.2.4, .1.2.5
pollPeriod = 500ms
missThreshold = 4
allowCrossPort = true
eventLog = /var/log/fleet.log
requiredHardwareParams = channels, model
";
        let c = parse_config(text).unwrap();
        assert_eq!(c.table_roots.port_table.to_string(), ".1.2.4");
        assert_eq!(c.poll_period, Duration::from_millis(500));
        assert_eq!(c.miss_threshold, 4);
        assert!(c.engine().policy.allow_cross_port);
        assert_eq!(c.event_log.as_deref(), Some(Path::new("/var/log/fleet.log")));
        assert_eq!(c.required_hardware_params.unwrap().len(), 2);
    }

    #[test]
    fn bad_values_name_the_line() {
        assert!(matches!(
            parse_config("switchEndpoint = s\ncommunity = c\ntableRoots = .1.2\n"),
            Err(ConfigError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_config("switchEndpoint = s\ncommunity = c\nheartbeat = maybe\n"),
            Err(ConfigError::Parse { line: 3, .. })
        ));
    }
}
