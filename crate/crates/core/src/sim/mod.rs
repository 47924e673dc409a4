//! In-process stand-in for a live installation: a managed switch, devices
//! speaking the conduit and FTP, and a scenario runner that drives them
//! against the orchestrator under a virtual or real clock.

pub mod device;
mod network;
pub mod scenario;
pub mod switch;

pub use device::{firmware_image, CrashPoint, DeviceFaults, DeviceSeed, Interaction, SimDevice};
pub use network::{SimDirectory, SimNetwork};
pub use scenario::{
    parse_scenario, run_scenario, Action, ClockMode, DeviceOutcome, FaultSpec, HealRecord, Scenario, ScenarioError,
    ScenarioReport, ScriptError, TimedAction,
};
pub use switch::{interface_name, SimSwitch, SwitchFaults};

use crate::snmp::MacAddress;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("{0} is already attached")]
    DuplicateMac(MacAddress),
    #[error("{0} is not attached")]
    UnknownMac(MacAddress),
    #[error("{0} is not on any port")]
    NotAttached(MacAddress),
    #[error("switch has no port {0}")]
    NoSuchPort(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
