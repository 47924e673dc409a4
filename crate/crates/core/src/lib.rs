pub mod clock;
pub mod digest;
pub mod inventory;
pub mod link;
pub mod snmp;
pub mod snapshot;
pub mod sim;
pub mod events;
pub mod healing;
pub mod config;
pub mod orchestrator;
