//! SNMP v2c manager side: BER codec, GetNext walks, and retrieval of the
//! switch tables joined into a per-port lookup table.

pub mod client;
mod mac;
mod oid;
pub mod pdu;
pub mod tables;

pub use client::{snmp_walk, SnmpClient, SnmpClientOptions, SnmpError};
pub use mac::{MacAddress, MacParseError};
pub use oid::{Oid, OidError};
pub use pdu::Value;
pub use tables::{
    build_lookup_table, retrieve_interface_table, retrieve_lookup_table, retrieve_mac_table,
    retrieve_port_number_table, InterfaceTable, JoinDiagnostics, MacTable, PortEntry,
    PortNumberTable, SwitchLookupTable, TableError, TableRoots,
};
