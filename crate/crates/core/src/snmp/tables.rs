//! The three switch tables and the join that produces the per-port lookup
//! table: FDB index → MAC, FDB index → bridge port, bridge port → interface
//! name.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::client::{SnmpClient, SnmpError};
use super::pdu::Value;
use super::{MacAddress, Oid};
use crate::clock::Timestamp;

pub const DEFAULT_MAC_TABLE_ROOT: &str = ".1.3.6.1.4.1.9.9.46.1.3.1.1.2";
pub const DEFAULT_PORT_TABLE_ROOT: &str = ".1.3.6.1.2.1.17.4.3.1.2";
pub const DEFAULT_INTERFACE_TABLE_ROOT: &str = ".1.3.6.1.2.1.17.1.4.1.2";

/// Where the three tables live on the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRoots {
    pub mac_table: Oid,
    pub port_table: Oid,
    pub interface_table: Oid,
}

impl Default for TableRoots {
    fn default() -> Self {
        TableRoots {
            mac_table: DEFAULT_MAC_TABLE_ROOT.parse().unwrap(),
            port_table: DEFAULT_PORT_TABLE_ROOT.parse().unwrap(),
            interface_table: DEFAULT_INTERFACE_TABLE_ROOT.parse().unwrap(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error(transparent)]
    Walk(#[from] SnmpError),
    #[error("malformed {table} table: {detail}")]
    Malformed { table: &'static str, detail: String },
    #[error("{mac} learned on bridge ports {first} and {second} in one round")]
    JoinConflict { mac: MacAddress, first: u32, second: u32 },
}

impl TableError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, TableError::Walk(SnmpError::Timeout { .. }))
    }
}

/// OID arcs after the table root; the join key between the MAC and
/// port-number tables.
pub type FdbIndex = Vec<u32>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacTable {
    pub entries: Vec<(FdbIndex, MacAddress)>,
    /// Varbinds whose value was not a 6-octet string.
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PortNumberTable {
    pub entries: Vec<(FdbIndex, u32)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InterfaceTable {
    pub entries: BTreeMap<u32, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortEntry {
    pub if_name: String,
    pub macs: BTreeSet<MacAddress>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchLookupTable {
    pub ports: BTreeMap<u32, PortEntry>,
    pub retrieved_at: Timestamp,
    pub generation: u64,
}

impl SwitchLookupTable {
    pub fn stamped(mut self, generation: u64, retrieved_at: Timestamp) -> Self {
        self.generation = generation;
        self.retrieved_at = retrieved_at;
        self
    }

    /// Every (bridge port, MAC) pair in the table.
    pub fn pairs(&self) -> BTreeSet<(u32, MacAddress)> {
        self.ports
            .iter()
            .flat_map(|(port, entry)| entry.macs.iter().map(move |mac| (*port, *mac)))
            .collect()
    }

    pub fn port_of(&self, mac: &MacAddress) -> Option<u32> {
        self.ports
            .iter()
            .find(|(_, entry)| entry.macs.contains(mac))
            .map(|(port, _)| *port)
    }

    pub fn contains(&self, mac: &MacAddress) -> bool {
        self.port_of(mac).is_some()
    }

    pub fn mac_count(&self) -> usize {
        self.ports.values().map(|e| e.macs.len()).sum()
    }

    /// Canonical text form: a header line, a column line, then one row per
    /// port in ascending order with MACs sorted and comma separated.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# switch lookup table generation={} retrieved_at={} ports={}",
            self.generation,
            self.retrieved_at,
            self.ports.len()
        );
        out.push_str("port\tinterface\tmacs\n");
        for (port, entry) in &self.ports {
            let macs: Vec<String> = entry.macs.iter().map(|m| m.to_string()).collect();
            let _ = writeln!(out, "{port}\t{}\t{}", entry.if_name, macs.join(","));
        }
        out
    }
}

/// Per-round counts of entries that did not make it into the joined table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinDiagnostics {
    pub mac_values_skipped: usize,
    pub mac_without_port: usize,
    pub port_without_mac: usize,
    pub port_without_interface: usize,
}

impl JoinDiagnostics {
    pub fn dropped(&self) -> usize {
        self.mac_values_skipped + self.mac_without_port + self.port_without_mac + self.port_without_interface
    }
}

pub fn retrieve_mac_table(client: &mut SnmpClient, root: &Oid) -> Result<MacTable, TableError> {
    let mut table = MacTable::default();
    for (oid, value) in client.walk(root)? {
        let index = oid.suffix(root).expect("walk stays under root").to_vec();
        match value.as_bytes().and_then(MacAddress::from_slice) {
            Some(mac) => table.entries.push((index, mac)),
            None => table.skipped += 1,
        }
    }
    Ok(table)
}

pub fn retrieve_port_number_table(client: &mut SnmpClient, root: &Oid) -> Result<PortNumberTable, TableError> {
    let mut table = PortNumberTable::default();
    for (oid, value) in client.walk(root)? {
        let index = oid.suffix(root).expect("walk stays under root").to_vec();
        let port = port_value(&value).ok_or_else(|| TableError::Malformed {
            table: "port-number",
            detail: format!("{oid} carries {value:?}, expected a positive INTEGER"),
        })?;
        table.entries.push((index, port));
    }
    Ok(table)
}

pub fn retrieve_interface_table(client: &mut SnmpClient, root: &Oid) -> Result<InterfaceTable, TableError> {
    let mut table = InterfaceTable::default();
    for (oid, value) in client.walk(root)? {
        let malformed = |detail: String| TableError::Malformed { table: "interface", detail };
        let port = *oid.suffix(root).and_then(|s| s.last()).expect("walk stays under root");
        if port == 0 {
            return Err(malformed(format!("{oid} names bridge port 0")));
        }
        let name = match &value {
            Value::OctetString(bytes) => String::from_utf8_lossy(bytes).into_owned(),
            // Standard bridge MIBs carry an ifIndex here rather than a name.
            Value::Integer(i) => i.to_string(),
            other => return Err(malformed(format!("{oid} carries {other:?}"))),
        };
        if name.is_empty() {
            return Err(malformed(format!("{oid} has an empty interface name")));
        }
        if table.entries.insert(port, name).is_some() {
            return Err(malformed(format!("bridge port {port} listed twice")));
        }
    }
    Ok(table)
}

fn port_value(value: &Value) -> Option<u32> {
    let v = value.as_integer()?;
    (v >= 1).then(|| u32::try_from(v).ok()).flatten()
}

/// Joins the three tables. Entries missing a leg are dropped and counted; a
/// MAC reaching two different ports is an error.
pub fn build_lookup_table(
    mac: &MacTable,
    portnum: &PortNumberTable,
    iface: &InterfaceTable,
) -> Result<(SwitchLookupTable, JoinDiagnostics), TableError> {
    let mut diagnostics = JoinDiagnostics { mac_values_skipped: mac.skipped, ..Default::default() };
    let port_by_index: HashMap<&[u32], u32> =
        portnum.entries.iter().map(|(idx, port)| (idx.as_slice(), *port)).collect();
    let mac_indexes: std::collections::HashSet<&[u32]> =
        mac.entries.iter().map(|(idx, _)| idx.as_slice()).collect();
    diagnostics.port_without_mac =
        portnum.entries.iter().filter(|(idx, _)| !mac_indexes.contains(idx.as_slice())).count();

    let mut table = SwitchLookupTable::default();
    let mut seen: HashMap<MacAddress, u32> = HashMap::new();
    for (index, address) in &mac.entries {
        let Some(&port) = port_by_index.get(index.as_slice()) else {
            diagnostics.mac_without_port += 1;
            continue;
        };
        let Some(if_name) = iface.entries.get(&port) else {
            diagnostics.port_without_interface += 1;
            continue;
        };
        if let Some(&first) = seen.get(address) {
            if first != port {
                return Err(TableError::JoinConflict { mac: *address, first, second: port });
            }
        }
        seen.insert(*address, port);
        table
            .ports
            .entry(port)
            .or_insert_with(|| PortEntry { if_name: if_name.clone(), macs: BTreeSet::new() })
            .macs
            .insert(*address);
    }
    Ok((table, diagnostics))
}

/// One retrieval round: the three walks back to back, then the join.
pub fn retrieve_lookup_table(
    client: &mut SnmpClient,
    roots: &TableRoots,
) -> Result<(SwitchLookupTable, JoinDiagnostics), TableError> {
    let mac = retrieve_mac_table(client, &roots.mac_table)?;
    let portnum = retrieve_port_number_table(client, &roots.port_table)?;
    let iface = retrieve_interface_table(client, &roots.interface_table)?;
    build_lookup_table(&mac, &portnum, &iface)
}
