use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::snmp::{MacAddress, SwitchLookupTable};

/// (port, MAC) pairs that appeared and disappeared between two lookup
/// tables.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryDiff {
    pub added: BTreeSet<(u32, MacAddress)>,
    pub removed: BTreeSet<(u32, MacAddress)>,
    pub generation: u64,
}

impl InventoryDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    /// Removes then adds, turning the previous table's pair set into the
    /// next one's.
    pub fn apply(&self, pairs: &BTreeSet<(u32, MacAddress)>) -> BTreeSet<(u32, MacAddress)> {
        let mut out: BTreeSet<_> = pairs.difference(&self.removed).copied().collect();
        out.extend(self.added.iter().copied());
        out
    }

    pub fn added_macs(&self) -> BTreeSet<MacAddress> {
        self.added.iter().map(|(_, m)| *m).collect()
    }
}

pub fn diff_tables(prev: &SwitchLookupTable, next: &SwitchLookupTable) -> InventoryDiff {
    debug_assert!(
        prev.generation < next.generation || (prev.generation == 0 && next.generation == 0),
        "diff must run forward: {} -> {}",
        prev.generation,
        next.generation
    );
    let before = prev.pairs();
    let after = next.pairs();
    InventoryDiff {
        added: after.difference(&before).copied().collect(),
        removed: before.difference(&after).copied().collect(),
        generation: next.generation,
    }
}
