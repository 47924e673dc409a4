use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::inventory::DeviceRecord;
use crate::snapshot::ConfigSnapshot;
use crate::snmp::MacAddress;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    /// Held by another job or set aside after an aborted attempt.
    Busy,
    /// Already on the network when the failure was detected.
    PredatesFailure,
    WrongPort,
    ProfileUnknown,
    TypeMismatch,
    HardwareParamMismatch,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Busy => "busy",
            RejectReason::PredatesFailure => "predates_failure",
            RejectReason::WrongPort => "wrong_port",
            RejectReason::ProfileUnknown => "profile_unknown",
            RejectReason::TypeMismatch => "type_mismatch",
            RejectReason::HardwareParamMismatch => "hardware_param_mismatch",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPolicy {
    pub allow_cross_port: bool,
    /// Hardware parameters that must match exactly. `None` means every
    /// parameter recorded in the snapshot.
    pub required_params: Option<BTreeSet<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub failed_mac: MacAddress,
    pub chosen: Option<MacAddress>,
    /// Each rejected candidate with the first rule it broke.
    pub rejected: Vec<(MacAddress, RejectReason)>,
}

fn first_violation(
    failed: &DeviceRecord,
    failure_generation: u64,
    candidate: &DeviceRecord,
    snapshot: &ConfigSnapshot,
    busy: &BTreeSet<MacAddress>,
    policy: &MatchPolicy,
) -> Option<RejectReason> {
    if busy.contains(&candidate.mac) {
        return Some(RejectReason::Busy);
    }
    if candidate.discovered_at_generation <= failure_generation {
        return Some(RejectReason::PredatesFailure);
    }
    if !policy.allow_cross_port && (failed.port.is_none() || candidate.port != failed.port) {
        return Some(RejectReason::WrongPort);
    }
    let Some(profile) = &candidate.profile else {
        return Some(RejectReason::ProfileUnknown);
    };
    if profile.device_type != snapshot.device_type {
        return Some(RejectReason::TypeMismatch);
    }
    let params_match = match &policy.required_params {
        Some(keys) => keys.iter().all(|k| profile.hardware_params.get(k) == snapshot.hardware_params.get(k)),
        None => snapshot.hardware_params.iter().all(|(k, v)| profile.hardware_params.get(k) == Some(v)),
    };
    if !params_match {
        return Some(RejectReason::HardwareParamMismatch);
    }
    None
}

/// Picks the replacement for `failed` among `candidates`: same port as the
/// failed device's last port, same device type and matching hardware
/// parameters as its snapshot, discovered after the failure. Among several
/// valid candidates the earliest discovered wins, then the lowest MAC.
pub fn select_replacement(
    failed: &DeviceRecord,
    failure_generation: u64,
    candidates: &[&DeviceRecord],
    snapshot: &ConfigSnapshot,
    busy: &BTreeSet<MacAddress>,
    policy: &MatchPolicy,
) -> MatchDecision {
    let mut rejected = Vec::new();
    let mut best: Option<&DeviceRecord> = None;
    for &c in candidates {
        match first_violation(failed, failure_generation, c, snapshot, busy, policy) {
            Some(reason) => rejected.push((c.mac, reason)),
            None => {
                let key = |r: &DeviceRecord| (r.discovered_at_generation, r.mac);
                if best.is_none_or(|b| key(c) < key(b)) {
                    best = Some(c);
                }
            }
        }
    }
    rejected.sort();
    MatchDecision { failed_mac: failed.mac, chosen: best.map(|b| b.mac), rejected }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::net::Ipv4Addr;

    use crate::clock::Timestamp;
    use crate::inventory::{Characteristics, DeviceAddress, DeviceStatus, HardwareProfile, IpConfig};

    fn mac(b: u8) -> MacAddress {
        MacAddress::new([0, 0x0f, 0xd7, 0, 0, b])
    }

    fn profile(ty: &str) -> HardwareProfile {
        HardwareProfile::new(ty, BTreeMap::from([("channels".into(), "4".into())]), "1.2.0".parse().unwrap()).unwrap()
    }

    fn failed() -> DeviceRecord {
        let mut r = DeviceRecord::discovered(mac(1), 5, DeviceStatus::Online, 1, Timestamp::ZERO);
        r.profile = Some(profile("amp"));
        r
    }

    fn snapshot() -> ConfigSnapshot {
        ConfigSnapshot::new(
            mac(1),
            Characteristics {
                device_address: DeviceAddress::new(3).unwrap(),
                ip_config: IpConfig { ip: Ipv4Addr::new(10, 0, 0, 3), dhcp_enabled: false },
            },
            profile("amp"),
            vec![],
            1,
        )
        .unwrap()
    }

    fn candidate(b: u8, port: u32, ty: Option<&str>, generation: u64) -> DeviceRecord {
        let mut r = DeviceRecord::discovered(mac(b), port, DeviceStatus::Candidate, generation, Timestamp::ZERO);
        r.profile = ty.map(profile);
        r
    }

    fn decide(cands: &[DeviceRecord]) -> MatchDecision {
        let refs: Vec<&DeviceRecord> = cands.iter().collect();
        select_replacement(&failed(), 10, &refs, &snapshot(), &BTreeSet::new(), &MatchPolicy::default())
    }

    #[test]
    fn single_valid_candidate_is_chosen() {
        assert_eq!(decide(&[candidate(2, 5, Some("amp"), 12)]).chosen, Some(mac(2)));
    }

    #[test]
    fn wrong_port_is_rejected() {
        let d = decide(&[candidate(2, 6, Some("amp"), 12)]);
        assert_eq!(d.chosen, None);
        assert_eq!(d.rejected, vec![(mac(2), RejectReason::WrongPort)]);
    }

    #[test]
    fn earliest_discovered_wins() {
        let d = decide(&[candidate(2, 5, Some("amp"), 14), candidate(3, 5, Some("amp"), 12)]);
        assert_eq!(d.chosen, Some(mac(3)));
        assert!(d.rejected.is_empty());
    }

    #[test]
    fn first_broken_rule_per_candidate() {
        let mut odd_params = candidate(6, 5, Some("amp"), 12);
        odd_params.profile.as_mut().unwrap().hardware_params.insert("channels".into(), "8".into());
        let d = decide(&[
            candidate(2, 5, None, 12),
            candidate(3, 5, Some("dsp"), 12),
            candidate(4, 5, Some("amp"), 10),
            candidate(5, 6, None, 12),
            odd_params,
        ]);
        assert_eq!(d.chosen, None);
        assert_eq!(
            d.rejected,
            vec![
                (mac(2), RejectReason::ProfileUnknown),
                (mac(3), RejectReason::TypeMismatch),
                (mac(4), RejectReason::PredatesFailure),
                (mac(5), RejectReason::WrongPort),
                (mac(6), RejectReason::HardwareParamMismatch),
            ]
        );
    }

    #[test]
    fn cross_port_allowed_when_configured() {
        let c = candidate(2, 6, Some("amp"), 12);
        let policy = MatchPolicy { allow_cross_port: true, ..Default::default() };
        let d = select_replacement(&failed(), 10, &[&c], &snapshot(), &BTreeSet::new(), &policy);
        assert_eq!(d.chosen, Some(mac(2)));
    }

    #[test]
    fn required_param_subset() {
        let mut c = candidate(2, 5, Some("amp"), 12);
        c.profile.as_mut().unwrap().hardware_params.insert("channels".into(), "8".into());
        c.profile.as_mut().unwrap().hardware_params.insert("serial".into(), "x".into());
        let policy = MatchPolicy { required_params: Some(BTreeSet::new()), ..Default::default() };
        let d = select_replacement(&failed(), 10, &[&c], &snapshot(), &BTreeSet::new(), &policy);
        assert_eq!(d.chosen, Some(mac(2)));
    }

    #[test]
    fn busy_candidate_skipped() {
        let c = candidate(2, 5, Some("amp"), 12);
        let d = select_replacement(&failed(), 10, &[&c], &snapshot(), &BTreeSet::from([mac(2)]), &MatchPolicy::default());
        assert_eq!(d.rejected, vec![(mac(2), RejectReason::Busy)]);
    }
}
