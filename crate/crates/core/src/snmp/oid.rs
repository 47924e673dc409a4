use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// An SNMP object identifier. Ordering is lexicographic over arcs, which is
/// the order agents walk their MIB in.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Oid(Vec<u32>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OidError {
    #[error("oid needs at least two arcs, got {0}")]
    TooShort(usize),
    #[error("invalid oid arc {0:?}")]
    BadArc(String),
}

impl Oid {
    pub fn new(arcs: Vec<u32>) -> Result<Self, OidError> {
        if arcs.len() < 2 {
            return Err(OidError::TooShort(arcs.len()));
        }
        Ok(Oid(arcs))
    }

    pub fn arcs(&self) -> &[u32] {
        &self.0
    }

    /// True iff `root` is a strict prefix of `self`.
    pub fn is_under(&self, root: &Oid) -> bool {
        self.0.len() > root.0.len() && self.0.starts_with(&root.0)
    }

    /// Arcs after `root`, if `self` is under it.
    pub fn suffix(&self, root: &Oid) -> Option<&[u32]> {
        self.is_under(root).then(|| &self.0[root.0.len()..])
    }

    pub fn child(&self, tail: &[u32]) -> Oid {
        let mut arcs = self.0.clone();
        arcs.extend_from_slice(tail);
        Oid(arcs)
    }
}

impl fmt::Display for Oid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for arc in &self.0 {
            write!(f, ".{arc}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Oid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Oid({self})")
    }
}

impl FromStr for Oid {
    type Err = OidError;

    /// Accepts the canonical form with a leading dot, or without it.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s.trim().strip_prefix('.').unwrap_or(s.trim());
        let arcs = body
            .split('.')
            .map(|a| a.parse::<u32>().map_err(|_| OidError::BadArc(a.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Oid::new(arcs)
    }
}

impl Serialize for Oid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Oid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_has_leading_dot() {
        let oid: Oid = "1.3.6.1.2.1.17.4.3.1.2".parse().unwrap();
        assert_eq!(oid.to_string(), ".1.3.6.1.2.1.17.4.3.1.2");
        assert_eq!(".1.3.6.1.2.1.17.4.3.1.2".parse::<Oid>().unwrap(), oid);
    }

    #[test]
    fn rejects_short_and_garbage() {
        assert_eq!(".1".parse::<Oid>(), Err(OidError::TooShort(1)));
        assert!(matches!("1.x.3".parse::<Oid>(), Err(OidError::BadArc(_))));
        assert!("".parse::<Oid>().is_err());
    }

    #[test]
    fn strict_prefix_and_order() {
        let root: Oid = ".1.3.6.1.2.1.17.1.4.1.2".parse().unwrap();
        let a = root.child(&[2]);
        let b = root.child(&[10]);
        assert!(a.is_under(&root));
        assert!(!root.is_under(&root));
        assert_eq!(a.suffix(&root), Some(&[2u32][..]));
        assert!(root < a && a < b);
        let sibling: Oid = ".1.3.6.1.2.1.17.1.4.1.3".parse().unwrap();
        assert!(b < sibling && !sibling.is_under(&root));
    }
}
