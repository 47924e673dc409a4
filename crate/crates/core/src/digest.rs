//! The project-wide 64-bit content digest: the first eight bytes of SHA-256,
//! read big-endian.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// Name recorded in snapshot manifests.
pub const DIGEST_ALGORITHM: &str = "sha256-64";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Digest64(pub u64);

impl Digest64 {
    pub fn of(bytes: &[u8]) -> Self {
        Self::from_sha256(&Sha256::digest(bytes))
    }

    /// Truncates a full SHA-256 output.
    pub fn from_sha256(full: &[u8]) -> Self {
        let mut head = [0u8; 8];
        head.copy_from_slice(&full[..8]);
        Digest64(u64::from_be_bytes(head))
    }
}

impl fmt::Display for Digest64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for Digest64 {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s, 16).map(Digest64)
    }
}

/// Digest of an ordered set of named configuration files. Both the device
/// (when it activates files) and the orchestrator (when it checks a restore)
/// use this definition.
pub fn config_set_digest<'a, I>(files: I) -> Digest64
where
    I: IntoIterator<Item = (&'a str, &'a [u8])>,
{
    let mut hasher = Sha256::new();
    for (name, bytes) in files {
        hasher.update((name.len() as u32).to_be_bytes());
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_be_bytes());
        hasher.update(bytes);
    }
    Digest64::from_sha256(&hasher.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
