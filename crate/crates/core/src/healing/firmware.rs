use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::RwLock;

use crate::inventory::FirmwareVersion;

/// Where firmware images come from when a replacement needs an update.
pub trait FirmwareRepository: Send + Sync {
    fn image(&self, device_type: &str, version: &FirmwareVersion) -> Option<Vec<u8>>;
}

/// Images laid out as `<root>/<device type>/<version>.img`.
#[derive(Debug, Clone)]
pub struct DirFirmwareRepository {
    root: PathBuf,
}

impl DirFirmwareRepository {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirFirmwareRepository { root: root.into() }
    }

    pub fn path_for(&self, device_type: &str, version: &FirmwareVersion) -> PathBuf {
        let dir: String = device_type.chars().map(|c| if c == '/' || c == '\\' { '_' } else { c }).collect();
        self.root.join(dir).join(format!("{version}.img"))
    }
}

impl FirmwareRepository for DirFirmwareRepository {
    fn image(&self, device_type: &str, version: &FirmwareVersion) -> Option<Vec<u8>> {
        std::fs::read(self.path_for(device_type, version)).ok()
    }
}

#[derive(Debug, Default)]
pub struct MemoryFirmwareRepository {
    images: RwLock<BTreeMap<(String, FirmwareVersion), Vec<u8>>>,
}

impl MemoryFirmwareRepository {
    pub fn insert(&self, device_type: &str, version: FirmwareVersion, image: Vec<u8>) {
        self.images.write().expect("repository poisoned").insert((device_type.to_string(), version), image);
    }
}

impl FirmwareRepository for MemoryFirmwareRepository {
    fn image(&self, device_type: &str, version: &FirmwareVersion) -> Option<Vec<u8>> {
        self.images.read().expect("repository poisoned").get(&(device_type.to_string(), version.clone())).cloned()
    }
}
