use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use super::device::{DeviceSeed, SimDevice};
use super::switch::SimSwitch;
use super::SimError;
use crate::clock::Clock;
use crate::link::{DeviceDirectory, DeviceEndpoints};
use crate::snmp::{MacAddress, TableRoots};

/// Endpoint lookup over the simulated devices, shareable with the
/// orchestrator while the network keeps growing.
#[derive(Clone, Default)]
pub struct SimDirectory {
    entries: Arc<RwLock<BTreeMap<MacAddress, DeviceEndpoints>>>,
}

impl DeviceDirectory for SimDirectory {
    fn endpoints(&self, mac: &MacAddress) -> Option<DeviceEndpoints> {
        self.entries.read().expect("directory poisoned").get(mac).copied()
    }
}

/// A switch plus every simulated device, attached or not.
pub struct SimNetwork {
    pub switch: SimSwitch,
    devices: BTreeMap<MacAddress, SimDevice>,
    directory: SimDirectory,
    clock: Clock,
}

impl SimNetwork {
    pub fn start(community: &str, roots: TableRoots, port_count: u32, clock: Clock) -> Result<Self, SimError> {
        Ok(SimNetwork {
            switch: SimSwitch::start(community, roots, port_count)?,
            devices: BTreeMap::new(),
            directory: SimDirectory::default(),
            clock,
        })
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn directory(&self) -> SimDirectory {
        self.directory.clone()
    }

    /// Powers on a device. It is unreachable until attached to a port.
    pub fn add_device(&mut self, seed: DeviceSeed) -> Result<(), SimError> {
        let mac = seed.mac;
        if self.devices.contains_key(&mac) {
            return Err(SimError::DuplicateMac(mac));
        }
        let device = SimDevice::start(seed, self.clock.clone())?;
        self.directory.entries.write().expect("directory poisoned").insert(mac, device.endpoints());
        self.devices.insert(mac, device);
        Ok(())
    }

    pub fn device(&self, mac: &MacAddress) -> Result<&SimDevice, SimError> {
        self.devices.get(mac).ok_or(SimError::UnknownMac(*mac))
    }

    pub fn devices(&self) -> impl Iterator<Item = &SimDevice> {
        self.devices.values()
    }

    pub fn attach(&self, port: u32, mac: MacAddress) -> Result<(), SimError> {
        let device = self.device(&mac)?;
        self.switch.attach(port, mac)?;
        device.set_attached(true);
        Ok(())
    }

    /// Pulls the cable: the MAC leaves the switch table and the device's
    /// services stop answering.
    pub fn detach(&self, mac: &MacAddress) -> Result<u32, SimError> {
        let port = self.switch.detach(mac)?;
        self.device(mac)?.set_attached(false);
        Ok(port)
    }

    /// The device stops answering but stays in the switch table.
    pub fn crash(&self, mac: &MacAddress) -> Result<(), SimError> {
        let device = self.device(mac)?;
        if self.switch.port_of(mac).is_none() {
            return Err(SimError::NotAttached(*mac));
        }
        device.crash();
        Ok(())
    }
}
