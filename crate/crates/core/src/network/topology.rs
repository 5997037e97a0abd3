use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::NetworkError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u32);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Full-duplex point-to-point link. Bandwidth in MB/s, latency in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub a: DeviceId,
    pub b: DeviceId,
    pub bandwidth: f64,
    pub latency: f64,
}

/// Undirected device graph. Links are keyed by their ordered endpoint pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Topology {
    devices: BTreeSet<DeviceId>,
    links: BTreeMap<(DeviceId, DeviceId), LinkSpec>,
}

fn key(a: DeviceId, b: DeviceId) -> (DeviceId, DeviceId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_device(&mut self, id: DeviceId) -> Result<(), NetworkError> {
        if !self.devices.insert(id) {
            return Err(NetworkError::DuplicateDevice(id));
        }
        Ok(())
    }

    pub fn add_link(
        &mut self,
        a: DeviceId,
        b: DeviceId,
        bandwidth: f64,
        latency: f64,
    ) -> Result<(), NetworkError> {
        for d in [a, b] {
            if !self.devices.contains(&d) {
                return Err(NetworkError::UnknownDevice(d));
            }
        }
        if a == b {
            return Err(NetworkError::InvalidLink {
                a,
                b,
                reason: "self-loop".into(),
            });
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(NetworkError::InvalidLink {
                a,
                b,
                reason: format!("bandwidth must be positive, got {bandwidth}"),
            });
        }
        if !(latency >= 0.0) || !latency.is_finite() {
            return Err(NetworkError::InvalidLink {
                a,
                b,
                reason: format!("latency must be non-negative, got {latency}"),
            });
        }
        let k = key(a, b);
        if self.links.contains_key(&k) {
            return Err(NetworkError::InvalidLink {
                a,
                b,
                reason: "duplicate link".into(),
            });
        }
        self.links.insert(
            k,
            LinkSpec {
                a: k.0,
                b: k.1,
                bandwidth,
                latency,
            },
        );
        Ok(())
    }

    pub fn devices(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.devices.iter().copied()
    }

    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    pub fn contains(&self, id: DeviceId) -> bool {
        self.devices.contains(&id)
    }

    pub fn links(&self) -> impl Iterator<Item = &LinkSpec> {
        self.links.values()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn link(&self, a: DeviceId, b: DeviceId) -> Option<&LinkSpec> {
        self.links.get(&key(a, b))
    }

    /// Neighbors of `id` in ascending id order.
    pub fn neighbors(&self, id: DeviceId) -> Vec<DeviceId> {
        let mut out: Vec<DeviceId> = self
            .links
            .keys()
            .filter_map(|&(a, b)| {
                if a == id {
                    Some(b)
                } else if b == id {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort();
        out
    }
}
