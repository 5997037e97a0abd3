use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HostId(pub u32);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Physical host capacity. RAM and storage in MB, bandwidth in MB/s.
#[derive(Debug, Clone, PartialEq)]
pub struct HostSpec {
    pub id: HostId,
    pub pes: u32,
    pub mips_per_pe: f64,
    pub ram: f64,
    pub bandwidth: f64,
    pub storage: f64,
}

/// Grants a request iff the remaining capacity suffices.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleProvisioner {
    capacity: f64,
    allocated: f64,
}

impl SimpleProvisioner {
    pub fn new(capacity: f64) -> Self {
        SimpleProvisioner {
            capacity,
            allocated: 0.0,
        }
    }

    pub fn available(&self) -> f64 {
        self.capacity - self.allocated
    }

    pub fn allocated(&self) -> f64 {
        self.allocated
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn can_allocate(&self, amount: f64) -> bool {
        amount <= self.available()
    }

    pub fn allocate(&mut self, amount: f64) -> bool {
        if !self.can_allocate(amount) {
            return false;
        }
        self.allocated += amount;
        true
    }

    pub fn release(&mut self, amount: f64) {
        self.allocated = (self.allocated - amount).max(0.0);
    }
}

/// Per-resource provisioners of one host.
#[derive(Debug, Clone, PartialEq)]
pub struct Provisioners {
    pub pe: SimpleProvisioner,
    pub ram: SimpleProvisioner,
    pub bw: SimpleProvisioner,
    pub storage: SimpleProvisioner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Host {
    pub spec: HostSpec,
    pub provisioners: Provisioners,
}

impl Host {
    pub fn new(spec: HostSpec) -> Self {
        let provisioners = Provisioners {
            pe: SimpleProvisioner::new(spec.pes as f64),
            ram: SimpleProvisioner::new(spec.ram),
            bw: SimpleProvisioner::new(spec.bandwidth),
            storage: SimpleProvisioner::new(spec.storage),
        };
        Host { spec, provisioners }
    }

    pub fn free_pes(&self) -> u32 {
        self.provisioners.pe.available() as u32
    }
}
