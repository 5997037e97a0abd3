//! Hosts, VMs, provisioning and task execution.

mod host;
mod vm;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::des::SimTime;
use crate::network::DeviceId;

pub use host::{Host, HostId, HostSpec, Provisioners, SimpleProvisioner};
pub use vm::{Execution, SchedulerKind, Transition, VmId, VmRuntime, VmSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resource {
    Pe,
    Mips,
    Ram,
    Bandwidth,
    Storage,
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resource::Pe => "PE",
            Resource::Mips => "MIPS",
            Resource::Ram => "RAM",
            Resource::Bandwidth => "bandwidth",
            Resource::Storage => "storage",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComputeError {
    #[error("device {device} has no host with enough {resource} for VM {vm}")]
    InsufficientCapacity {
        vm: VmId,
        device: DeviceId,
        resource: Resource,
    },
    #[error("device {0} has no hosts")]
    NoHosts(DeviceId),
    #[error("VM {0} is not running")]
    VmNotRunning(VmId),
    #[error("VM {0} still has active tasks")]
    VmBusy(VmId),
    #[error("unknown VM {0}")]
    UnknownVm(VmId),
    #[error("duplicate VM id {0}")]
    DuplicateVm(VmId),
    #[error("execution length must be positive, got {0}")]
    InvalidLength(f64),
    #[error("invalid VM {vm}: {reason}")]
    InvalidSpec { vm: VmId, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VmState {
    /// Allocated, entering service at the given time.
    Booting,
    Running,
}

#[derive(Debug, Clone)]
pub struct VmSlot<K> {
    pub runtime: VmRuntime<K>,
    pub state: VmState,
}

/// The compute side of one fog device: its hosts and the VMs placed on them.
#[derive(Debug, Clone)]
pub struct DeviceCompute<K> {
    pub device: DeviceId,
    hosts: Vec<Host>,
    vms: BTreeMap<VmId, VmSlot<K>>,
}

fn check_spec(vm: &VmSpec) -> Result<(), ComputeError> {
    let bad = |reason: &str| ComputeError::InvalidSpec {
        vm: vm.id,
        reason: reason.into(),
    };
    if !(vm.mips > 0.0) {
        return Err(bad("mips must be positive"));
    }
    if vm.pes == 0 {
        return Err(bad("pes must be at least 1"));
    }
    if vm.ram < 0.0 || vm.bandwidth < 0.0 || vm.image_size < 0.0 {
        return Err(bad("ram, bandwidth and size must be non-negative"));
    }
    Ok(())
}

fn first_shortfall(host: &Host, vm: &VmSpec) -> Option<Resource> {
    let p = &host.provisioners;
    if !p.pe.can_allocate(vm.pes as f64) {
        Some(Resource::Pe)
    } else if vm.mips > host.spec.mips_per_pe {
        Some(Resource::Mips)
    } else if !p.ram.can_allocate(vm.ram) {
        Some(Resource::Ram)
    } else if !p.bw.can_allocate(vm.bandwidth) {
        Some(Resource::Bandwidth)
    } else if !p.storage.can_allocate(vm.image_size) {
        Some(Resource::Storage)
    } else {
        None
    }
}

impl<K: Clone + PartialEq> DeviceCompute<K> {
    pub fn new(device: DeviceId, mut hosts: Vec<HostSpec>) -> Self {
        hosts.sort_by_key(|h| h.id);
        DeviceCompute {
            device,
            hosts: hosts.into_iter().map(Host::new).collect(),
            vms: BTreeMap::new(),
        }
    }

    pub fn hosts(&self) -> &[Host] {
        &self.hosts
    }

    pub fn vms(&self) -> impl Iterator<Item = (&VmId, &VmSlot<K>)> {
        self.vms.iter()
    }

    pub fn vm(&self, id: VmId) -> Option<&VmSlot<K>> {
        self.vms.get(&id)
    }

    pub fn vm_mut(&mut self, id: VmId) -> Option<&mut VmSlot<K>> {
        self.vms.get_mut(&id)
    }

    /// Whether some host could take `vm` right now.
    pub fn fits(&self, vm: &VmSpec) -> bool {
        self.hosts
            .iter()
            .filter(|h| vm.host_binding.is_none_or(|b| b == h.spec.id))
            .any(|h| first_shortfall(h, vm).is_none())
    }

    /// First-fit by ascending host id; debits PEs, RAM, bandwidth and
    /// storage on the chosen host.
    pub fn allocate_vm(&mut self, vm: &VmSpec) -> Result<HostId, ComputeError> {
        check_spec(vm)?;
        if self.hosts.is_empty() {
            return Err(ComputeError::NoHosts(self.device));
        }
        let mut first_failure = None;
        for host in self
            .hosts
            .iter_mut()
            .filter(|h| vm.host_binding.is_none_or(|b| b == h.spec.id))
        {
            match first_shortfall(host, vm) {
                None => {
                    let p = &mut host.provisioners;
                    p.pe.allocate(vm.pes as f64);
                    p.ram.allocate(vm.ram);
                    p.bw.allocate(vm.bandwidth);
                    p.storage.allocate(vm.image_size);
                    return Ok(host.spec.id);
                }
                Some(r) => {
                    first_failure.get_or_insert(r);
                }
            }
        }
        Err(ComputeError::InsufficientCapacity {
            vm: vm.id,
            device: self.device,
            resource: first_failure.unwrap_or(Resource::Pe),
        })
    }

    fn credit(&mut self, host: HostId, vm: &VmSpec) {
        if let Some(h) = self.hosts.iter_mut().find(|h| h.spec.id == host) {
            let p = &mut h.provisioners;
            p.pe.release(vm.pes as f64);
            p.ram.release(vm.ram);
            p.bw.release(vm.bandwidth);
            p.storage.release(vm.image_size);
        }
    }

    /// Allocates and installs a VM. It is `Running` immediately when
    /// `booting` is false, otherwise it waits for [`Self::activate`].
    pub fn create_vm(&mut self, vm: VmSpec, now: SimTime, booting: bool) -> Result<HostId, ComputeError> {
        if self.vms.contains_key(&vm.id) {
            return Err(ComputeError::DuplicateVm(vm.id));
        }
        let host = self.allocate_vm(&vm)?;
        let state = if booting { VmState::Booting } else { VmState::Running };
        self.vms.insert(
            vm.id,
            VmSlot {
                runtime: VmRuntime::new(vm, host, now),
                state,
            },
        );
        Ok(host)
    }

    pub fn activate(&mut self, id: VmId, now: SimTime) -> Result<(), ComputeError> {
        let slot = self.vms.get_mut(&id).ok_or(ComputeError::UnknownVm(id))?;
        slot.state = VmState::Running;
        slot.runtime.advance(now);
        Ok(())
    }

    /// Removes a VM and credits its resources back. Without `force`, a VM
    /// with active executions is refused. Returns the killed executions.
    pub fn destroy_vm(&mut self, id: VmId, force: bool, now: SimTime) -> Result<Vec<K>, ComputeError> {
        let slot = self.vms.get_mut(&id).ok_or(ComputeError::UnknownVm(id))?;
        if !force && !slot.runtime.is_idle() {
            return Err(ComputeError::VmBusy(id));
        }
        let killed = slot.runtime.drain(now);
        let slot = self.vms.remove(&id).expect("present");
        self.credit(slot.runtime.host, &slot.runtime.spec);
        Ok(killed)
    }

    /// Submits an execution to a running VM.
    pub fn submit(&mut self, id: VmId, key: K, length: f64, now: SimTime) -> Result<Transition<K>, ComputeError> {
        let slot = self.vms.get_mut(&id).ok_or(ComputeError::UnknownVm(id))?;
        if slot.state != VmState::Running {
            return Err(ComputeError::VmNotRunning(id));
        }
        slot.runtime.submit(key, length, now)
    }
}
