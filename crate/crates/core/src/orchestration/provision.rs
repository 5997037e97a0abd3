//! VM placement and run-time provisioning policies.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::{PolicySpec, SetupError, VmView};
use crate::compute::{DeviceCompute, HostId, SchedulerKind, VmId, VmSpec};
use crate::des::SimTime;
use crate::network::DeviceId;

#[derive(Debug, Clone, PartialEq)]
pub struct HostCapacity {
    pub host: HostId,
    pub free_pes: f64,
    pub mips_per_pe: f64,
    pub free_ram: f64,
    pub free_bandwidth: f64,
    pub free_storage: f64,
}

impl HostCapacity {
    fn fits(&self, vm: &VmSpec) -> bool {
        vm.host_binding.is_none_or(|h| h == self.host)
            && self.free_pes >= vm.pes as f64
            && vm.mips <= self.mips_per_pe
            && self.free_ram >= vm.ram
            && self.free_bandwidth >= vm.bandwidth
            && self.free_storage >= vm.image_size
    }
}

/// Unallocated resources of one device, per host.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCapacity {
    pub device: DeviceId,
    pub hosts: Vec<HostCapacity>,
}

impl DeviceCapacity {
    pub fn of<K: Clone + PartialEq>(dc: &DeviceCompute<K>) -> Self {
        DeviceCapacity {
            device: dc.device,
            hosts: dc
                .hosts()
                .iter()
                .map(|h| HostCapacity {
                    host: h.spec.id,
                    free_pes: h.provisioners.pe.available(),
                    mips_per_pe: h.spec.mips_per_pe,
                    free_ram: h.provisioners.ram.available(),
                    free_bandwidth: h.provisioners.bw.available(),
                    free_storage: h.provisioners.storage.available(),
                })
                .collect(),
        }
    }

    pub fn fits(&self, vm: &VmSpec) -> bool {
        self.hosts.iter().any(|h| h.fits(vm))
    }

    /// Debits `vm` from the first host that fits it.
    pub fn reserve(&mut self, vm: &VmSpec) -> bool {
        let Some(h) = self.hosts.iter_mut().find(|h| h.fits(vm)) else {
            return false;
        };
        h.free_pes -= vm.pes as f64;
        h.free_ram -= vm.ram;
        h.free_bandwidth -= vm.bandwidth;
        h.free_storage -= vm.image_size;
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Demand {
    /// Ready tasks not yet assigned to a VM.
    pub unassigned: usize,
    /// VMs requested but not yet in service.
    pub booting: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProvisionDirective {
    /// The broker assigns the VM id; the one in `spec` is ignored.
    Create { device: DeviceId, spec: VmSpec },
    Destroy { vm: VmId },
}

pub trait ProvisioningPolicy {
    fn name(&self) -> &str;

    /// Device for an initial VM without a device binding. Default: the first
    /// device, by ascending id, with a host that fits.
    fn place(&mut self, vm: &VmSpec, devices: &[DeviceCapacity]) -> Option<DeviceId> {
        devices.iter().find(|d| d.fits(vm)).map(|d| d.device)
    }

    /// Run-time create/destroy decisions, taken before each scheduling pass.
    fn decide(&mut self, demand: &Demand, vms: &[VmView], devices: &[DeviceCapacity], now: SimTime)
        -> Vec<ProvisionDirective>;
}

/// Keeps the initial VM set for the whole run.
#[derive(Debug, Clone, Default)]
pub struct StaticProvisioning;

impl ProvisioningPolicy for StaticProvisioning {
    fn name(&self) -> &str {
        "static"
    }

    fn decide(&mut self, _: &Demand, _: &[VmView], _: &[DeviceCapacity], _: SimTime) -> Vec<ProvisionDirective> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmTemplate {
    pub mips: f64,
    #[serde(default = "one")]
    pub pes: u32,
    pub ram: f64,
    pub bw: f64,
    pub size: f64,
    #[serde(default)]
    pub scheduler: SchedulerKind,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OnDemandParams {
    template: VmTemplate,
    #[serde(default = "default_max")]
    max_vms: usize,
    #[serde(default)]
    keep_idle_s: f64,
}

fn default_max() -> usize {
    4
}

/// Creates VMs from a template while ready tasks outnumber idle VMs, up to
/// `max_vms` dynamic VMs, and destroys dynamic VMs that have been idle for
/// `keep_idle_s` with nothing waiting.
#[derive(Debug, Clone)]
pub struct OnDemand {
    template: VmTemplate,
    max_vms: usize,
    keep_idle_s: f64,
    idle_since: BTreeMap<VmId, SimTime>,
}

impl OnDemand {
    pub fn new(template: VmTemplate, max_vms: usize, keep_idle_s: f64) -> Self {
        OnDemand {
            template,
            max_vms,
            keep_idle_s,
            idle_since: BTreeMap::new(),
        }
    }

    fn spec(&self) -> VmSpec {
        let t = &self.template;
        VmSpec {
            id: VmId(0),
            mips: t.mips,
            pes: t.pes,
            ram: t.ram,
            bandwidth: t.bw,
            image_size: t.size,
            host_binding: None,
            device: None,
            scheduler: t.scheduler,
        }
    }
}

impl ProvisioningPolicy for OnDemand {
    fn name(&self) -> &str {
        "on-demand"
    }

    fn decide(&mut self, demand: &Demand, vms: &[VmView], devices: &[DeviceCapacity], now: SimTime)
        -> Vec<ProvisionDirective> {
        let mut out = Vec::new();
        let idle = vms.iter().filter(|v| v.active == 0).count();
        let dynamic = vms.iter().filter(|v| v.dynamic).count() + demand.booting;
        let wanted = demand
            .unassigned
            .saturating_sub(idle + demand.booting)
            .min(self.max_vms.saturating_sub(dynamic));
        let mut caps = devices.to_vec();
        let spec = self.spec();
        for _ in 0..wanted {
            let Some(d) = caps.iter_mut().find(|d| d.fits(&spec)) else {
                break;
            };
            d.reserve(&spec);
            out.push(ProvisionDirective::Create {
                device: d.device,
                spec: spec.clone(),
            });
        }
        self.idle_since.retain(|id, _| vms.iter().any(|v| v.id == *id && v.active == 0));
        for v in vms.iter().filter(|v| v.dynamic && v.active == 0) {
            let since = *self.idle_since.entry(v.id).or_insert(now);
            if demand.unassigned == 0 && now - since >= self.keep_idle_s {
                out.push(ProvisionDirective::Destroy { vm: v.id });
            }
        }
        out
    }
}

pub fn from_spec(spec: &PolicySpec) -> Result<Box<dyn ProvisioningPolicy>, SetupError> {
    let bad = |reason: String| SetupError::PolicyParams {
        name: spec.name.clone(),
        reason,
    };
    match spec.name.as_str() {
        "static" => {
            if !(spec.params.is_null() || spec.params.as_object().is_some_and(|o| o.is_empty())) {
                return Err(bad(format!("unexpected parameters {}", spec.params)));
            }
            Ok(Box::new(StaticProvisioning))
        }
        "on-demand" => {
            let p: OnDemandParams = serde_json::from_value(spec.params.clone()).map_err(|e| bad(e.to_string()))?;
            if !(p.keep_idle_s >= 0.0) {
                return Err(bad("keep_idle_s must be non-negative".into()));
            }
            Ok(Box::new(OnDemand::new(p.template, p.max_vms, p.keep_idle_s)))
        }
        other => Err(SetupError::UnknownPolicy {
            kind: "provisioning",
            name: other.into(),
        }),
    }
}
