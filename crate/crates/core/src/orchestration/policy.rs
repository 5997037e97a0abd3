//! Task-to-VM scheduling policies.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use super::{PolicySpec, SetupError, TaskKey};
use crate::compute::{SchedulerKind, VmId};
use crate::des::SimTime;
use crate::network::{DeviceId, RoutingTable, Topology};
use crate::workflow::TaskId;

/// An input file of a ready task and where it currently lives. `source` is
/// `None` for files with no producer, which are available anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct InputView {
    pub file: String,
    pub size: f64,
    pub source: Option<DeviceId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadyTask {
    pub key: TaskKey,
    pub workflow_id: String,
    pub task: TaskId,
    /// Million instructions.
    pub length: f64,
    pub inputs: Vec<InputView>,
    pub ready_at: SimTime,
}

/// Load snapshot of a running VM.
#[derive(Debug, Clone, PartialEq)]
pub struct VmView {
    pub id: VmId,
    pub device: DeviceId,
    /// Per PE.
    pub mips: f64,
    pub pes: u32,
    pub scheduler: SchedulerKind,
    /// Executions running, queued, or assigned and still staging inputs.
    pub active: usize,
    /// Outstanding MI across those executions.
    pub remaining_work: f64,
    /// Created at run time by the provisioning policy.
    pub dynamic: bool,
}

impl VmView {
    pub fn capacity(&self) -> f64 {
        self.mips * self.pes as f64
    }

    /// Seconds until `length` MI submitted now would finish, assuming the
    /// current backlog drains at full capacity.
    pub fn estimate_runtime(&self, length: f64) -> f64 {
        (length / self.mips).max((self.remaining_work + length) / self.capacity())
    }

    /// Accounts for an assignment made within the same decision pass.
    pub fn absorb(&mut self, length: f64) {
        self.active += 1;
        self.remaining_work += length;
    }
}

/// Read-only view of links and routes for transfer estimates.
#[derive(Debug, Clone, Copy)]
pub struct NetworkView<'a> {
    topology: &'a Topology,
    routes: &'a RoutingTable,
}

impl<'a> NetworkView<'a> {
    pub fn new(topology: &'a Topology, routes: &'a RoutingTable) -> Self {
        NetworkView { topology, routes }
    }

    /// Serialization plus latency along the route, ignoring queueing.
    pub fn transfer_time(&self, from: DeviceId, to: DeviceId, size: f64) -> Option<f64> {
        if from == to {
            return Some(0.0);
        }
        let mut at = from;
        let mut total = 0.0;
        for hop in self.routes.path(from, to).ok()? {
            let l = self.topology.link(at, hop)?;
            total += size / l.bandwidth + l.latency;
            at = hop;
        }
        Some(total)
    }

    pub fn hops(&self, from: DeviceId, to: DeviceId) -> Option<usize> {
        if from == to {
            return Some(0);
        }
        self.routes.path(from, to).ok().map(|p| p.len())
    }

    /// Estimated time to stage all inputs of `task` onto `device`. Files
    /// from one source share its route, so their sizes add up.
    pub fn staging_time(&self, task: &ReadyTask, device: DeviceId) -> f64 {
        let mut per_source: BTreeMap<DeviceId, f64> = BTreeMap::new();
        for i in &task.inputs {
            if let Some(s) = i.source {
                *per_source.entry(s).or_default() += i.size;
            }
        }
        per_source
            .into_iter()
            .map(|(s, size)| self.transfer_time(s, device, size).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub task: TaskKey,
    pub vm: VmId,
}

/// Maps ready tasks onto running VMs. Tasks left out of the result stay
/// queued for the next pass.
pub trait SchedulingPolicy {
    fn name(&self) -> &str;

    fn decide(&mut self, ready: &[ReadyTask], vms: &[VmView], network: &NetworkView<'_>, now: SimTime)
        -> Vec<Assignment>;
}

/// Cycles through VMs in id order, one task per VM per turn.
#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    cursor: usize,
}

impl RoundRobin {
    pub fn new() -> Self {
        Self::default()
    }

    fn pick(&mut self, vms: &[VmView]) -> Option<VmId> {
        if vms.is_empty() {
            return None;
        }
        let vm = vms[self.cursor % vms.len()].id;
        self.cursor = self.cursor.wrapping_add(1);
        Some(vm)
    }
}

fn sorted(vms: &[VmView]) -> Vec<VmView> {
    let mut v = vms.to_vec();
    v.sort_by_key(|v| v.id);
    v
}

impl SchedulingPolicy for RoundRobin {
    fn name(&self) -> &str {
        "round-robin"
    }

    fn decide(&mut self, ready: &[ReadyTask], vms: &[VmView], _: &NetworkView<'_>, _: SimTime) -> Vec<Assignment> {
        let vms = sorted(vms);
        ready
            .iter()
            .map_while(|t| self.pick(&vms).map(|vm| Assignment { task: t.key, vm }))
            .collect()
    }
}

fn finish_estimate(task: &ReadyTask, vm: &VmView, net: &NetworkView<'_>) -> f64 {
    net.staging_time(task, vm.device) + vm.estimate_runtime(task.length)
}

/// Index of the VM with the smallest estimate; ties go to the lower id.
fn best_vm(task: &ReadyTask, vms: &[VmView], net: &NetworkView<'_>) -> Option<(usize, f64)> {
    vms.iter()
        .enumerate()
        .map(|(i, v)| (i, finish_estimate(task, v, net)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(vms[a.0].id.cmp(&vms[b.0].id)))
}

/// Greedy earliest estimated finish, tasks taken in ready order.
#[derive(Debug, Clone, Default)]
pub struct EarliestFinish;

impl SchedulingPolicy for EarliestFinish {
    fn name(&self) -> &str {
        "earliest-finish"
    }

    fn decide(&mut self, ready: &[ReadyTask], vms: &[VmView], net: &NetworkView<'_>, _: SimTime) -> Vec<Assignment> {
        let mut vms = sorted(vms);
        let mut out = Vec::new();
        for t in ready {
            if let Some((i, _)) = best_vm(t, &vms, net) {
                vms[i].absorb(t.length);
                out.push(Assignment { task: t.key, vm: vms[i].id });
            }
        }
        out
    }
}

/// Repeatedly commits the (task, VM) pair with the smallest estimated
/// finish over the whole batch.
#[derive(Debug, Clone, Default)]
pub struct MinMin;

impl SchedulingPolicy for MinMin {
    fn name(&self) -> &str {
        "min-min"
    }

    fn decide(&mut self, ready: &[ReadyTask], vms: &[VmView], net: &NetworkView<'_>, _: SimTime) -> Vec<Assignment> {
        let mut vms = sorted(vms);
        let mut left: Vec<&ReadyTask> = ready.iter().collect();
        let mut out = Vec::new();
        while !left.is_empty() {
            let Some((ti, vi, _)) = left
                .iter()
                .enumerate()
                .filter_map(|(ti, t)| best_vm(t, &vms, net).map(|(vi, est)| (ti, vi, est)))
                .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
            else {
                break;
            };
            let t = left.remove(ti);
            vms[vi].absorb(t.length);
            out.push(Assignment { task: t.key, vm: vms[vi].id });
        }
        out
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PinnedParams {
    #[serde(default)]
    workflow_vms: BTreeMap<String, Vec<VmId>>,
    /// Keyed by `workflow:task`.
    #[serde(default)]
    task_vms: BTreeMap<String, VmId>,
}

/// Static mapping: a task goes to its own VM if listed, otherwise round-robin
/// within its workflow's VM set, otherwise global round-robin. Tasks whose
/// designated VMs are not running wait.
#[derive(Debug, Clone, Default)]
pub struct Pinned {
    workflow_vms: BTreeMap<String, Vec<VmId>>,
    task_vms: BTreeMap<String, VmId>,
    cursors: BTreeMap<String, usize>,
    fallback: RoundRobin,
}

impl Pinned {
    pub fn new(workflow_vms: BTreeMap<String, Vec<VmId>>, task_vms: BTreeMap<String, VmId>) -> Self {
        Pinned {
            workflow_vms,
            task_vms,
            ..Self::default()
        }
    }
}

impl SchedulingPolicy for Pinned {
    fn name(&self) -> &str {
        "pinned"
    }

    fn decide(&mut self, ready: &[ReadyTask], vms: &[VmView], _: &NetworkView<'_>, _: SimTime) -> Vec<Assignment> {
        let running: BTreeSet<VmId> = vms.iter().map(|v| v.id).collect();
        let all = sorted(vms);
        let mut out = Vec::new();
        for t in ready {
            let key = format!("{}:{}", t.workflow_id, t.task);
            let vm = if let Some(&vm) = self.task_vms.get(&key) {
                running.contains(&vm).then_some(vm)
            } else if let Some(set) = self.workflow_vms.get(&t.workflow_id) {
                let live: Vec<VmId> = set.iter().copied().filter(|v| running.contains(v)).collect();
                if live.is_empty() {
                    None
                } else {
                    let c = self.cursors.entry(t.workflow_id.clone()).or_default();
                    let vm = live[*c % live.len()];
                    *c += 1;
                    Some(vm)
                }
            } else {
                self.fallback.pick(&all)
            };
            if let Some(vm) = vm {
                out.push(Assignment { task: t.key, vm });
            }
        }
        out
    }
}

/// Restricts an inner policy to VMs within `max_hops` of a task's input
/// data. Tasks without located inputs see every VM.
pub struct Localized {
    inner: Box<dyn SchedulingPolicy>,
    max_hops: usize,
    name: String,
}

impl Localized {
    pub fn new(inner: Box<dyn SchedulingPolicy>, max_hops: usize) -> Self {
        let name = format!("{}+localized", inner.name());
        Localized { inner, max_hops, name }
    }
}

impl SchedulingPolicy for Localized {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&mut self, ready: &[ReadyTask], vms: &[VmView], net: &NetworkView<'_>, now: SimTime) -> Vec<Assignment> {
        let mut vms = vms.to_vec();
        let mut out = Vec::new();
        for t in ready {
            let sources: BTreeSet<DeviceId> = t.inputs.iter().filter_map(|i| i.source).collect();
            let near: Vec<VmView> = vms
                .iter()
                .filter(|v| {
                    sources
                        .iter()
                        .all(|&s| net.hops(s, v.device).is_some_and(|h| h <= self.max_hops))
                })
                .cloned()
                .collect();
            for a in self.inner.decide(std::slice::from_ref(t), &near, net, now) {
                if let Some(v) = vms.iter_mut().find(|v| v.id == a.vm) {
                    v.absorb(t.length);
                }
                out.push(a);
            }
        }
        out
    }
}

fn params<T: serde::de::DeserializeOwned + Default>(spec: &PolicySpec, value: serde_json::Value) -> Result<T, SetupError> {
    if value.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(value).map_err(|e| SetupError::PolicyParams {
        name: spec.name.clone(),
        reason: e.to_string(),
    })
}

/// Builds a built-in scheduling policy. Any policy accepts `max_hops` to
/// add locality filtering.
pub fn from_spec(spec: &PolicySpec) -> Result<Box<dyn SchedulingPolicy>, SetupError> {
    let mut rest = spec.params.clone();
    let max_hops = match rest.as_object_mut().and_then(|o| o.remove("max_hops")) {
        None => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| SetupError::PolicyParams {
            name: spec.name.clone(),
            reason: "max_hops must be a non-negative integer".into(),
        })? as usize),
    };
    if rest.as_object().is_some_and(|o| o.is_empty()) {
        rest = serde_json::Value::Null;
    }
    let no_params = |rest: &serde_json::Value| {
        if rest.is_null() {
            Ok(())
        } else {
            Err(SetupError::PolicyParams {
                name: spec.name.clone(),
                reason: format!("unexpected parameters {rest}"),
            })
        }
    };
    let base: Box<dyn SchedulingPolicy> = match spec.name.as_str() {
        "round-robin" => {
            no_params(&rest)?;
            Box::new(RoundRobin::new())
        }
        "earliest-finish" | "eft" => {
            no_params(&rest)?;
            Box::new(EarliestFinish)
        }
        "min-min" => {
            no_params(&rest)?;
            Box::new(MinMin)
        }
        "pinned" => {
            let p: PinnedParams = params(spec, rest)?;
            Box::new(Pinned::new(p.workflow_vms, p.task_vms))
        }
        other => {
            return Err(SetupError::UnknownPolicy {
                kind: "scheduling",
                name: other.into(),
            })
        }
    };
    Ok(match max_hops {
        Some(h) => Box::new(Localized::new(base, h)),
        None => base,
    })
}
