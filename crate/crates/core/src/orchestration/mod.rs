//! Runtime control plane: task release, readiness tracking, brokering,
//! deadline enforcement and the wiring that turns an application plus an
//! infrastructure into a running simulation.

mod broker;
mod entities;
pub mod policy;
pub mod provision;
pub mod report;

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compute::{ComputeError, DeviceCompute, HostSpec, VmId, VmSpec};
use crate::des::{EntityId, EventTag, Scheduler, SimTime, Simulation};
use crate::network::{build_routing_tables, DeviceId, NetworkError, NetworkState, Packet, RouteEntry, RoutingTable, Topology};
use crate::trace::{detail, TraceRecord, TraceSink};
use crate::workflow::{validate, Application, ExecutionModel, OrphanPolicy, Task, TaskId, WorkflowError};

pub use policy::{
    Assignment, EarliestFinish, InputView, Localized, MinMin, NetworkView, Pinned, ReadyTask, RoundRobin,
    SchedulingPolicy, VmView,
};
pub use provision::{
    DeviceCapacity, Demand, HostCapacity, OnDemand, ProvisionDirective, ProvisioningPolicy, StaticProvisioning,
};
pub use report::{ensemble_report, EnsembleSummary, LinkUsage, RunReport, TaskRecord, TaskStatus, WorkflowSummary};

/// A task within an application: workflow index plus task id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskKey {
    pub workflow: usize,
    pub task: TaskId,
}

/// One execution of a task; periodic tasks run several times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExecKey {
    pub task: TaskKey,
    pub execution: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeadlinePolicy {
    /// Stop the task; its descendants stay pending.
    #[default]
    Kill,
    /// Let the task finish but flag the violation.
    Continue,
    /// Stop the task and mark every unfinished descendant killed.
    DropDescendants,
}

/// A named policy with free-form parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl PolicySpec {
    pub fn named(name: &str) -> Self {
        PolicySpec {
            name: name.into(),
            params: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub horizon: Option<f64>,
    pub deadline_policy: DeadlinePolicy,
    pub scheduler: PolicySpec,
    pub provisioner: PolicySpec,
    /// Size of a control message when the broker sits on a device.
    pub control_message_mb: f64,
    pub vm_boot_delay_s: f64,
    pub orphan_inputs: OrphanPolicy,
    /// Device hosting the broker. When unset, control messages are
    /// delivered instantly; otherwise they travel as packets.
    pub broker_device: Option<DeviceId>,
    /// Periodic scheduling pass in addition to event-driven ones.
    pub scheduling_interval_s: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            horizon: None,
            deadline_policy: DeadlinePolicy::Kill,
            scheduler: PolicySpec::named("round-robin"),
            provisioner: PolicySpec::named("static"),
            control_message_mb: 0.0,
            vm_boot_delay_s: 0.0,
            orphan_inputs: OrphanPolicy::Allow,
            broker_device: None,
            scheduling_interval_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub id: DeviceId,
    pub hosts: Vec<HostSpec>,
}

/// Devices, links, routes, hosts and the initial VM set.
#[derive(Debug, Clone)]
pub struct Infrastructure {
    pub topology: Topology,
    pub routes: RoutingTable,
    pub devices: Vec<DeviceSpec>,
    pub vms: Vec<VmSpec>,
}

impl Infrastructure {
    /// Builds min-hop routes, applies overrides, and gives every topology
    /// device a (possibly empty) host list.
    pub fn new(
        topology: Topology,
        devices: Vec<DeviceSpec>,
        vms: Vec<VmSpec>,
        overrides: &[RouteEntry],
    ) -> Result<Self, NetworkError> {
        let mut routes = build_routing_tables(&topology)?;
        routes.apply_overrides(&topology, overrides)?;
        let mut by_id: BTreeMap<DeviceId, DeviceSpec> = BTreeMap::new();
        for d in devices {
            if !topology.contains(d.id) {
                return Err(NetworkError::UnknownDevice(d.id));
            }
            if by_id.insert(d.id, d.clone()).is_some() {
                return Err(NetworkError::DuplicateDevice(d.id));
            }
        }
        for id in topology.devices() {
            by_id.entry(id).or_insert(DeviceSpec { id, hosts: Vec::new() });
        }
        Ok(Infrastructure {
            topology,
            routes,
            devices: by_id.into_values().collect(),
            vms,
        })
    }
}

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("placing VM {vm}: {source}")]
    Placement { vm: VmId, source: ComputeError },
    #[error("no device can host VM {0}")]
    Unplaceable(VmId),
    #[error("unknown {kind} policy {name:?}")]
    UnknownPolicy { kind: &'static str, name: String },
    #[error("policy {name}: {reason}")]
    PolicyParams { name: String, reason: String },
    #[error("configuration: {0}")]
    Config(String),
}

/// What travels over the network.
#[derive(Debug)]
pub enum Cargo {
    File {
        task: TaskKey,
        file: String,
        execution: u32,
    },
    Control {
        to: EntityId,
        message: Box<Message>,
    },
}

/// Event payload exchanged between the simulation entities.
#[derive(Debug)]
pub enum Message {
    Start,
    ReleaseDue(TaskKey),
    Release(TaskKey),
    Ready(TaskKey),
    Completed(TaskKey),
    Withdraw(Vec<TaskKey>),
    Timer,
    Deadline(TaskKey),
    Reactivate(TaskKey),
    Inject { at: DeviceId, packet: Packet<Cargo> },
    Arrive { at: DeviceId, packet: Packet<Cargo> },
    TxDone { link: (DeviceId, DeviceId) },
    FileArrived { task: TaskKey, file: String, execution: u32 },
    Submit { exec: ExecKey, vm: VmId, length: f64 },
    Cancel { exec: ExecKey, vm: VmId },
    ExecFinished { exec: ExecKey, vm: VmId },
    ExecFailed { exec: ExecKey, reason: String },
    CreateVm(VmSpec),
    VmBooted(VmId),
    VmTick(VmId),
    DestroyVm { vm: VmId },
    VmCreated { vm: VmId },
    VmCreateFailed { vm: VmId },
    VmDestroyed { vm: VmId, killed: Vec<ExecKey> },
    VmDestroyFailed { vm: VmId },
}

impl EventTag for Message {
    fn tag(&self) -> &'static str {
        match self {
            Message::Start => "start",
            Message::ReleaseDue(_) => "release-due",
            Message::Release(_) => "release",
            Message::Ready(_) => "ready",
            Message::Completed(_) => "completed",
            Message::Withdraw(_) => "withdraw",
            Message::Timer => "timer",
            Message::Deadline(_) => "deadline",
            Message::Reactivate(_) => "reactivate",
            Message::Inject { .. } => "inject",
            Message::Arrive { .. } => "arrive",
            Message::TxDone { .. } => "tx-done",
            Message::FileArrived { .. } => "file-arrived",
            Message::Submit { .. } => "submit",
            Message::Cancel { .. } => "cancel",
            Message::ExecFinished { .. } => "exec-finished",
            Message::ExecFailed { .. } => "exec-failed",
            Message::CreateVm(_) => "create-vm",
            Message::VmBooted(_) => "vm-booted",
            Message::VmTick(_) => "vm-tick",
            Message::DestroyVm { .. } => "destroy-vm",
            Message::VmCreated { .. } => "vm-created",
            Message::VmCreateFailed { .. } => "vm-create-failed",
            Message::VmDestroyed { .. } => "vm-destroyed",
            Message::VmDestroyFailed { .. } => "vm-destroy-failed",
        }
    }
}

#[derive(Debug)]
pub(crate) struct Directory {
    pub task_manager: EntityId,
    pub engine: EntityId,
    pub broker: EntityId,
    pub network: EntityId,
    pub devices: BTreeMap<DeviceId, EntityId>,
}

/// State shared by every entity of one run.
#[derive(Clone)]
pub(crate) struct Ctx {
    pub app: Rc<Application>,
    pub config: Rc<RunConfig>,
    pub trace: TraceSink,
    pub ids: Rc<Directory>,
    pub compute: Rc<RefCell<BTreeMap<DeviceId, DeviceCompute<ExecKey>>>>,
    pub network: Rc<RefCell<NetworkState<Cargo>>>,
    pub topology: Rc<Topology>,
    /// Tasks killed or marked missed, including ones not yet released.
    pub terminated: Rc<RefCell<BTreeSet<TaskKey>>>,
}

impl Ctx {
    pub fn task(&self, key: TaskKey) -> &Task {
        self.app.workflows[key.workflow]
            .task(key.task)
            .expect("task keys are built from the application")
    }

    pub fn subject(&self, key: TaskKey) -> String {
        format!("{}:{}", self.app.workflows[key.workflow].workflow_id, key.task)
    }

    pub fn horizon(&self) -> Option<SimTime> {
        self.config.horizon.map(SimTime::new)
    }

    /// Sends a control message. Between distinct devices, with a broker
    /// device configured, it travels as a packet; otherwise it is immediate.
    pub fn send(
        &self,
        sched: &mut Scheduler<Message>,
        from: EntityId,
        from_device: Option<DeviceId>,
        to: EntityId,
        to_device: Option<DeviceId>,
        msg: Message,
    ) {
        let now = sched.now();
        match (self.config.broker_device, from_device, to_device) {
            (Some(_), Some(a), Some(b)) if a != b => {
                let packet = self.network.borrow_mut().new_packet(
                    self.config.control_message_mb,
                    a,
                    b,
                    Cargo::Control {
                        to,
                        message: Box::new(msg),
                    },
                );
                post(sched, now, from, self.ids.network, Message::Inject { at: a, packet });
            }
            _ => post(sched, now, from, to, msg),
        }
    }
}

pub(crate) fn post(sched: &mut Scheduler<Message>, at: SimTime, from: EntityId, to: EntityId, msg: Message) {
    sched
        .schedule(at, from, to, msg)
        .expect("entities only schedule at or after the current time");
}

pub(crate) fn device_entity_name(d: DeviceId) -> String {
    format!("device-{d}")
}

/// Replaces characters that would break a trace line.
pub(crate) fn clean(s: impl fmt::Display) -> String {
    s.to_string()
        .chars()
        .map(|c| if matches!(c, ',' | ';' | '\n' | '\r') { ' ' } else { c })
        .collect()
}

/// Result of one run: the trace (ending with an `end` record) and the final clock.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub end_time: f64,
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn report(&self, app: &Application) -> RunReport {
        RunReport::from_trace(app, &self.trace)
    }
}

/// Runs `app` on `infra` with the policies named in `config`.
pub fn simulate(app: &Application, infra: &Infrastructure, config: &RunConfig) -> Result<RunOutput, SetupError> {
    let scheduling = policy::from_spec(&config.scheduler)?;
    let provisioning = provision::from_spec(&config.provisioner)?;
    simulate_with(app, infra, config, scheduling, provisioning)
}

/// Runs with caller-supplied policies.
pub fn simulate_with(
    app: &Application,
    infra: &Infrastructure,
    config: &RunConfig,
    scheduling: Box<dyn SchedulingPolicy>,
    mut provisioning: Box<dyn ProvisioningPolicy>,
) -> Result<RunOutput, SetupError> {
    check_config(app, infra, config)?;
    let mut warnings = Vec::new();
    for wf in &app.workflows {
        warnings.extend(validate(wf, config.orphan_inputs)?.warnings);
    }

    let trace = TraceSink::new();
    let mut compute: BTreeMap<DeviceId, DeviceCompute<ExecKey>> = infra
        .devices
        .iter()
        .map(|d| (d.id, DeviceCompute::new(d.id, d.hosts.clone())))
        .collect();
    let mut initial = BTreeMap::new();
    for vm in &infra.vms {
        let device = match vm.device {
            Some(d) => {
                if !compute.contains_key(&d) {
                    return Err(NetworkError::UnknownDevice(d).into());
                }
                d
            }
            None => {
                let caps: Vec<DeviceCapacity> = compute.values().map(DeviceCapacity::of).collect();
                provisioning.place(vm, &caps).ok_or(SetupError::Unplaceable(vm.id))?
            }
        };
        let dc = compute.get_mut(&device).ok_or(NetworkError::UnknownDevice(device))?;
        let host = dc
            .create_vm(vm.clone(), SimTime::ZERO, false)
            .map_err(|source| SetupError::Placement { vm: vm.id, source })?;
        if initial.insert(vm.id, device).is_some() {
            return Err(SetupError::Placement {
                vm: vm.id,
                source: ComputeError::DuplicateVm(vm.id),
            });
        }
        trace.record(
            SimTime::ZERO,
            device_entity_name(device),
            "vm_created",
            format!("vm:{}", vm.id),
            detail([("host", host.to_string()), ("device", device.to_string())]),
        );
    }

    let mut sim: Simulation<Message> = Simulation::new();
    let first_device = 4u32;
    let ids = Rc::new(Directory {
        task_manager: EntityId(0),
        engine: EntityId(1),
        broker: EntityId(2),
        network: EntityId(3),
        devices: compute
            .keys()
            .enumerate()
            .map(|(i, &d)| (d, EntityId(first_device + i as u32)))
            .collect(),
    });
    let device_ids: Vec<DeviceId> = compute.keys().copied().collect();
    let ctx = Ctx {
        app: Rc::new(app.clone()),
        config: Rc::new(config.clone()),
        trace: trace.clone(),
        ids: ids.clone(),
        compute: Rc::new(RefCell::new(compute)),
        network: Rc::new(RefCell::new(NetworkState::new(&infra.topology, infra.routes.clone()))),
        topology: Rc::new(infra.topology.clone()),
        terminated: Rc::default(),
    };

    let broker = broker::Broker::new(ctx.clone(), scheduling, provisioning, &initial);
    let entities: Vec<Box<dyn crate::des::Entity<Message>>> = vec![
        Box::new(entities::TaskManager::new(ctx.clone())),
        Box::new(entities::WorkflowEngine::new(ctx.clone())),
        Box::new(broker),
        Box::new(entities::NetworkEntity::new(ctx.clone())),
    ];
    for e in entities {
        sim.register_entity(e).expect("registration precedes the run");
    }
    for d in device_ids {
        sim.register_entity(Box::new(entities::DeviceEntity::new(ctx.clone(), d)))
            .expect("registration precedes the run");
    }

    let sched = sim.scheduler();
    post(sched, SimTime::ZERO, ids.broker, ids.broker, Message::Start);
    post(sched, SimTime::ZERO, ids.task_manager, ids.task_manager, Message::Start);
    let end = sim.run(ctx.horizon());
    trace.record(end, "simulation", "end", "", "");
    Ok(RunOutput {
        trace: trace.snapshot(),
        end_time: end.as_secs(),
        warnings,
    })
}

fn check_config(app: &Application, infra: &Infrastructure, config: &RunConfig) -> Result<(), SetupError> {
    let bad = |s: String| Err(SetupError::Config(s));
    if let Some(h) = config.horizon {
        if !(h >= 0.0) {
            return bad(format!("horizon must be non-negative, got {h}"));
        }
    }
    if !(config.control_message_mb >= 0.0) {
        return bad("control_message_mb must be non-negative".into());
    }
    if !(config.vm_boot_delay_s >= 0.0) {
        return bad("vm_boot_delay_s must be non-negative".into());
    }
    if let Some(i) = config.scheduling_interval_s {
        if !(i > 0.0) {
            return bad("scheduling_interval_s must be positive".into());
        }
    }
    if let Some(d) = config.broker_device {
        if !infra.topology.contains(d) {
            return bad(format!("broker_device {d} is not in the topology"));
        }
    }
    if config.horizon.is_none() {
        for t in app.workflows.iter().flat_map(|w| w.tasks()) {
            if let ExecutionModel::Periodic { repetitions: None, .. } = t.def.execution {
                return bad(format!(
                    "task {}:{} repeats without limit but no horizon is set",
                    t.workflow_id,
                    t.id()
                ));
            }
        }
    }
    Ok(())
}
