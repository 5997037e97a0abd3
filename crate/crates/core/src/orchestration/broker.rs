use std::collections::{BTreeMap, BTreeSet};

use super::policy::{InputView, NetworkView, ReadyTask, SchedulingPolicy, VmView};
use super::provision::{Demand, DeviceCapacity, ProvisionDirective, ProvisioningPolicy};
use super::{clean, post, Cargo, Ctx, DeadlinePolicy, ExecKey, Message, TaskKey};
use crate::compute::{VmId, VmState};
use crate::des::{Entity, EntityId, EventId, Scheduler, SimEvent, SimTime};
use crate::network::DeviceId;
use crate::trace::detail;
use crate::workflow::{apply_selectivity, next_activation, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Pending,
    Ready,
    Staging,
    Executing,
    Completed,
    Missed,
    Killed,
    /// Ready, but an input was never emitted by its producer.
    Unsatisfiable,
}

impl Phase {
    fn is_dead(self) -> bool {
        matches!(self, Phase::Missed | Phase::Killed)
    }
}

struct TaskState {
    phase: Phase,
    vm: Option<VmId>,
    device: Option<DeviceId>,
    awaiting: BTreeSet<String>,
    submitted: u32,
    completed: u32,
    emitted: BTreeSet<String>,
    deadline_event: Option<EventId>,
    reactivation: Option<EventId>,
    missing: Option<String>,
    ready_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VmPhase {
    Booting,
    Running,
    Destroying,
}

struct VmInfo {
    device: DeviceId,
    dynamic: bool,
    phase: VmPhase,
}

pub(crate) struct Broker {
    ctx: Ctx,
    scheduling: Box<dyn SchedulingPolicy>,
    provisioning: Box<dyn ProvisioningPolicy>,
    tasks: BTreeMap<TaskKey, TaskState>,
    queue: Vec<TaskKey>,
    vms: BTreeMap<VmId, VmInfo>,
    next_vm: u32,
    timer: Option<EventId>,
    /// Whether anything besides the timer reached the broker since the last tick.
    stirred: bool,
}

impl Broker {
    pub fn new(
        ctx: Ctx,
        scheduling: Box<dyn SchedulingPolicy>,
        provisioning: Box<dyn ProvisioningPolicy>,
        initial: &BTreeMap<VmId, DeviceId>,
    ) -> Self {
        let mut tasks = BTreeMap::new();
        for (w, wf) in ctx.app.workflows.iter().enumerate() {
            for t in wf.tasks() {
                tasks.insert(
                    TaskKey {
                        workflow: w,
                        task: t.id(),
                    },
                    TaskState {
                        phase: Phase::Pending,
                        vm: None,
                        device: None,
                        awaiting: BTreeSet::new(),
                        submitted: 0,
                        completed: 0,
                        emitted: BTreeSet::new(),
                        deadline_event: None,
                        reactivation: None,
                        missing: None,
                        ready_at: SimTime::ZERO,
                    },
                );
            }
        }
        let vms = initial
            .iter()
            .map(|(&id, &device)| {
                (
                    id,
                    VmInfo {
                        device,
                        dynamic: false,
                        phase: VmPhase::Running,
                    },
                )
            })
            .collect();
        let next_vm = initial.keys().map(|v| v.0 + 1).max().unwrap_or(0);
        Broker {
            ctx,
            scheduling,
            provisioning,
            tasks,
            queue: Vec::new(),
            vms,
            next_vm,
            timer: None,
            stirred: false,
        }
    }

    fn me(&self) -> EntityId {
        self.ctx.ids.broker
    }

    fn record(&self, now: SimTime, kind: &str, key: TaskKey, detail: String) {
        self.ctx.trace.record(now, "broker", kind, self.ctx.subject(key), detail);
    }

    fn to_device(&self, sched: &mut Scheduler<Message>, device: DeviceId, msg: Message) {
        self.ctx.send(
            sched,
            self.me(),
            self.ctx.config.broker_device,
            self.ctx.ids.devices[&device],
            Some(device),
            msg,
        );
    }

    fn key(&self, workflow: usize, task: TaskId) -> TaskKey {
        TaskKey { workflow, task }
    }

    fn on_start(&mut self, sched: &mut Scheduler<Message>) {
        let keys: Vec<TaskKey> = self.tasks.keys().copied().collect();
        for key in keys {
            if let Some(d) = self.ctx.app.task_deadline(key.workflow, key.task) {
                let id = sched
                    .schedule(SimTime::new(d), self.me(), self.me(), Message::Deadline(key))
                    .expect("deadlines are non-negative");
                self.tasks.get_mut(&key).expect("known").deadline_event = Some(id);
            }
        }
    }

    fn on_ready(&mut self, key: TaskKey, sched: &mut Scheduler<Message>) {
        let now = sched.now();
        let task = self.ctx.task(key);
        let wf = &self.ctx.app.workflows[key.workflow];
        let missing = task.def.inputs.iter().find(|f| {
            wf.producer(&f.name)
                .is_some_and(|p| !self.tasks[&self.key(key.workflow, p)].emitted.contains(&f.name))
        });
        let st = self.tasks.get_mut(&key).expect("known");
        if st.phase != Phase::Pending {
            return;
        }
        st.ready_at = now;
        if let Some(f) = missing {
            st.phase = Phase::Unsatisfiable;
            st.missing = Some(f.name.clone());
            return;
        }
        st.phase = Phase::Ready;
        self.queue.push(key);
        self.cycle(sched);
    }

    fn vm_views(&self, now: SimTime) -> Vec<VmView> {
        let compute = self.ctx.compute.borrow();
        let mut staging: BTreeMap<VmId, (usize, f64)> = BTreeMap::new();
        for (&k, st) in &self.tasks {
            if st.phase == Phase::Staging {
                let e = staging.entry(st.vm.expect("staging tasks have a VM")).or_default();
                e.0 += 1;
                e.1 += self.ctx.task(k).runtime();
            }
        }
        self.vms
            .iter()
            .filter(|(_, info)| info.phase == VmPhase::Running)
            .filter_map(|(&id, info)| {
                let slot = compute.get(&info.device)?.vm(id)?;
                if slot.state != VmState::Running {
                    return None;
                }
                let (n, w) = staging.get(&id).copied().unwrap_or_default();
                Some(VmView {
                    id,
                    device: info.device,
                    mips: slot.runtime.spec.mips,
                    pes: slot.runtime.spec.pes,
                    scheduler: slot.runtime.kind(),
                    active: slot.runtime.active_count() + n,
                    remaining_work: slot.runtime.remaining_work(now) + w,
                    dynamic: info.dynamic,
                })
            })
            .collect()
    }

    fn ready_view(&self, key: TaskKey) -> ReadyTask {
        let task = self.ctx.task(key);
        let wf = &self.ctx.app.workflows[key.workflow];
        ReadyTask {
            key,
            workflow_id: wf.workflow_id.clone(),
            task: key.task,
            length: task.runtime(),
            inputs: task
                .def
                .inputs
                .iter()
                .map(|f| InputView {
                    file: f.name.clone(),
                    size: f.size,
                    source: wf
                        .producer(&f.name)
                        .and_then(|p| self.tasks[&self.key(key.workflow, p)].device),
                })
                .collect(),
            ready_at: self.tasks[&key].ready_at,
        }
    }

    /// One provisioning plus scheduling pass.
    fn cycle(&mut self, sched: &mut Scheduler<Message>) {
        let now = sched.now();
        self.provision(sched);
        if self.queue.is_empty() {
            return;
        }
        let views = self.vm_views(now);
        let ready: Vec<ReadyTask> = self.queue.iter().map(|&k| self.ready_view(k)).collect();
        let decisions = {
            let net = self.ctx.network.borrow();
            let view = NetworkView::new(&self.ctx.topology, net.routes());
            self.scheduling.decide(&ready, &views, &view, now)
        };
        let running: BTreeSet<VmId> = views.iter().map(|v| v.id).collect();
        let mut taken = BTreeSet::new();
        let mut accepted = Vec::new();
        for a in decisions {
            let reason = if !self.queue.contains(&a.task) {
                Some("task-not-ready")
            } else if taken.contains(&a.task) {
                Some("duplicate-assignment")
            } else if !running.contains(&a.vm) {
                Some("vm-not-running")
            } else {
                None
            };
            match reason {
                Some(r) if self.tasks.contains_key(&a.task) => self.record(
                    now,
                    "policy_error",
                    a.task,
                    detail([("reason", r.to_string()), ("vm", a.vm.to_string())]),
                ),
                Some(r) => log::warn!("policy assigned unknown task {:?}: {r}", a.task),
                None => {
                    taken.insert(a.task);
                    accepted.push(a);
                }
            }
        }
        self.queue.retain(|k| !taken.contains(k));
        for a in accepted {
            self.assign(a.task, a.vm, sched);
        }
        self.arm_timer(sched);
    }

    fn arm_timer(&mut self, sched: &mut Scheduler<Message>) {
        let Some(interval) = self.ctx.config.scheduling_interval_s else {
            return;
        };
        if self.timer.is_none() && !self.queue.is_empty() {
            let me = self.me();
            self.timer = Some(sched.schedule_in(interval, me, me, Message::Timer).expect("positive interval"));
        }
    }

    fn provision(&mut self, sched: &mut Scheduler<Message>) {
        let now = sched.now();
        let demand = Demand {
            unassigned: self.queue.len(),
            booting: self.vms.values().filter(|v| v.phase == VmPhase::Booting).count(),
        };
        let views = self.vm_views(now);
        let caps: Vec<DeviceCapacity> = self.ctx.compute.borrow().values().map(DeviceCapacity::of).collect();
        let directives = self.provisioning.decide(&demand, &views, &caps, now);
        let held: BTreeSet<VmId> = self
            .tasks
            .values()
            .filter(|t| t.reactivation.is_some())
            .filter_map(|t| t.vm)
            .collect();
        for d in directives {
            match d {
                ProvisionDirective::Create { device, mut spec } => {
                    if !self.ctx.ids.devices.contains_key(&device) {
                        log::warn!("provisioning targeted unknown device {device}");
                        continue;
                    }
                    spec.id = VmId(self.next_vm);
                    spec.device = Some(device);
                    self.next_vm += 1;
                    self.vms.insert(
                        spec.id,
                        VmInfo {
                            device,
                            dynamic: true,
                            phase: VmPhase::Booting,
                        },
                    );
                    self.to_device(sched, device, Message::CreateVm(spec));
                }
                ProvisionDirective::Destroy { vm } => {
                    let Some(info) = self.vms.get_mut(&vm) else { continue };
                    if info.phase != VmPhase::Running || held.contains(&vm) {
                        continue;
                    }
                    info.phase = VmPhase::Destroying;
                    let device = info.device;
                    self.to_device(sched, device, Message::DestroyVm { vm });
                }
            }
        }
    }

    fn assign(&mut self, key: TaskKey, vm: VmId, sched: &mut Scheduler<Message>) {
        let now = sched.now();
        let device = self.vms[&vm].device;
        self.record(
            now,
            "schedule",
            key,
            detail([("vm", vm.to_string()), ("device", device.to_string())]),
        );
        let wf = &self.ctx.app.workflows[key.workflow];
        let mut transfers = Vec::new();
        for f in &self.ctx.task(key).def.inputs {
            let Some(p) = wf.producer(&f.name) else { continue };
            let src = self.tasks[&self.key(key.workflow, p)]
                .device
                .expect("a completed producer has a device");
            if src != device {
                transfers.push((f.name.clone(), f.size, src));
            }
        }
        let st = self.tasks.get_mut(&key).expect("known");
        st.vm = Some(vm);
        st.device = Some(device);
        st.phase = Phase::Staging;
        st.awaiting = transfers.iter().map(|t| t.0.clone()).collect();
        for (name, size, src) in &transfers {
            self.send_file(key, name, *size, *src, device, 0, sched);
        }
        if self.tasks[&key].awaiting.is_empty() {
            self.submit(key, sched);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn send_file(
        &self,
        key: TaskKey,
        file: &str,
        size: f64,
        from: DeviceId,
        to: DeviceId,
        execution: u32,
        sched: &mut Scheduler<Message>,
    ) {
        let packet = self.ctx.network.borrow_mut().new_packet(
            size,
            from,
            to,
            Cargo::File {
                task: key,
                file: file.to_string(),
                execution,
            },
        );
        self.record(
            sched.now(),
            "transfer_start",
            key,
            detail([
                ("file", file.to_string()),
                ("size", size.to_string()),
                ("from", from.to_string()),
                ("to", to.to_string()),
                ("packet", packet.id.to_string()),
                ("exec", execution.to_string()),
            ]),
        );
        self.ctx.send(
            sched,
            self.me(),
            self.ctx.config.broker_device,
            self.ctx.ids.network,
            Some(from),
            Message::Inject { at: from, packet },
        );
    }

    fn submit(&mut self, key: TaskKey, sched: &mut Scheduler<Message>) {
        let length = self.ctx.task(key).runtime();
        let st = self.tasks.get_mut(&key).expect("known");
        let exec = ExecKey {
            task: key,
            execution: st.submitted,
        };
        st.submitted += 1;
        if st.phase != Phase::Completed {
            st.phase = Phase::Executing;
        }
        let (vm, device) = (st.vm.expect("assigned"), st.device.expect("assigned"));
        self.record(
            sched.now(),
            "exec_submit",
            key,
            detail([("vm", vm.to_string()), ("exec", exec.execution.to_string())]),
        );
        self.to_device(sched, device, Message::Submit { exec, vm, length });
    }

    fn on_file(&mut self, key: TaskKey, file: String, execution: u32, sched: &mut Scheduler<Message>) {
        let st = &self.tasks[&key];
        if st.phase.is_dead() {
            return;
        }
        self.record(
            sched.now(),
            "transfer_end",
            key,
            detail([("file", file.clone()), ("exec", execution.to_string())]),
        );
        let st = self.tasks.get_mut(&key).expect("known");
        if execution == 0 && st.phase == Phase::Staging && st.awaiting.remove(&file) && st.awaiting.is_empty() {
            self.submit(key, sched);
        }
    }

    fn on_finished(&mut self, exec: ExecKey, vm: VmId, sched: &mut Scheduler<Message>) {
        let now = sched.now();
        let key = exec.task;
        if self.tasks[&key].phase.is_dead() {
            return;
        }
        let task = self.ctx.task(key);
        let emitted: Vec<_> = apply_selectivity(task, self.ctx.config.seed, exec.execution);
        let names: Vec<String> = emitted.iter().map(|f| f.name.clone()).collect();
        self.record(
            now,
            "complete",
            key,
            detail([
                ("vm", vm.to_string()),
                ("exec", exec.execution.to_string()),
                ("emitted", names.join("|")),
            ]),
        );
        let st = self.tasks.get_mut(&key).expect("known");
        st.completed += 1;
        st.emitted = names.iter().cloned().collect();
        let first = st.phase != Phase::Completed;
        let device = st.device.expect("executed somewhere");
        let completed = st.completed;
        if first {
            st.phase = Phase::Completed;
            if let Some(id) = st.deadline_event.take() {
                sched.cancel(id);
            }
            post(sched, now, self.me(), self.ctx.ids.engine, Message::Completed(key));
        } else {
            self.redeliver(key, device, &names, exec.execution, sched);
        }
        let me = self.me();
        let next = next_activation(self.ctx.task(key), now, completed, self.ctx.horizon());
        self.tasks.get_mut(&key).expect("known").reactivation =
            next.map(|at| sched.schedule(at, me, me, Message::Reactivate(key)).expect("future"));
        self.cycle(sched);
    }

    /// Sends a later execution's outputs to children already placed elsewhere.
    fn redeliver(&self, key: TaskKey, from: DeviceId, emitted: &[String], execution: u32, sched: &mut Scheduler<Message>) {
        let task = self.ctx.task(key);
        for &c in &task.children {
            let ck = self.key(key.workflow, c);
            let cs = &self.tasks[&ck];
            let Some(to) = cs.device else { continue };
            if cs.phase.is_dead() || to == from {
                continue;
            }
            for f in &self.ctx.task(ck).def.inputs {
                if emitted.contains(&f.name) {
                    self.send_file(ck, &f.name, f.size, from, to, execution, sched);
                }
            }
        }
    }

    fn on_reactivate(&mut self, key: TaskKey, sched: &mut Scheduler<Message>) {
        let st = self.tasks.get_mut(&key).expect("known");
        st.reactivation = None;
        if st.phase != Phase::Completed {
            return;
        }
        let vm = st.vm.expect("assigned");
        if self.vms.get(&vm).is_some_and(|v| v.phase == VmPhase::Running) {
            self.submit(key, sched);
        } else {
            self.record(
                sched.now(),
                "policy_error",
                key,
                detail([("reason", "vm-gone".to_string()), ("vm", vm.to_string())]),
            );
        }
    }

    fn on_deadline(&mut self, key: TaskKey, sched: &mut Scheduler<Message>) {
        let st = self.tasks.get_mut(&key).expect("known");
        st.deadline_event = None;
        if st.phase == Phase::Completed || st.phase.is_dead() {
            return;
        }
        if st.phase == Phase::Executing && self.finishes_by(key, sched.now()) {
            return;
        }
        match self.ctx.config.deadline_policy {
            DeadlinePolicy::Kill => self.kill(key, Phase::Missed, "deadline", sched),
            DeadlinePolicy::Continue => self.record(sched.now(), "deadline_flagged", key, String::new()),
            DeadlinePolicy::DropDescendants => {
                self.kill(key, Phase::Missed, "deadline", sched);
                for d in self.ctx.app.workflows[key.workflow].descendants(key.task) {
                    let dk = self.key(key.workflow, d);
                    let phase = self.tasks[&dk].phase;
                    if phase != Phase::Completed && !phase.is_dead() {
                        self.kill(dk, Phase::Killed, "ancestor-deadline", sched);
                    }
                }
            }
        }
    }

    /// Whether the current execution completes no later than `at`; its
    /// completion event may still be queued behind the deadline.
    fn finishes_by(&self, key: TaskKey, at: SimTime) -> bool {
        let st = &self.tasks[&key];
        let (Some(vm), Some(device)) = (st.vm, st.device) else {
            return false;
        };
        let exec = ExecKey {
            task: key,
            execution: st.submitted.saturating_sub(1),
        };
        let compute = self.ctx.compute.borrow();
        compute
            .get(&device)
            .and_then(|d| d.vm(vm))
            .and_then(|s| s.runtime.projected_finish(&exec))
            .is_some_and(|t| t <= at)
    }

    fn kill(&mut self, key: TaskKey, phase: Phase, reason: &str, sched: &mut Scheduler<Message>) {
        let now = sched.now();
        let st = self.tasks.get_mut(&key).expect("known");
        let prev = st.phase;
        st.phase = phase;
        for id in [st.deadline_event.take(), st.reactivation.take()].into_iter().flatten() {
            sched.cancel(id);
        }
        let running = (prev == Phase::Executing).then(|| {
            (
                ExecKey {
                    task: key,
                    execution: st.submitted - 1,
                },
                st.vm.expect("assigned"),
                st.device.expect("assigned"),
            )
        });
        if let Some((exec, vm, device)) = running {
            self.to_device(sched, device, Message::Cancel { exec, vm });
        }
        if prev == Phase::Ready {
            self.queue.retain(|k| *k != key);
        }
        self.ctx.terminated.borrow_mut().insert(key);
        let kind = if phase == Phase::Missed { "deadline_missed" } else { "killed" };
        self.record(now, kind, key, detail([("reason", reason.to_string())]));
        post(sched, now, self.me(), self.ctx.ids.engine, Message::Withdraw(vec![key]));
    }

    fn on_timer(&mut self, sched: &mut Scheduler<Message>) {
        self.timer = None;
        let before = self.queue.len();
        let stirred = std::mem::take(&mut self.stirred);
        self.cycle(sched);
        if !stirred && self.queue.len() == before {
            // Nothing changed since the last tick; wait for the next event.
            if let Some(id) = self.timer.take() {
                sched.cancel(id);
            }
        }
    }
}

impl Entity<Message> for Broker {
    fn name(&self) -> String {
        "broker".into()
    }

    fn on_event(&mut self, ev: SimEvent<Message>, sched: &mut Scheduler<Message>) {
        if !matches!(ev.payload, Message::Timer) {
            self.stirred = true;
        }
        match ev.payload {
            Message::Start => self.on_start(sched),
            Message::Ready(key) => self.on_ready(key, sched),
            Message::FileArrived { task, file, execution } => self.on_file(task, file, execution, sched),
            Message::ExecFinished { exec, vm } => self.on_finished(exec, vm, sched),
            Message::ExecFailed { exec, reason } => {
                if !self.tasks[&exec.task].phase.is_dead() {
                    self.kill(exec.task, Phase::Killed, &clean(reason), sched);
                }
            }
            Message::Reactivate(key) => self.on_reactivate(key, sched),
            Message::Deadline(key) => self.on_deadline(key, sched),
            Message::Timer => self.on_timer(sched),
            Message::VmCreated { vm } => {
                if let Some(v) = self.vms.get_mut(&vm) {
                    v.phase = VmPhase::Running;
                }
                self.cycle(sched);
            }
            Message::VmCreateFailed { vm } => {
                self.vms.remove(&vm);
            }
            Message::VmDestroyed { vm, killed } => {
                self.vms.remove(&vm);
                for exec in killed {
                    if !self.tasks[&exec.task].phase.is_dead() {
                        self.kill(exec.task, Phase::Killed, "vm-destroyed", sched);
                    }
                }
                self.cycle(sched);
            }
            Message::VmDestroyFailed { vm } => {
                if let Some(v) = self.vms.get_mut(&vm) {
                    v.phase = VmPhase::Running;
                }
            }
            other => log::warn!("broker ignores {other:?}"),
        }
    }

    fn on_finish(&mut self, sched: &mut Scheduler<Message>) {
        let now = sched.now();
        for (&key, st) in &self.tasks {
            if st.phase == Phase::Unsatisfiable {
                let file = st.missing.clone().unwrap_or_default();
                self.record(
                    now,
                    "killed",
                    key,
                    detail([("reason", "missing-input".to_string()), ("file", file)]),
                );
            }
        }
    }
}
