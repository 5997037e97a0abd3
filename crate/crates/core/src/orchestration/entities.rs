use std::collections::{BTreeMap, BTreeSet};

use super::{clean, device_entity_name, post, Cargo, Ctx, ExecKey, Message, TaskKey};
use crate::compute::{ComputeError, Transition, VmId};
use crate::des::{Entity, EventId, Scheduler, SimEvent, SimTime};
use crate::network::{DeviceId, Packet, Routed};
use crate::trace::detail;
use crate::workflow::{parents_done, TaskId};

/// Releases every task at its entry time.
pub(crate) struct TaskManager {
    ctx: Ctx,
}

impl TaskManager {
    pub fn new(ctx: Ctx) -> Self {
        TaskManager { ctx }
    }
}

impl Entity<Message> for TaskManager {
    fn name(&self) -> String {
        "task-manager".into()
    }

    fn on_event(&mut self, ev: SimEvent<Message>, sched: &mut Scheduler<Message>) {
        let me = self.ctx.ids.task_manager;
        match ev.payload {
            Message::Start => {
                for (w, wf) in self.ctx.app.workflows.iter().enumerate() {
                    for t in wf.tasks() {
                        let key = TaskKey {
                            workflow: w,
                            task: t.id(),
                        };
                        post(sched, SimTime::new(t.def.entry_time), me, me, Message::ReleaseDue(key));
                    }
                }
            }
            Message::ReleaseDue(key) => {
                if self.ctx.terminated.borrow().contains(&key) {
                    return;
                }
                self.ctx
                    .trace
                    .record(sched.now(), self.name(), "release", self.ctx.subject(key), "");
                post(sched, sched.now(), me, self.ctx.ids.engine, Message::Release(key));
            }
            other => log::warn!("task-manager ignores {other:?}"),
        }
    }
}

#[derive(Default)]
struct Progress {
    released: BTreeSet<TaskId>,
    completed: BTreeSet<TaskId>,
    forwarded: BTreeSet<TaskId>,
    withdrawn: BTreeSet<TaskId>,
}

/// Tracks per-workflow dependency state and forwards tasks to the broker
/// once they are released and every parent has completed. Each workflow's
/// state is independent of the others.
pub(crate) struct WorkflowEngine {
    ctx: Ctx,
    progress: Vec<Progress>,
}

impl WorkflowEngine {
    pub fn new(ctx: Ctx) -> Self {
        let progress = ctx.app.workflows.iter().map(|_| Progress::default()).collect();
        WorkflowEngine { ctx, progress }
    }

    fn try_forward(&mut self, key: TaskKey, sched: &mut Scheduler<Message>) {
        let wf = &self.ctx.app.workflows[key.workflow];
        let p = &mut self.progress[key.workflow];
        if p.released.contains(&key.task)
            && !p.forwarded.contains(&key.task)
            && !p.withdrawn.contains(&key.task)
            && !p.completed.contains(&key.task)
            && parents_done(wf, key.task, &p.completed)
        {
            p.forwarded.insert(key.task);
            self.ctx
                .trace
                .record(sched.now(), "workflow-engine", "ready", self.ctx.subject(key), "");
            post(sched, sched.now(), self.ctx.ids.engine, self.ctx.ids.broker, Message::Ready(key));
        }
    }
}

impl Entity<Message> for WorkflowEngine {
    fn name(&self) -> String {
        "workflow-engine".into()
    }

    fn on_event(&mut self, ev: SimEvent<Message>, sched: &mut Scheduler<Message>) {
        match ev.payload {
            Message::Release(key) => {
                self.progress[key.workflow].released.insert(key.task);
                self.try_forward(key, sched);
            }
            Message::Completed(key) => {
                self.progress[key.workflow].completed.insert(key.task);
                let children: Vec<TaskId> = self.ctx.task(key).children.iter().copied().collect();
                for c in children {
                    self.try_forward(
                        TaskKey {
                            workflow: key.workflow,
                            task: c,
                        },
                        sched,
                    );
                }
            }
            Message::Withdraw(keys) => {
                for k in keys {
                    self.progress[k.workflow].withdrawn.insert(k.task);
                }
            }
            other => log::warn!("workflow-engine ignores {other:?}"),
        }
    }
}

/// Store-and-forward transport of files and control messages.
pub(crate) struct NetworkEntity {
    ctx: Ctx,
}

impl NetworkEntity {
    pub fn new(ctx: Ctx) -> Self {
        NetworkEntity { ctx }
    }

    fn present(&mut self, at: DeviceId, packet: Packet<Cargo>, sched: &mut Scheduler<Message>) {
        let now = sched.now();
        let me = self.ctx.ids.network;
        let id = packet.id;
        let routed = self.ctx.network.borrow_mut().route(at, packet, now);
        match routed {
            Ok(Routed::Delivered(p)) => self.deliver(at, p, sched),
            Ok(Routed::Transmitting { link, service_end }) => {
                post(sched, service_end, me, me, Message::TxDone { link });
            }
            Ok(Routed::Queued { .. }) => {}
            Err(e) => self.ctx.trace.record(
                now,
                "network",
                "net_error",
                format!("packet:{id}"),
                detail([("reason", clean(e))]),
            ),
        }
    }

    fn deliver(&mut self, at: DeviceId, packet: Packet<Cargo>, sched: &mut Scheduler<Message>) {
        let now = sched.now();
        let me = self.ctx.ids.network;
        let kind = match packet.payload {
            Cargo::File { .. } => "file",
            Cargo::Control { .. } => "control",
        };
        self.ctx.trace.record(
            now,
            "network",
            "deliver",
            format!("packet:{}", packet.id),
            detail([("device", at.to_string()), ("kind", kind.to_string())]),
        );
        match packet.payload {
            Cargo::File { task, file, execution } => self.ctx.send(
                sched,
                me,
                Some(at),
                self.ctx.ids.broker,
                self.ctx.config.broker_device,
                Message::FileArrived { task, file, execution },
            ),
            Cargo::Control { to, message } => post(sched, now, me, to, *message),
        }
    }
}

impl Entity<Message> for NetworkEntity {
    fn name(&self) -> String {
        "network".into()
    }

    fn on_event(&mut self, ev: SimEvent<Message>, sched: &mut Scheduler<Message>) {
        match ev.payload {
            Message::Inject { at, packet } | Message::Arrive { at, packet } => self.present(at, packet, sched),
            Message::TxDone { link } => {
                let now = sched.now();
                let me = self.ctx.ids.network;
                let (packet, hop, next) = self.ctx.network.borrow_mut().transmission_done(link, now);
                self.ctx.trace.record(
                    now,
                    "network",
                    "hop",
                    format!("packet:{}", packet.id),
                    detail([
                        ("from", hop.from.to_string()),
                        ("to", hop.to.to_string()),
                        ("size", hop.size.to_string()),
                        ("enqueued", hop.enqueued.to_string()),
                        ("start", hop.service_start.to_string()),
                        ("end", hop.service_end.to_string()),
                        ("arrival", hop.arrival.to_string()),
                    ]),
                );
                if let Some(end) = next {
                    post(sched, end, me, me, Message::TxDone { link });
                }
                post(sched, hop.arrival, me, me, Message::Arrive { at: link.1, packet });
            }
            other => log::warn!("network ignores {other:?}"),
        }
    }
}

/// Executes work on the VMs of one device.
pub(crate) struct DeviceEntity {
    ctx: Ctx,
    device: DeviceId,
    name: String,
    ticks: BTreeMap<VmId, EventId>,
}

impl DeviceEntity {
    pub fn new(ctx: Ctx, device: DeviceId) -> Self {
        DeviceEntity {
            ctx,
            device,
            name: device_entity_name(device),
            ticks: BTreeMap::new(),
        }
    }

    fn me(&self) -> crate::des::EntityId {
        self.ctx.ids.devices[&self.device]
    }

    fn notify_broker(&self, sched: &mut Scheduler<Message>, msg: Message) {
        self.ctx.send(
            sched,
            self.me(),
            Some(self.device),
            self.ctx.ids.broker,
            self.ctx.config.broker_device,
            msg,
        );
    }

    fn exec_record(&self, now: SimTime, kind: &str, exec: ExecKey, vm: VmId) {
        self.ctx.trace.record(
            now,
            self.name.clone(),
            kind,
            self.ctx.subject(exec.task),
            detail([("vm", vm.to_string()), ("exec", exec.execution.to_string())]),
        );
    }

    /// Traces newly started executions and the new share, then re-arms the
    /// VM's completion event.
    fn settle(&mut self, vm: VmId, t: &Transition<ExecKey>, sched: &mut Scheduler<Message>) {
        let now = sched.now();
        for &k in &t.started {
            self.exec_record(now, "exec_start", k, vm);
        }
        if let Some(old) = self.ticks.remove(&vm) {
            sched.cancel(old);
        }
        let next = {
            let compute = self.ctx.compute.borrow();
            let Some(slot) = compute[&self.device].vm(vm) else {
                return;
            };
            self.ctx.trace.record(
                now,
                self.name.clone(),
                "vm_share",
                format!("vm:{vm}"),
                detail([
                    ("active", slot.runtime.active_count().to_string()),
                    ("share", slot.runtime.share().to_string()),
                ]),
            );
            slot.runtime.next_completion()
        };
        if let Some(at) = next {
            let id = sched
                .schedule(at.max(now), self.me(), self.me(), Message::VmTick(vm))
                .expect("completion lies in the future");
            self.ticks.insert(vm, id);
        }
    }

    fn vm_record(&self, now: SimTime, kind: &str, vm: VmId, pairs: Vec<(&str, String)>) {
        self.ctx
            .trace
            .record(now, self.name.clone(), kind, format!("vm:{vm}"), detail(pairs));
    }
}

impl Entity<Message> for DeviceEntity {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn on_event(&mut self, ev: SimEvent<Message>, sched: &mut Scheduler<Message>) {
        let now = sched.now();
        match ev.payload {
            Message::Submit { exec, vm, length } => {
                let result = self
                    .ctx
                    .compute
                    .borrow_mut()
                    .get_mut(&self.device)
                    .expect("device exists")
                    .submit(vm, exec, length, now);
                match result {
                    Ok(t) => self.settle(vm, &t, sched),
                    Err(e) => {
                        self.exec_record(now, "exec_error", exec, vm);
                        self.notify_broker(
                            sched,
                            Message::ExecFailed {
                                exec,
                                reason: clean(e),
                            },
                        );
                    }
                }
            }
            Message::Cancel { exec, vm } => {
                let t = self
                    .ctx
                    .compute
                    .borrow_mut()
                    .get_mut(&self.device)
                    .and_then(|d| d.vm_mut(vm))
                    .and_then(|s| s.runtime.cancel(&exec, now));
                if let Some(t) = t {
                    self.exec_record(now, "exec_cancel", exec, vm);
                    self.settle(vm, &t, sched);
                }
            }
            Message::VmTick(vm) => {
                self.ticks.remove(&vm);
                let t = self
                    .ctx
                    .compute
                    .borrow_mut()
                    .get_mut(&self.device)
                    .and_then(|d| d.vm_mut(vm))
                    .map(|s| s.runtime.complete_due(now));
                let Some(t) = t else { return };
                for &k in &t.finished {
                    self.exec_record(now, "exec_end", k, vm);
                    self.notify_broker(sched, Message::ExecFinished { exec: k, vm });
                }
                self.settle(vm, &t, sched);
            }
            Message::CreateVm(spec) => {
                let vm = spec.id;
                let booting = self.ctx.config.vm_boot_delay_s > 0.0;
                let result = self
                    .ctx
                    .compute
                    .borrow_mut()
                    .get_mut(&self.device)
                    .expect("device exists")
                    .create_vm(spec, now, booting);
                match result {
                    Ok(host) => {
                        self.vm_record(
                            now,
                            "vm_created",
                            vm,
                            vec![("host", host.to_string()), ("device", self.device.to_string())],
                        );
                        if booting {
                            let me = self.me();
                            post(sched, now + self.ctx.config.vm_boot_delay_s, me, me, Message::VmBooted(vm));
                        } else {
                            self.notify_broker(sched, Message::VmCreated { vm });
                        }
                    }
                    Err(e) => {
                        self.vm_record(now, "vm_error", vm, vec![("reason", clean(e))]);
                        self.notify_broker(sched, Message::VmCreateFailed { vm });
                    }
                }
            }
            Message::VmBooted(vm) => {
                let ok = self
                    .ctx
                    .compute
                    .borrow_mut()
                    .get_mut(&self.device)
                    .is_some_and(|d| d.activate(vm, now).is_ok());
                if ok {
                    self.vm_record(now, "vm_ready", vm, vec![]);
                    self.notify_broker(sched, Message::VmCreated { vm });
                }
            }
            Message::DestroyVm { vm } => {
                let result = self
                    .ctx
                    .compute
                    .borrow_mut()
                    .get_mut(&self.device)
                    .expect("device exists")
                    .destroy_vm(vm, false, now);
                match result {
                    Ok(killed) => {
                        if let Some(old) = self.ticks.remove(&vm) {
                            sched.cancel(old);
                        }
                        self.vm_record(now, "vm_destroyed", vm, vec![]);
                        self.notify_broker(sched, Message::VmDestroyed { vm, killed });
                    }
                    Err(e) => {
                        self.vm_record(now, "vm_error", vm, vec![("reason", clean(&e))]);
                        if !matches!(e, ComputeError::UnknownVm(_)) {
                            self.notify_broker(sched, Message::VmDestroyFailed { vm });
                        }
                    }
                }
            }
            other => log::warn!("{} ignores {other:?}", self.name),
        }
    }
}
