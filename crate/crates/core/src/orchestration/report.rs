//! Run summaries computed purely from a trace.

use std::collections::{BTreeMap, HashMap};
use std::io;

use serde::Serialize;

use crate::trace::TraceRecord;
use crate::workflow::{Application, Ensemble, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskStatus {
    Pending,
    Ready,
    Scheduled,
    Transferring,
    Executing,
    Completed,
    DeadlineMissed,
    Killed,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Completed | TaskStatus::DeadlineMissed | TaskStatus::Killed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferSpan {
    pub file: String,
    pub size: f64,
    pub start: f64,
    pub end: Option<f64>,
}

/// Lifecycle of one task. Times refer to its first execution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRecord {
    pub workflow_id: String,
    pub task_id: u32,
    pub status: TaskStatus,
    pub deadline: Option<f64>,
    /// Missed its deadline, whether killed or flagged.
    pub deadline_violated: bool,
    pub kill_reason: Option<String>,
    pub vm: Option<u32>,
    pub device: Option<u32>,
    pub release_time: Option<f64>,
    pub ready_time: Option<f64>,
    pub schedule_time: Option<f64>,
    pub transfers: Vec<TransferSpan>,
    pub exec_start: Option<f64>,
    pub exec_end: Option<f64>,
    /// Completed executions; above one only for periodic tasks.
    pub executions: u32,
}

impl TaskRecord {
    /// Completed, unflagged, and finished no later than its deadline.
    pub fn met_deadline(&self) -> bool {
        self.status == TaskStatus::Completed
            && !self.deadline_violated
            && match (self.deadline, self.exec_end) {
                (Some(d), Some(end)) => end <= d,
                _ => true,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkflowSummary {
    pub workflow_id: String,
    pub tasks: usize,
    pub completed: usize,
    pub deadline_missed: usize,
    pub killed: usize,
    pub unfinished: usize,
    pub first_release: Option<f64>,
    pub last_exec_end: Option<f64>,
    /// Last first-execution end minus first release.
    pub makespan: Option<f64>,
    pub deadline: Option<f64>,
    /// Every task completed unflagged within its deadline.
    pub met_deadline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub ensemble_id: String,
    pub workflows: Vec<String>,
    /// Members whose every task completed within its deadline.
    pub completed_count: usize,
    pub deadline: Option<f64>,
    pub budget: Option<f64>,
    pub makespan: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkUsage {
    pub from: u32,
    pub to: u32,
    pub packets: usize,
    /// MB carried.
    pub volume: f64,
    pub busy_time: f64,
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub total_time: f64,
    pub released: usize,
    pub completed: usize,
    pub deadline_missed: usize,
    pub killed: usize,
    pub unfinished: usize,
    pub tasks: Vec<TaskRecord>,
    pub workflows: Vec<WorkflowSummary>,
    pub ensembles: Vec<EnsembleSummary>,
    pub links: Vec<LinkUsage>,
}

fn first_exec(r: &TraceRecord) -> bool {
    r.get("exec").is_none_or(|e| e == "0")
}

fn apply(rec: &mut TaskRecord, r: &TraceRecord) {
    let t = r.time;
    if r.kind == "complete" {
        rec.executions += 1;
    }
    if r.kind == "deadline_flagged" || r.kind == "deadline_missed" {
        rec.deadline_violated = true;
    }
    if rec.status.is_terminal() {
        return;
    }
    match r.kind.as_str() {
        "release" => rec.release_time = rec.release_time.or(Some(t)),
        "ready" => {
            rec.ready_time = Some(t);
            rec.status = TaskStatus::Ready;
        }
        "schedule" => {
            rec.schedule_time = Some(t);
            rec.vm = r.get("vm").and_then(|v| v.parse().ok());
            rec.device = r.get("device").and_then(|v| v.parse().ok());
            rec.status = TaskStatus::Scheduled;
        }
        "transfer_start" if first_exec(r) => {
            rec.transfers.push(TransferSpan {
                file: r.get("file").unwrap_or_default().to_string(),
                size: r.get_f64("size").unwrap_or(0.0),
                start: t,
                end: None,
            });
            rec.status = TaskStatus::Transferring;
        }
        "transfer_end" if first_exec(r) => {
            let file = r.get("file").unwrap_or_default();
            if let Some(s) = rec.transfers.iter_mut().find(|s| s.file == file && s.end.is_none()) {
                s.end = Some(t);
            }
        }
        "exec_start" if first_exec(r) => {
            rec.exec_start = Some(t);
            rec.status = TaskStatus::Executing;
        }
        "exec_end" if first_exec(r) => rec.exec_end = Some(t),
        "complete" => rec.status = TaskStatus::Completed,
        "deadline_missed" => {
            rec.status = TaskStatus::DeadlineMissed;
            rec.kill_reason = r.get("reason").map(str::to_string);
        }
        "killed" => {
            rec.status = TaskStatus::Killed;
            rec.kill_reason = r.get("reason").map(str::to_string);
        }
        _ => {}
    }
}

/// Summary of one ensemble from its members' workflow summaries.
pub fn ensemble_report(ensemble: &Ensemble, workflows: &[WorkflowSummary]) -> EnsembleSummary {
    let members: Vec<&WorkflowSummary> = workflows
        .iter()
        .filter(|w| ensemble.workflow_ids.contains(&w.workflow_id))
        .collect();
    EnsembleSummary {
        ensemble_id: ensemble.ensemble_id.clone(),
        workflows: ensemble.workflow_ids.clone(),
        completed_count: members.iter().filter(|w| w.met_deadline).count(),
        deadline: ensemble.deadline,
        budget: ensemble.budget,
        makespan: members.iter().filter_map(|w| w.makespan).reduce(f64::max),
    }
}

fn count(tasks: &[&TaskRecord], s: TaskStatus) -> usize {
    tasks.iter().filter(|t| t.status == s).count()
}

impl RunReport {
    pub fn from_trace(app: &Application, trace: &[TraceRecord]) -> RunReport {
        let wf_index: HashMap<&str, usize> = app
            .workflows
            .iter()
            .enumerate()
            .map(|(i, w)| (w.workflow_id.as_str(), i))
            .collect();
        let mut slots: BTreeMap<(usize, TaskId), TaskRecord> = BTreeMap::new();
        let mut order = Vec::new();
        for (w, wf) in app.workflows.iter().enumerate() {
            for t in wf.tasks() {
                order.push((w, t.id()));
                slots.insert(
                    (w, t.id()),
                    TaskRecord {
                        workflow_id: wf.workflow_id.clone(),
                        task_id: t.id().0,
                        status: TaskStatus::Pending,
                        deadline: app.task_deadline(w, t.id()),
                        deadline_violated: false,
                        kill_reason: None,
                        vm: None,
                        device: None,
                        release_time: None,
                        ready_time: None,
                        schedule_time: None,
                        transfers: Vec::new(),
                        exec_start: None,
                        exec_end: None,
                        executions: 0,
                    },
                );
            }
        }
        let mut links: BTreeMap<(u32, u32), LinkUsage> = BTreeMap::new();
        let mut total_time = 0.0f64;
        let mut saw_end = false;
        for r in trace {
            if r.entity == "simulation" && r.kind == "end" {
                total_time = r.time;
                saw_end = true;
                continue;
            }
            if !saw_end {
                total_time = total_time.max(r.time);
            }
            if r.kind == "hop" {
                let (Some(from), Some(to)) = (r.get("from"), r.get("to")) else { continue };
                let (Ok(from), Ok(to)) = (from.parse(), to.parse()) else { continue };
                let l = links.entry((from, to)).or_insert(LinkUsage {
                    from,
                    to,
                    packets: 0,
                    volume: 0.0,
                    busy_time: 0.0,
                    utilization: 0.0,
                });
                l.packets += 1;
                l.volume += r.get_f64("size").unwrap_or(0.0);
                l.busy_time += r.get_f64("end").unwrap_or(0.0) - r.get_f64("start").unwrap_or(0.0);
                continue;
            }
            let Some((wf, task)) = r.subject.rsplit_once(':') else { continue };
            let (Some(&w), Ok(task)) = (wf_index.get(wf), task.parse::<u32>()) else { continue };
            if let Some(rec) = slots.get_mut(&(w, TaskId(task))) {
                apply(rec, r);
            }
        }
        for l in links.values_mut() {
            l.utilization = if total_time > 0.0 { l.busy_time / total_time } else { 0.0 };
        }
        let tasks: Vec<TaskRecord> = order.iter().map(|k| slots.remove(k).expect("slot")).collect();

        let workflows: Vec<WorkflowSummary> = app
            .workflows
            .iter()
            .enumerate()
            .map(|(w, wf)| {
                let mine: Vec<&TaskRecord> = tasks.iter().filter(|t| t.workflow_id == wf.workflow_id).collect();
                let first_release = mine.iter().filter_map(|t| t.release_time).reduce(f64::min);
                let last_exec_end = mine.iter().filter_map(|t| t.exec_end).reduce(f64::max);
                WorkflowSummary {
                    workflow_id: wf.workflow_id.clone(),
                    tasks: mine.len(),
                    completed: count(&mine, TaskStatus::Completed),
                    deadline_missed: count(&mine, TaskStatus::DeadlineMissed),
                    killed: count(&mine, TaskStatus::Killed),
                    unfinished: mine.iter().filter(|t| !t.status.is_terminal()).count(),
                    first_release,
                    last_exec_end,
                    makespan: first_release.zip(last_exec_end).map(|(a, b)| b - a),
                    deadline: app.workflow_deadline(w),
                    met_deadline: mine.iter().all(|t| t.met_deadline()),
                }
            })
            .collect();
        let ensembles = app.ensembles.iter().map(|e| ensemble_report(e, &workflows)).collect();
        let all: Vec<&TaskRecord> = tasks.iter().collect();
        RunReport {
            total_time,
            released: tasks.iter().filter(|t| t.release_time.is_some()).count(),
            completed: count(&all, TaskStatus::Completed),
            deadline_missed: count(&all, TaskStatus::DeadlineMissed),
            killed: count(&all, TaskStatus::Killed),
            unfinished: tasks.iter().filter(|t| !t.status.is_terminal()).count(),
            tasks,
            workflows,
            ensembles,
            links: links.into_values().collect(),
        }
    }

    pub fn task(&self, workflow_id: &str, task: u32) -> Option<&TaskRecord> {
        self.tasks
            .iter()
            .find(|t| t.workflow_id == workflow_id && t.task_id == task)
    }

    pub fn workflow(&self, workflow_id: &str) -> Option<&WorkflowSummary> {
        self.workflows.iter().find(|w| w.workflow_id == workflow_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per task.
    pub fn write_tasks_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        #[derive(Serialize)]
        struct Row<'a> {
            workflow_id: &'a str,
            task_id: u32,
            status: TaskStatus,
            deadline_violated: bool,
            kill_reason: Option<&'a str>,
            vm: Option<u32>,
            device: Option<u32>,
            release_time: Option<f64>,
            ready_time: Option<f64>,
            schedule_time: Option<f64>,
            exec_start: Option<f64>,
            exec_end: Option<f64>,
            executions: u32,
        }
        let mut w = csv::Writer::from_writer(out);
        for t in &self.tasks {
            w.serialize(Row {
                workflow_id: &t.workflow_id,
                task_id: t.task_id,
                status: t.status,
                deadline_violated: t.deadline_violated,
                kill_reason: t.kill_reason.as_deref(),
                vm: t.vm,
                device: t.device,
                release_time: t.release_time,
                ready_time: t.ready_time,
                schedule_time: t.schedule_time,
                exec_start: t.exec_start,
                exec_end: t.exec_end,
                executions: t.executions,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}
