//! Workflow application model: tasks, files, dependencies, workflows and
//! ensembles.

mod model;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::des::SimTime;

pub use model::{
    Application, DataFile, Ensemble, ExecutionModel, SelectivityModel, Task, TaskDef, TaskId, Workflow,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkflowError {
    #[error("workflow {workflow}: dependency cycle through tasks {cycle:?}")]
    CycleDetected { workflow: String, cycle: Vec<u32> },
    #[error("workflow {workflow}: task {task} references unknown task {missing}")]
    DanglingReference {
        workflow: String,
        task: TaskId,
        missing: TaskId,
    },
    #[error("workflow {workflow}: task {task} consumes file {file} that no task produces")]
    OrphanInput {
        workflow: String,
        task: TaskId,
        file: String,
    },
    #[error("workflow {workflow}: task {task} reads output of task {producer} but does not list it as a parent")]
    ParentMismatch {
        workflow: String,
        task: TaskId,
        producer: TaskId,
    },
    #[error("workflow {workflow}: duplicate task id {task}")]
    DuplicateTask { workflow: String, task: TaskId },
    #[error("workflow {workflow}: file {file} is produced by both task {first} and task {second}")]
    DuplicateProducer {
        workflow: String,
        file: String,
        first: TaskId,
        second: TaskId,
    },
    #[error("workflow {workflow}: task {task}: {reason}")]
    InvalidTask {
        workflow: String,
        task: TaskId,
        reason: String,
    },
    #[error("parent/child links of task {task} in workflow {workflow} are not symmetric")]
    AsymmetricLinks { workflow: String, task: TaskId },
    #[error("workflow id {0:?} is empty or contains one of , ; = | or a line break")]
    InvalidName(String),
    #[error("duplicate workflow id {0}")]
    DuplicateWorkflow(String),
    #[error("duplicate ensemble id {0}")]
    DuplicateEnsemble(String),
    #[error("unknown workflow {0}")]
    UnknownWorkflow(String),
    #[error("workflow {workflow} belongs to ensembles {first} and {second}")]
    MultipleEnsembles {
        workflow: String,
        first: String,
        second: String,
    },
}

/// How inputs with no producing task are treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum OrphanPolicy {
    /// Source files, resident where the consuming task runs.
    #[default]
    Allow,
    Warn,
    Error,
}

/// Characters kept out of identifiers so they embed cleanly in trace lines.
pub const RESERVED: &[char] = &[',', ';', '=', '|', '\n', '\r'];

#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub topological_order: Vec<TaskId>,
    pub warnings: Vec<String>,
}

/// Checks task attributes, parent/child symmetry, acyclicity and input
/// provenance. Returns a topological order (smallest id first among ready
/// tasks) and any warnings.
pub fn validate(wf: &Workflow, orphans: OrphanPolicy) -> Result<Validation, WorkflowError> {
    let name = || wf.workflow_id.clone();
    if wf.workflow_id.is_empty() || wf.workflow_id.contains(RESERVED) {
        return Err(WorkflowError::InvalidName(wf.workflow_id.clone()));
    }
    let mut warnings = Vec::new();
    for t in wf.tasks() {
        let d = &t.def;
        let invalid = |reason: String| WorkflowError::InvalidTask {
            workflow: name(),
            task: d.id,
            reason,
        };
        if !(d.runtime > 0.0) || !d.runtime.is_finite() {
            return Err(invalid(format!("runtime must be positive, got {}", d.runtime)));
        }
        if !(d.entry_time >= 0.0) {
            return Err(invalid(format!("entry_time must be non-negative, got {}", d.entry_time)));
        }
        if let Some(dl) = d.deadline {
            if !(dl >= 0.0) {
                return Err(invalid(format!("deadline must be non-negative, got {dl}")));
            }
        }
        if let SelectivityModel::Fractional(p) = d.selectivity {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("selectivity probability must lie in [0, 1], got {p}")));
            }
        }
        if let ExecutionModel::Periodic { interval, .. } = d.execution {
            if !(interval > 0.0) {
                return Err(invalid(format!("periodic interval must be positive, got {interval}")));
            }
        }
        for f in d.inputs.iter().chain(&d.outputs) {
            if f.name.is_empty() || f.name.contains(RESERVED) {
                return Err(invalid(format!("file name {:?} is empty or contains one of , ; = | or a line break", f.name)));
            }
            if !(f.size >= 0.0) {
                return Err(invalid(format!("file {} has negative size", f.name)));
            }
        }
        if t.parents.contains(&d.id) {
            return Err(WorkflowError::CycleDetected {
                workflow: name(),
                cycle: vec![d.id.0],
            });
        }
        for p in &t.parents {
            let parent = wf.task(*p).ok_or(WorkflowError::DanglingReference {
                workflow: name(),
                task: d.id,
                missing: *p,
            })?;
            if !parent.children.contains(&d.id) {
                return Err(WorkflowError::AsymmetricLinks { workflow: name(), task: d.id });
            }
        }
        for c in &t.children {
            let child = wf.task(*c).ok_or(WorkflowError::DanglingReference {
                workflow: name(),
                task: d.id,
                missing: *c,
            })?;
            if !child.parents.contains(&d.id) {
                return Err(WorkflowError::AsymmetricLinks { workflow: name(), task: d.id });
            }
        }
        for f in &d.inputs {
            if wf.producer(&f.name).is_none() {
                match orphans {
                    OrphanPolicy::Allow => {}
                    OrphanPolicy::Warn => warnings.push(format!(
                        "workflow {}: task {} input {} has no producer; treated as a source file",
                        wf.workflow_id, d.id, f.name
                    )),
                    OrphanPolicy::Error => {
                        return Err(WorkflowError::OrphanInput {
                            workflow: name(),
                            task: d.id,
                            file: f.name.clone(),
                        })
                    }
                }
            }
        }
    }

    // Kahn's algorithm, smallest ready id first.
    let mut indegree: BTreeMap<TaskId, usize> = wf.tasks().iter().map(|t| (t.id(), t.parents.len())).collect();
    let mut ready: BTreeSet<TaskId> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&t, _)| t).collect();
    let mut order = Vec::with_capacity(wf.len());
    while let Some(t) = ready.pop_first() {
        order.push(t);
        for c in &wf.task(t).expect("indexed").children {
            let d = indegree.get_mut(c).expect("indexed");
            *d -= 1;
            if *d == 0 {
                ready.insert(*c);
            }
        }
    }
    if order.len() < wf.len() {
        return Err(WorkflowError::CycleDetected {
            workflow: name(),
            cycle: find_cycle(wf, &order),
        });
    }
    Ok(Validation {
        topological_order: order,
        warnings,
    })
}

/// A cycle among the tasks Kahn's algorithm could not order, rotated to
/// start at its smallest id.
fn find_cycle(wf: &Workflow, ordered: &[TaskId]) -> Vec<u32> {
    let done: BTreeSet<TaskId> = ordered.iter().copied().collect();
    let start = wf
        .task_ids()
        .filter(|t| !done.contains(t))
        .min()
        .expect("at least one unordered task");
    // Every unordered task has an unordered parent; walk parents until a repeat.
    let mut path = vec![start];
    let mut at = start;
    loop {
        let p = *wf
            .task(at)
            .expect("indexed")
            .parents
            .iter()
            .find(|p| !done.contains(p))
            .expect("unordered task keeps an unordered parent");
        if let Some(pos) = path.iter().position(|&x| x == p) {
            let mut cycle: Vec<u32> = path[pos..].iter().rev().map(|t| t.0).collect();
            let min_pos = cycle.iter().enumerate().min_by_key(|(_, &v)| v).map(|(i, _)| i).unwrap();
            cycle.rotate_left(min_pos);
            return cycle;
        }
        path.push(p);
        at = p;
    }
}

/// Whether every parent of `task` has completed.
pub fn parents_done(wf: &Workflow, task: TaskId, completed: &BTreeSet<TaskId>) -> bool {
    wf.task(task)
        .is_some_and(|t| t.parents.iter().all(|p| completed.contains(p)))
}

/// Released, not yet completed tasks whose parents have all completed.
pub fn ready_set(wf: &Workflow, completed: &BTreeSet<TaskId>, released: &BTreeSet<TaskId>) -> BTreeSet<TaskId> {
    released
        .iter()
        .copied()
        .filter(|t| !completed.contains(t) && parents_done(wf, *t, completed))
        .collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Generator for one execution of one task. Keyed only by
/// `(seed, workflow, task, execution)`, so draws do not depend on the order
/// in which tasks happen to complete.
pub fn task_rng(seed: u64, workflow_id: &str, task: TaskId, execution: u32) -> ChaCha8Rng {
    let mut k = splitmix64(seed);
    k = splitmix64(k ^ fnv1a(workflow_id));
    k = splitmix64(k ^ task.0 as u64);
    k = splitmix64(k ^ execution as u64);
    ChaCha8Rng::seed_from_u64(k)
}

/// Outputs actually emitted by one completed execution.
pub fn apply_selectivity(task: &Task, seed: u64, execution: u32) -> Vec<DataFile> {
    match task.def.selectivity {
        SelectivityModel::EmitAll => task.def.outputs.clone(),
        SelectivityModel::Fractional(p) => {
            let mut rng = task_rng(seed, &task.workflow_id, task.id(), execution);
            task.def
                .outputs
                .iter()
                .filter(|_| rng.random::<f64>() < p)
                .cloned()
                .collect()
        }
    }
}

/// Restart time after the `completed`-th completion (1-based), or `None`
/// when the task is single-shot, out of repetitions, or the restart would
/// fall beyond `horizon`.
pub fn next_activation(task: &Task, finished_at: SimTime, completed: u32, horizon: Option<SimTime>) -> Option<SimTime> {
    match task.def.execution {
        ExecutionModel::SingleShot => None,
        ExecutionModel::Periodic { interval, repetitions } => {
            if repetitions.is_some_and(|r| completed > r) {
                return None;
            }
            let next = finished_at + interval;
            if horizon.is_some_and(|h| next > h) {
                return None;
            }
            Some(next)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> BTreeSet<TaskId> {
        v.iter().copied().map(TaskId).collect()
    }

    /// Two tasks: 1 consumes the output of 0.
    fn pair() -> Workflow {
        Workflow::new(
            "0",
            vec![
                TaskDef::new(0, 1000.0).input("in", 10.0).output("mid", 10.0),
                TaskDef::new(1, 1000.0).input("mid", 10.0).output("out", 5.0),
            ],
            None,
            None,
        )
        .unwrap()
    }

    /// A(0) -> {B(1), C(2)} -> D(3)
    fn diamond() -> Workflow {
        Workflow::new(
            "d",
            vec![
                TaskDef::new(0, 1000.0).output("a_b", 0.0).output("a_c", 0.0),
                TaskDef::new(1, 1000.0).input("a_b", 0.0).output("b_d", 0.0),
                TaskDef::new(2, 1000.0).input("a_c", 0.0).output("c_d", 0.0),
                TaskDef::new(3, 1000.0).input("b_d", 0.0).input("c_d", 0.0),
            ],
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn file_edges_give_topological_order() {
        let wf = pair();
        assert_eq!(wf.task(TaskId(1)).unwrap().parents, ids(&[0]));
        assert_eq!(wf.task(TaskId(0)).unwrap().children, ids(&[1]));
        let v = validate(&wf, OrphanPolicy::Allow).unwrap();
        assert_eq!(v.topological_order, vec![TaskId(0), TaskId(1)]);
    }

    #[test]
    fn single_task_is_valid() {
        let wf = Workflow::new("s", vec![TaskDef::new(0, 5.0)], None, None).unwrap();
        assert_eq!(validate(&wf, OrphanPolicy::Allow).unwrap().topological_order, vec![TaskId(0)]);
    }

    #[test]
    fn two_cycle_detected() {
        let wf = Workflow::new(
            "c",
            vec![
                TaskDef::new(0, 1.0).with_parents(&[1]),
                TaskDef::new(1, 1.0).with_parents(&[0]),
            ],
            None,
            None,
        )
        .unwrap();
        assert_eq!(
            validate(&wf, OrphanPolicy::Allow).unwrap_err(),
            WorkflowError::CycleDetected {
                workflow: "c".into(),
                cycle: vec![0, 1]
            }
        );
    }

    #[test]
    fn longer_cycle_witness_is_a_cycle() {
        let wf = Workflow::new(
            "c",
            vec![
                TaskDef::new(0, 1.0),
                TaskDef::new(1, 1.0).with_parents(&[0, 3]),
                TaskDef::new(2, 1.0).with_parents(&[1]),
                TaskDef::new(3, 1.0).with_parents(&[2]),
            ],
            None,
            None,
        )
        .unwrap();
        let WorkflowError::CycleDetected { cycle, .. } = validate(&wf, OrphanPolicy::Allow).unwrap_err() else {
            panic!("expected a cycle");
        };
        assert_eq!(cycle, vec![1, 2, 3]);
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let wf = Workflow::new("s", vec![TaskDef::new(4, 1.0).with_parents(&[4])], None, None).unwrap();
        assert!(matches!(
            validate(&wf, OrphanPolicy::Allow),
            Err(WorkflowError::CycleDetected { .. })
        ));
    }

    #[test]
    fn dangling_parent() {
        let err = Workflow::new("x", vec![TaskDef::new(0, 1.0).with_parents(&[9])], None, None).unwrap_err();
        assert!(matches!(err, WorkflowError::DanglingReference { missing: TaskId(9), .. }));
    }

    #[test]
    fn explicit_parents_must_cover_file_edges() {
        let err = Workflow::new(
            "x",
            vec![
                TaskDef::new(0, 1.0).output("f", 1.0),
                TaskDef::new(1, 1.0).input("f", 1.0).with_parents(&[]),
            ],
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, WorkflowError::ParentMismatch { .. }));

        // Extra control-only parents are fine.
        let wf = Workflow::new(
            "x",
            vec![
                TaskDef::new(0, 1.0).output("f", 1.0),
                TaskDef::new(1, 1.0),
                TaskDef::new(2, 1.0).input("f", 1.0).with_parents(&[0, 1]),
            ],
            None,
            None,
        )
        .unwrap();
        assert_eq!(wf.task(TaskId(2)).unwrap().parents, ids(&[0, 1]));
    }

    #[test]
    fn orphan_policy() {
        let wf = pair();
        assert!(validate(&wf, OrphanPolicy::Allow).unwrap().warnings.is_empty());
        assert_eq!(validate(&wf, OrphanPolicy::Warn).unwrap().warnings.len(), 1);
        assert!(matches!(
            validate(&wf, OrphanPolicy::Error),
            Err(WorkflowError::OrphanInput { .. })
        ));
    }

    #[test]
    fn invalid_runtime() {
        let wf = Workflow::new("x", vec![TaskDef::new(0, -5.0)], None, None).unwrap();
        assert!(matches!(
            validate(&wf, OrphanPolicy::Allow),
            Err(WorkflowError::InvalidTask { .. })
        ));
    }

    #[test]
    fn duplicate_producer() {
        let err = Workflow::new(
            "x",
            vec![TaskDef::new(0, 1.0).output("f", 1.0), TaskDef::new(1, 1.0).output("f", 1.0)],
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, WorkflowError::DuplicateProducer { .. }));
    }

    #[test]
    fn diamond_ready_sets() {
        let wf = diamond();
        let all = ids(&[0, 1, 2, 3]);
        assert_eq!(ready_set(&wf, &ids(&[]), &all), ids(&[0]));
        assert_eq!(ready_set(&wf, &ids(&[0]), &all), ids(&[1, 2]));
        assert_eq!(ready_set(&wf, &ids(&[0, 1, 2]), &all), ids(&[3]));
        // Not yet released tasks are never ready.
        assert_eq!(ready_set(&wf, &ids(&[0]), &ids(&[0, 1])), ids(&[1]));
        assert_eq!(wf.descendants(TaskId(1)), ids(&[3]));
    }

    #[test]
    fn deadline_inheritance() {
        let mut wf_a = pair();
        wf_a.workflow_id = "a".into();
        let wf_b = Workflow::new(
            "b",
            vec![TaskDef {
                deadline: Some(3.0),
                ..TaskDef::new(0, 1.0)
            }],
            Some(7.0),
            None,
        )
        .unwrap();
        let app = Application::new(
            vec![wf_a, wf_b],
            vec![Ensemble {
                ensemble_id: "e".into(),
                workflow_ids: vec!["a".into(), "b".into()],
                deadline: Some(10.0),
                budget: None,
            }],
        )
        .unwrap();
        assert_eq!(app.task_deadline(0, TaskId(1)), Some(10.0));
        assert_eq!(app.task_deadline(1, TaskId(0)), Some(3.0));
        assert_eq!(app.workflow_deadline(1), Some(7.0));
    }

    #[test]
    fn ensemble_members_must_exist_and_be_unique() {
        let wf = pair();
        let e = |ids: &[&str]| Ensemble {
            ensemble_id: "e".into(),
            workflow_ids: ids.iter().map(|s| s.to_string()).collect(),
            deadline: None,
            budget: None,
        };
        assert!(matches!(
            Application::new(vec![wf.clone()], vec![e(&["nope"])]),
            Err(WorkflowError::UnknownWorkflow(_))
        ));
        assert!(matches!(
            Application::new(vec![wf], vec![e(&["0", "0"])]),
            Err(WorkflowError::DuplicateWorkflow(_))
        ));
    }

    fn with_selectivity(s: SelectivityModel) -> Task {
        let wf = Workflow::new(
            "w",
            vec![TaskDef {
                selectivity: s,
                ..TaskDef::new(0, 1.0).output("f1", 10.0)
            }],
            None,
            None,
        )
        .unwrap();
        wf.tasks()[0].clone()
    }

    #[test]
    fn emit_all_and_degenerate_fractional() {
        let t = with_selectivity(SelectivityModel::EmitAll);
        assert_eq!(apply_selectivity(&t, 0, 0), t.def.outputs);
        let t = with_selectivity(SelectivityModel::Fractional(1.0));
        assert_eq!(apply_selectivity(&t, 3, 9), t.def.outputs);
        let t = with_selectivity(SelectivityModel::Fractional(0.0));
        assert!(apply_selectivity(&t, 3, 9).is_empty());
    }

    #[test]
    fn fractional_half_keeps_about_half() {
        // Binomial(10000, 0.5) has sd 50, i.e. 0.005 in fraction; 0.02 is 4 sd.
        let t = with_selectivity(SelectivityModel::Fractional(0.5));
        let kept = (0..10_000).filter(|&i| !apply_selectivity(&t, 42, i).is_empty()).count();
        let frac = kept as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "kept fraction {frac}");
    }

    #[test]
    fn selectivity_is_reproducible() {
        let t = with_selectivity(SelectivityModel::Fractional(0.5));
        let a: Vec<_> = (0..50).map(|i| apply_selectivity(&t, 7, i).len()).collect();
        let b: Vec<_> = (0..50).map(|i| apply_selectivity(&t, 7, i).len()).collect();
        assert_eq!(a, b);
    }

    fn periodic(repetitions: Option<u32>) -> Task {
        let wf = Workflow::new(
            "p",
            vec![TaskDef {
                execution: ExecutionModel::Periodic {
                    interval: 5.0,
                    repetitions,
                },
                ..TaskDef::new(0, 1.0)
            }],
            None,
            None,
        )
        .unwrap();
        wf.tasks()[0].clone()
    }

    #[test]
    fn activations() {
        let single = with_selectivity(SelectivityModel::EmitAll);
        assert_eq!(next_activation(&single, SimTime::new(3.0), 1, None), None);
        let unbounded = periodic(None);
        assert_eq!(
            next_activation(&unbounded, SimTime::new(12.0), 1, None),
            Some(SimTime::new(17.0))
        );
        assert_eq!(next_activation(&unbounded, SimTime::new(12.0), 4, Some(SimTime::new(15.0))), None);
        let once = periodic(Some(1));
        assert_eq!(next_activation(&once, SimTime::new(1.0), 1, None), Some(SimTime::new(6.0)));
        assert_eq!(next_activation(&once, SimTime::new(7.0), 2, None), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Random DAG over n tasks: edges only from lower to higher index.
        fn random_dag() -> impl Strategy<Value = Workflow> {
            (1usize..15)
                .prop_flat_map(|n| (Just(n), proptest::collection::vec(any::<bool>(), n * n)))
                .prop_map(|(n, bits)| {
                    let defs = (0..n)
                        .map(|j| {
                            let parents: Vec<u32> = (0..j).filter(|&i| bits[i * n + j]).map(|i| i as u32).collect();
                            TaskDef::new(j as u32, 1.0).with_parents(&parents)
                        })
                        .collect();
                    Workflow::new("r", defs, None, None).unwrap()
                })
        }

        proptest! {
            #[test]
            fn repeated_ready_completion_drains_dag(wf in random_dag()) {
                validate(&wf, OrphanPolicy::Allow).unwrap();
                let released: BTreeSet<TaskId> = wf.task_ids().collect();
                let mut completed = BTreeSet::new();
                let mut seen = BTreeSet::new();
                loop {
                    let ready = ready_set(&wf, &completed, &released);
                    if ready.is_empty() { break; }
                    for t in ready {
                        prop_assert!(seen.insert(t), "task {} returned twice", t);
                        completed.insert(t);
                    }
                }
                prop_assert_eq!(completed, released);
            }
        }
    }
}
