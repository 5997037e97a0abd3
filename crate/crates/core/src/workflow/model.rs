use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::WorkflowError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A named file; size in MB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFile {
    pub name: String,
    pub size: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum SelectivityModel {
    #[default]
    EmitAll,
    /// Each declared output is emitted independently with this probability.
    Fractional(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum ExecutionModel {
    #[default]
    SingleShot,
    /// Restarts `interval` seconds after each completion. `repetitions` is
    /// the number of restarts; `None` repeats until the horizon.
    Periodic {
        interval: f64,
        repetitions: Option<u32>,
    },
}

/// A task as declared in a workflow document, before edges are linked.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDef {
    pub id: TaskId,
    /// Million instructions.
    pub runtime: f64,
    pub inputs: Vec<DataFile>,
    pub outputs: Vec<DataFile>,
    /// Explicit parent list, when the document carries one.
    pub parents: Option<Vec<TaskId>>,
    pub entry_time: f64,
    pub deadline: Option<f64>,
    pub selectivity: SelectivityModel,
    pub execution: ExecutionModel,
}

impl TaskDef {
    pub fn new(id: u32, runtime: f64) -> Self {
        TaskDef {
            id: TaskId(id),
            runtime,
            inputs: Vec::new(),
            outputs: Vec::new(),
            parents: None,
            entry_time: 0.0,
            deadline: None,
            selectivity: SelectivityModel::EmitAll,
            execution: ExecutionModel::SingleShot,
        }
    }

    pub fn input(mut self, name: &str, size: f64) -> Self {
        self.inputs.push(DataFile {
            name: name.into(),
            size,
        });
        self
    }

    pub fn output(mut self, name: &str, size: f64) -> Self {
        self.outputs.push(DataFile {
            name: name.into(),
            size,
        });
        self
    }

    pub fn with_parents(mut self, parents: &[u32]) -> Self {
        self.parents = Some(parents.iter().copied().map(TaskId).collect());
        self
    }
}

/// A linked task: a [`TaskDef`] plus its resolved parents and children.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub def: TaskDef,
    pub workflow_id: String,
    pub parents: BTreeSet<TaskId>,
    pub children: BTreeSet<TaskId>,
}

impl Task {
    pub fn id(&self) -> TaskId {
        self.def.id
    }

    pub fn runtime(&self) -> f64 {
        self.def.runtime
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workflow {
    pub workflow_id: String,
    pub deadline: Option<f64>,
    pub budget: Option<f64>,
    tasks: Vec<Task>,
    index: BTreeMap<TaskId, usize>,
    /// Output file name -> producing task.
    producers: BTreeMap<String, TaskId>,
}

impl Workflow {
    /// Links tasks into a DAG. Edges come from producer/consumer file
    /// relationships plus any explicit parent lists; an explicit list must
    /// include every file-derived parent.
    pub fn new(
        workflow_id: impl Into<String>,
        defs: Vec<TaskDef>,
        deadline: Option<f64>,
        budget: Option<f64>,
    ) -> Result<Self, WorkflowError> {
        let workflow_id = workflow_id.into();
        let mut index = BTreeMap::new();
        for (i, d) in defs.iter().enumerate() {
            if index.insert(d.id, i).is_some() {
                return Err(WorkflowError::DuplicateTask {
                    workflow: workflow_id.clone(),
                    task: d.id,
                });
            }
        }
        let mut producers = BTreeMap::new();
        for d in &defs {
            for f in &d.outputs {
                if let Some(prev) = producers.insert(f.name.clone(), d.id) {
                    return Err(WorkflowError::DuplicateProducer {
                        workflow: workflow_id.clone(),
                        file: f.name.clone(),
                        first: prev,
                        second: d.id,
                    });
                }
            }
        }
        let mut tasks: Vec<Task> = defs
            .into_iter()
            .map(|def| Task {
                def,
                workflow_id: workflow_id.clone(),
                parents: BTreeSet::new(),
                children: BTreeSet::new(),
            })
            .collect();
        for t in tasks.iter_mut() {
            let from_files: BTreeSet<TaskId> = t
                .def
                .inputs
                .iter()
                .filter_map(|f| producers.get(&f.name).copied())
                .collect();
            if let Some(explicit) = &t.def.parents {
                for &p in explicit {
                    if !index.contains_key(&p) {
                        return Err(WorkflowError::DanglingReference {
                            workflow: workflow_id.clone(),
                            task: t.def.id,
                            missing: p,
                        });
                    }
                }
                let explicit: BTreeSet<TaskId> = explicit.iter().copied().collect();
                if let Some(&p) = from_files.difference(&explicit).next() {
                    return Err(WorkflowError::ParentMismatch {
                        workflow: workflow_id.clone(),
                        task: t.def.id,
                        producer: p,
                    });
                }
                t.parents = explicit;
            } else {
                t.parents = from_files;
            }
        }
        let edges: Vec<(TaskId, TaskId)> = tasks
            .iter()
            .flat_map(|t| t.parents.iter().map(move |&p| (p, t.def.id)))
            .collect();
        for (p, c) in edges {
            tasks[index[&p]].children.insert(c);
        }
        Ok(Workflow {
            workflow_id,
            deadline,
            budget,
            tasks,
            index,
            producers,
        })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> Option<&Task> {
        self.index.get(&id).map(|&i| &self.tasks[i])
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Task producing `file`, if any task in this workflow declares it as output.
    pub fn producer(&self, file: &str) -> Option<TaskId> {
        self.producers.get(file).copied()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.tasks.iter().map(|t| t.def.id)
    }

    /// Every task reachable through child edges from `id`, excluding `id`.
    pub fn descendants(&self, id: TaskId) -> BTreeSet<TaskId> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<TaskId> = self
            .task(id)
            .map(|t| t.children.iter().copied().collect())
            .unwrap_or_default();
        while let Some(t) = stack.pop() {
            if out.insert(t) {
                if let Some(task) = self.task(t) {
                    stack.extend(task.children.iter().copied());
                }
            }
        }
        out
    }
}

/// Workflows grouped under shared QoS constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub ensemble_id: String,
    pub workflow_ids: Vec<String>,
    pub deadline: Option<f64>,
    pub budget: Option<f64>,
}

/// Everything submitted to one simulation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Application {
    pub workflows: Vec<Workflow>,
    pub ensembles: Vec<Ensemble>,
}

impl Application {
    pub fn new(workflows: Vec<Workflow>, ensembles: Vec<Ensemble>) -> Result<Self, WorkflowError> {
        let mut seen = BTreeSet::new();
        for w in &workflows {
            if !seen.insert(w.workflow_id.as_str()) {
                return Err(WorkflowError::DuplicateWorkflow(w.workflow_id.clone()));
            }
        }
        let mut member_of: BTreeMap<&str, &str> = BTreeMap::new();
        let mut ens_ids = BTreeSet::new();
        for e in &ensembles {
            if !ens_ids.insert(e.ensemble_id.as_str()) {
                return Err(WorkflowError::DuplicateEnsemble(e.ensemble_id.clone()));
            }
            let mut members = BTreeSet::new();
            for w in &e.workflow_ids {
                if !seen.contains(w.as_str()) {
                    return Err(WorkflowError::UnknownWorkflow(w.clone()));
                }
                if !members.insert(w.as_str()) {
                    return Err(WorkflowError::DuplicateWorkflow(w.clone()));
                }
                if let Some(other) = member_of.insert(w, &e.ensemble_id) {
                    return Err(WorkflowError::MultipleEnsembles {
                        workflow: w.clone(),
                        first: other.to_string(),
                        second: e.ensemble_id.clone(),
                    });
                }
            }
        }
        Ok(Application {
            workflows,
            ensembles,
        })
    }

    pub fn workflow_index(&self, id: &str) -> Option<usize> {
        self.workflows.iter().position(|w| w.workflow_id == id)
    }

    pub fn ensemble_of(&self, workflow_id: &str) -> Option<&Ensemble> {
        self.ensembles
            .iter()
            .find(|e| e.workflow_ids.iter().any(|w| w == workflow_id))
    }

    /// Workflow deadline, falling back to its ensemble's.
    pub fn workflow_deadline(&self, wf: usize) -> Option<f64> {
        let w = &self.workflows[wf];
        w.deadline
            .or_else(|| self.ensemble_of(&w.workflow_id).and_then(|e| e.deadline))
    }

    /// Task deadline, falling back to the workflow's and then the ensemble's.
    pub fn task_deadline(&self, wf: usize, task: TaskId) -> Option<f64> {
        self.workflows[wf]
            .task(task)
            .and_then(|t| t.def.deadline)
            .or_else(|| self.workflow_deadline(wf))
    }

    pub fn task_count(&self) -> usize {
        self.workflows.iter().map(Workflow::len).sum()
    }
}
