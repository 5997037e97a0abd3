use serde::{Deserialize, Serialize};

use super::{decode, IoError, Label, NonNeg};
use crate::workflow::{
    validate, Application, DataFile, Ensemble, ExecutionModel, OrphanPolicy, SelectivityModel, TaskDef, TaskId,
    Workflow,
};

#[derive(Debug, Serialize, Deserialize)]
struct Document {
    workflows: Vec<WorkflowDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ensembles: Vec<EnsembleDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleDoc {
    ensemble_id: Label,
    workflow_ids: Vec<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    deadline: Option<NonNeg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    budget: Option<NonNeg>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WorkflowDoc {
    workflow_id: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    deadline: Option<NonNeg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    budget: Option<NonNeg>,
    tasks: Vec<TaskDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileDoc {
    name: String,
    size: NonNeg,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SelectivityDoc {
    #[default]
    All,
    Fractional(NonNeg),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ExecutionDoc {
    #[default]
    SingleShot,
    Periodic {
        interval: NonNeg,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        repetitions: Option<u32>,
    },
}

fn is_zero(v: &NonNeg) -> bool {
    v.0 == 0.0
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskDoc {
    id: u32,
    runtime: NonNeg,
    #[serde(default)]
    input_files: Vec<FileDoc>,
    #[serde(default)]
    output_files: Vec<FileDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parents: Option<Vec<u32>>,
    #[serde(default = "zero", skip_serializing_if = "is_zero")]
    entry_time: NonNeg,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    deadline: Option<NonNeg>,
    #[serde(default, skip_serializing_if = "is_default")]
    selectivity: SelectivityDoc,
    #[serde(default, skip_serializing_if = "is_default")]
    execution: ExecutionDoc,
}

fn zero() -> NonNeg {
    NonNeg(0.0)
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

fn files(docs: Vec<FileDoc>) -> Vec<DataFile> {
    docs.into_iter()
        .map(|f| DataFile {
            name: f.name,
            size: f.size.0,
        })
        .collect()
}

fn file_docs(files: &[DataFile]) -> Vec<FileDoc> {
    files
        .iter()
        .map(|f| FileDoc {
            name: f.name.clone(),
            size: NonNeg(f.size),
        })
        .collect()
}

impl TaskDoc {
    fn into_def(self) -> TaskDef {
        TaskDef {
            id: TaskId(self.id),
            runtime: self.runtime.0,
            inputs: files(self.input_files),
            outputs: files(self.output_files),
            parents: self.parents.map(|ps| ps.into_iter().map(TaskId).collect()),
            entry_time: self.entry_time.0,
            deadline: self.deadline.map(|d| d.0),
            selectivity: match self.selectivity {
                SelectivityDoc::All => SelectivityModel::EmitAll,
                SelectivityDoc::Fractional(p) => SelectivityModel::Fractional(p.0),
            },
            execution: match self.execution {
                ExecutionDoc::SingleShot => ExecutionModel::SingleShot,
                ExecutionDoc::Periodic { interval, repetitions } => ExecutionModel::Periodic {
                    interval: interval.0,
                    repetitions,
                },
            },
        }
    }

    fn from_def(d: &TaskDef) -> Self {
        TaskDoc {
            id: d.id.0,
            runtime: NonNeg(d.runtime),
            input_files: file_docs(&d.inputs),
            output_files: file_docs(&d.outputs),
            parents: d.parents.as_ref().map(|ps| ps.iter().map(|p| p.0).collect()),
            entry_time: NonNeg(d.entry_time),
            deadline: d.deadline.map(NonNeg),
            selectivity: match d.selectivity {
                SelectivityModel::EmitAll => SelectivityDoc::All,
                SelectivityModel::Fractional(p) => SelectivityDoc::Fractional(NonNeg(p)),
            },
            execution: match d.execution {
                ExecutionModel::SingleShot => ExecutionDoc::SingleShot,
                ExecutionModel::Periodic { interval, repetitions } => ExecutionDoc::Periodic {
                    interval: NonNeg(interval),
                    repetitions,
                },
            },
        }
    }
}

/// Parses a Workflows.json document and validates every workflow
/// (attributes, acyclicity). Returns the application and any warnings.
pub fn parse_workflows(text: &str, strict: bool) -> Result<(Application, Vec<String>), IoError> {
    let (doc, warnings): (Document, _) = decode("workflows", text, strict)?;
    let mut workflows = Vec::with_capacity(doc.workflows.len());
    for w in doc.workflows {
        let defs = w.tasks.into_iter().map(TaskDoc::into_def).collect();
        let wf = Workflow::new(w.workflow_id.0, defs, w.deadline.map(|d| d.0), w.budget.map(|b| b.0))?;
        validate(&wf, OrphanPolicy::Allow)?;
        workflows.push(wf);
    }
    let ensembles = doc
        .ensembles
        .into_iter()
        .map(|e| Ensemble {
            ensemble_id: e.ensemble_id.0,
            workflow_ids: e.workflow_ids.into_iter().map(|l| l.0).collect(),
            deadline: e.deadline.map(|d| d.0),
            budget: e.budget.map(|b| b.0),
        })
        .collect();
    Ok((Application::new(workflows, ensembles)?, warnings))
}

pub fn serialize_workflows(app: &Application) -> String {
    let doc = Document {
        workflows: app
            .workflows
            .iter()
            .map(|w| WorkflowDoc {
                workflow_id: Label(w.workflow_id.clone()),
                deadline: w.deadline.map(NonNeg),
                budget: w.budget.map(NonNeg),
                tasks: w.tasks().iter().map(|t| TaskDoc::from_def(&t.def)).collect(),
            })
            .collect(),
        ensembles: app
            .ensembles
            .iter()
            .map(|e| EnsembleDoc {
                ensemble_id: Label(e.ensemble_id.clone()),
                workflow_ids: e.workflow_ids.iter().cloned().map(Label).collect(),
                deadline: e.deadline.map(NonNeg),
                budget: e.budget.map(NonNeg),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("workflow documents always serialize")
}
