//! Input documents, DAX import and the scenario runner.

mod bundle;
mod config;
mod dax;
pub mod scenarios;
mod topology;
mod workflows;

use std::fmt;
use std::path::PathBuf;

use serde::de::{self, DeserializeOwned, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::network::{DeviceId, NetworkError};
use crate::orchestration::SetupError;
use crate::workflow::WorkflowError;

pub use bundle::{run_scenario, ScenarioBundle, ScenarioRun};
pub use config::{parse_config, serialize_config, ParsedConfig};
pub use dax::{import_dax, DaxImport, DEFAULT_REFERENCE_MIPS};
pub use topology::{parse_topology, serialize_topology, ParsedTopology, DEFAULT_LINK_BANDWIDTH};
pub use workflows::{parse_workflows, serialize_workflows};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{document}: schema error at {path}: {message}")]
    Schema {
        document: &'static str,
        path: String,
        message: String,
    },
    #[error("{document}: unknown field {path}")]
    UnknownField { document: &'static str, path: String },
    #[error("topology: device {device} lists neighbor {neighbor}, which does not list it back")]
    AsymmetricNeighbor { device: DeviceId, neighbor: DeviceId },
    #[error("{document}: duplicate {kind} id {id}")]
    DuplicateId {
        document: &'static str,
        kind: &'static str,
        id: String,
    },
    #[error("workflows: {0}")]
    Workflow(#[from] WorkflowError),
    #[error("topology: {0}")]
    Network(#[from] NetworkError),
    #[error("dax: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("setup: {0}")]
    Setup(#[from] SetupError),
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },
}

impl IoError {
    /// Stable error name for diagnostics, e.g. `SchemaError` or `CycleDetected`.
    pub fn kind(&self) -> &'static str {
        match self {
            IoError::Schema { .. } => "SchemaError",
            IoError::UnknownField { .. } => "UnknownField",
            IoError::AsymmetricNeighbor { .. } => "AsymmetricNeighbor",
            IoError::DuplicateId { .. } => "DuplicateId",
            IoError::Workflow(e) | IoError::Setup(SetupError::Workflow(e)) => match e {
                WorkflowError::CycleDetected { .. } => "CycleDetected",
                WorkflowError::DanglingReference { .. } => "DanglingReference",
                WorkflowError::OrphanInput { .. } => "OrphanInput",
                WorkflowError::ParentMismatch { .. } => "ParentMismatch",
                WorkflowError::DuplicateTask { .. } => "DuplicateTask",
                WorkflowError::DuplicateProducer { .. } => "DuplicateProducer",
                WorkflowError::InvalidTask { .. } => "InvalidTask",
                WorkflowError::AsymmetricLinks { .. } => "AsymmetricLinks",
                WorkflowError::InvalidName(_) => "InvalidName",
                WorkflowError::DuplicateWorkflow(_) => "DuplicateWorkflow",
                WorkflowError::DuplicateEnsemble(_) => "DuplicateEnsemble",
                WorkflowError::UnknownWorkflow(_) => "UnknownWorkflow",
                WorkflowError::MultipleEnsembles { .. } => "MultipleEnsembles",
            },
            IoError::Network(_) | IoError::Setup(SetupError::Network(_)) => "NetworkError",
            IoError::Xml(_) => "XmlError",
            IoError::Setup(_) => "SetupError",
            IoError::File { .. } => "FileError",
        }
    }

    fn schema(document: &'static str, path: impl Into<String>, message: impl Into<String>) -> Self {
        IoError::Schema {
            document,
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Deserializes `text`, collecting unknown fields. Strict mode turns the
/// first unknown field into an error; otherwise each becomes a warning.
fn decode<T: DeserializeOwned>(document: &'static str, text: &str, strict: bool) -> Result<(T, Vec<String>), IoError> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = {
        let mut note = |path: serde_ignored::Path| unknown.push(path.to_string());
        let tracked = serde_ignored::Deserializer::new(&mut de, &mut note);
        serde_path_to_error::deserialize(tracked).map_err(|e| {
            let path = e.path().to_string();
            IoError::schema(document, path, e.into_inner().to_string())
        })?
    };
    de.end().map_err(|e| IoError::schema(document, ".", e.to_string()))?;
    if strict {
        if let Some(path) = unknown.into_iter().next() {
            return Err(IoError::UnknownField { document, path });
        }
        return Ok((value, Vec::new()));
    }
    let warnings = unknown
        .into_iter()
        .map(|p| format!("{document}: ignoring unknown field {p}"))
        .collect();
    Ok((value, warnings))
}

/// A finite, non-negative number.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct NonNeg(f64);

impl Serialize for NonNeg {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for NonNeg {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() || v < 0.0 {
            return Err(de::Error::custom(format!("expected a non-negative number, got {v}")));
        }
        Ok(NonNeg(v))
    }
}

/// An identifier written either as a string or as an integer.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Label(String);

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct LabelVisitor;

        impl Visitor<'_> for LabelVisitor {
            type Value = Label;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a string or integer identifier")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Label, E> {
                Ok(Label(v.to_string()))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Label, E> {
                Ok(Label(v.to_string()))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Label, E> {
                Ok(Label(v.to_string()))
            }
        }

        d.deserialize_any(LabelVisitor)
    }
}

fn read_file(path: &std::path::Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}
