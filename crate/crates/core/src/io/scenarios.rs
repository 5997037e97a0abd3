//! Scenario documents shipped with the crate.

use super::{IoError, ScenarioBundle};

/// One device, three single-PE hosts, three unplaced VMs.
pub const STAR_TOPOLOGY: &str = include_str!("../../scenarios/star_topology.json");
/// Eight devices in a chain, one host and one pinned VM each.
pub const LINEAR_TOPOLOGY: &str = include_str!("../../scenarios/linear_topology.json");
/// A 27-task mosaic pipeline; the overlap-fitting stage emits with probability 0.9.
pub const MONTAGE_WORKFLOWS: &str = include_str!("../../scenarios/montage_workflows.json");
pub const MONTAGE_CONFIG: &str = include_str!("../../scenarios/montage_config.json");
/// A single 1000 MI task without files.
pub const SINGLE_TASK_WORKFLOWS: &str = include_str!("../../scenarios/single_task_workflows.json");
pub const DEFAULT_CONFIG: &str = include_str!("../../scenarios/default_config.json");
/// Minimal two-task workflow document: task 1 reads the output of task 0.
pub const EXAMPLE_WORKFLOWS: &str = include_str!("../../scenarios/example_workflows.json");
/// Minimal two-device topology document.
pub const EXAMPLE_TOPOLOGY: &str = include_str!("../../scenarios/example_topology.json");

#[derive(Debug, Clone, Copy)]
pub struct Bundled {
    pub name: &'static str,
    pub topology: &'static str,
    pub workflows: &'static str,
    pub config: &'static str,
}

impl Bundled {
    pub fn parse(&self) -> Result<ScenarioBundle, IoError> {
        ScenarioBundle::parse(self.topology, self.workflows, self.config)
    }
}

pub const ALL: &[Bundled] = &[
    Bundled {
        name: "star",
        topology: STAR_TOPOLOGY,
        workflows: SINGLE_TASK_WORKFLOWS,
        config: DEFAULT_CONFIG,
    },
    Bundled {
        name: "linear",
        topology: LINEAR_TOPOLOGY,
        workflows: SINGLE_TASK_WORKFLOWS,
        config: DEFAULT_CONFIG,
    },
    Bundled {
        name: "montage",
        topology: LINEAR_TOPOLOGY,
        workflows: MONTAGE_WORKFLOWS,
        config: MONTAGE_CONFIG,
    },
    Bundled {
        name: "example",
        topology: EXAMPLE_TOPOLOGY,
        workflows: EXAMPLE_WORKFLOWS,
        config: DEFAULT_CONFIG,
    },
];

pub fn find(name: &str) -> Option<&'static Bundled> {
    ALL.iter().find(|b| b.name == name)
}
