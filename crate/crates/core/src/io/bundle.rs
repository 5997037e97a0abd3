use std::path::Path;

use super::{parse_config, parse_topology, parse_workflows, read_file, IoError, ParsedConfig, ParsedTopology};
use crate::orchestration::{simulate, Infrastructure, RunOutput, RunReport};
use crate::trace::to_csv_string;
use crate::workflow::Application;

/// The three input documents of one run, parsed.
#[derive(Debug, Clone)]
pub struct ScenarioBundle {
    pub topology: ParsedTopology,
    pub application: Application,
    pub config: ParsedConfig,
    pub warnings: Vec<String>,
}

impl ScenarioBundle {
    /// Parses the config first; its `strict_parsing` applies to the other two.
    pub fn parse(topology: &str, workflows: &str, config: &str) -> Result<Self, IoError> {
        let (config, mut warnings) = parse_config(config)?;
        let strict = config.strict_parsing;
        let (topology, w) = parse_topology(topology, strict)?;
        warnings.extend(w);
        let (application, w) = parse_workflows(workflows, strict)?;
        warnings.extend(w);
        Ok(ScenarioBundle {
            topology,
            application,
            config,
            warnings,
        })
    }

    pub fn load(topology: &Path, workflows: &Path, config: &Path) -> Result<Self, IoError> {
        Self::parse(&read_file(topology)?, &read_file(workflows)?, &read_file(config)?)
    }

    pub fn infrastructure(&self) -> Result<Infrastructure, IoError> {
        Ok(self.topology.infrastructure()?)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub output: RunOutput,
    pub report: RunReport,
}

impl ScenarioRun {
    pub fn trace_csv(&self) -> String {
        to_csv_string(&self.output.trace)
    }
}

/// Builds the infrastructure, runs to the horizon or until no events remain,
/// and folds the trace into a report.
pub fn run_scenario(bundle: &ScenarioBundle) -> Result<ScenarioRun, IoError> {
    let infra = bundle.infrastructure()?;
    let mut output = simulate(&bundle.application, &infra, &bundle.config.run)?;
    let mut warnings = bundle.warnings.clone();
    warnings.append(&mut output.warnings);
    output.warnings = warnings;
    let report = output.report(&bundle.application);
    Ok(ScenarioRun { output, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOPOLOGY: &str = r#"{"fog_devices": [{"id": 0, "neighbors": [], "hosts": [
        {"id": 0, "ram": 512, "bw": 1024, "storage": 100000, "pes": [{"mips": 1000}]}
    ]}], "vms": [{"id": 0, "mips": 1000, "pes": 1, "ram": 512, "bw": 1000, "size": 10000}]}"#;

    #[test]
    fn single_task_runs_for_runtime_over_mips() {
        let wf = r#"{"workflows": [{"workflow_id": "w", "tasks": [{"id": 0, "runtime": 1000}]}]}"#;
        let bundle = ScenarioBundle::parse(TOPOLOGY, wf, "{}").unwrap();
        let run = run_scenario(&bundle).unwrap();
        assert_eq!(run.report.workflow("w").unwrap().makespan, Some(1.0));
        assert!(run.trace_csv().starts_with("time,entity,event_kind,subject_id,detail\n"));
    }

    #[test]
    fn lenient_config_relaxes_other_documents() {
        let wf = r#"{"workflows": [], "note": "x"}"#;
        assert!(ScenarioBundle::parse(TOPOLOGY, wf, "{}").is_err());
        let b = ScenarioBundle::parse(TOPOLOGY, wf, r#"{"strict_parsing": false}"#).unwrap();
        assert_eq!(b.warnings.len(), 1);
    }
}
