use std::collections::{BTreeMap, BTreeSet};

use super::IoError;
use crate::workflow::{validate, DataFile, OrphanPolicy, TaskDef, TaskId, Workflow};

/// MIPS used to turn DAX runtimes (seconds) into million instructions.
pub const DEFAULT_REFERENCE_MIPS: f64 = 1000.0;

const BYTES_PER_MB: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct DaxImport {
    pub workflow: Workflow,
    /// DAX job id of each task, indexed by task id.
    pub job_ids: Vec<String>,
    pub warnings: Vec<String>,
}

fn attr_f64(node: roxmltree::Node, name: &str, path: &str) -> Result<Option<f64>, IoError> {
    let Some(raw) = node.attribute(name) else {
        return Ok(None);
    };
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(Some(v)),
        _ => Err(IoError::schema(
            "dax",
            format!("{path}@{name}"),
            format!("expected a non-negative number, got {raw:?}"),
        )),
    }
}

fn push_unique(files: &mut Vec<DataFile>, f: DataFile) {
    if !files.iter().any(|g| g.name == f.name) {
        files.push(f);
    }
}

/// Converts a DAX-style XML workflow. Jobs become tasks numbered in document
/// order; `uses` elements become input and output files (bytes to MB);
/// dependencies are the union of `child`/`parent` elements and
/// producer/consumer file links.
pub fn import_dax(text: &str, reference_mips: f64) -> Result<DaxImport, IoError> {
    if !(reference_mips > 0.0) || !reference_mips.is_finite() {
        return Err(IoError::schema(
            "dax",
            "reference_mips",
            format!("must be positive, got {reference_mips}"),
        ));
    }
    let xml = roxmltree::Document::parse(text)?;
    let root = xml.root_element();
    let workflow_id = root.attribute("name").unwrap_or("dax").to_string();
    let mut warnings = Vec::new();

    let mut index: BTreeMap<String, u32> = BTreeMap::new();
    let mut job_ids = Vec::new();
    let mut defs = Vec::new();
    for job in root.children().filter(|n| n.has_tag_name("job")) {
        let n = defs.len();
        let Some(id) = job.attribute("id") else {
            return Err(IoError::schema("dax", format!("job[{n}]"), "job without id"));
        };
        let path = format!("job[id={id}]");
        if index.insert(id.to_string(), n as u32).is_some() {
            return Err(IoError::DuplicateId {
                document: "dax",
                kind: "job",
                id: id.to_string(),
            });
        }
        let Some(seconds) = attr_f64(job, "runtime", &path)? else {
            return Err(IoError::schema("dax", path, "job without runtime"));
        };
        let mut def = TaskDef::new(n as u32, seconds * reference_mips);
        for uses in job.children().filter(|c| c.has_tag_name("uses")) {
            let Some(name) = uses.attribute("file").or_else(|| uses.attribute("name")) else {
                return Err(IoError::schema("dax", format!("{path}.uses"), "uses without file name"));
            };
            let size = attr_f64(uses, "size", &path)?.unwrap_or(0.0) / BYTES_PER_MB;
            let file = DataFile {
                name: name.to_string(),
                size,
            };
            match uses.attribute("link") {
                Some("input") => push_unique(&mut def.inputs, file),
                Some("output") => push_unique(&mut def.outputs, file),
                other => warnings.push(format!(
                    "dax: job {id} file {name}: link {:?} is neither input nor output; ignored",
                    other.unwrap_or("")
                )),
            }
        }
        job_ids.push(id.to_string());
        defs.push(def);
    }
    if defs.is_empty() {
        warnings.push(format!("dax: workflow {workflow_id} has no jobs"));
    }

    let mut parents: Vec<BTreeSet<TaskId>> = vec![BTreeSet::new(); defs.len()];
    let lookup = |r: Option<&str>, path: &str| -> Result<u32, IoError> {
        let r = r.ok_or_else(|| IoError::schema("dax", path, "missing ref"))?;
        index
            .get(r)
            .copied()
            .ok_or_else(|| IoError::schema("dax", path, format!("unknown job {r}")))
    };
    for child in root.children().filter(|n| n.has_tag_name("child")) {
        let c = lookup(child.attribute("ref"), "child")?;
        for parent in child.children().filter(|n| n.has_tag_name("parent")) {
            let p = lookup(parent.attribute("ref"), &format!("child[ref={}].parent", job_ids[c as usize]))?;
            parents[c as usize].insert(TaskId(p));
        }
    }
    let mut producers: BTreeMap<&str, TaskId> = BTreeMap::new();
    for d in &defs {
        for f in &d.outputs {
            producers.entry(f.name.as_str()).or_insert(d.id);
        }
    }
    for (i, d) in defs.iter().enumerate() {
        for f in &d.inputs {
            if let Some(&p) = producers.get(f.name.as_str()) {
                parents[i].insert(p);
            }
        }
    }
    for (d, ps) in defs.iter_mut().zip(parents) {
        d.parents = Some(ps.into_iter().collect());
    }

    let workflow = Workflow::new(workflow_id, defs, None, None)?;
    validate(&workflow, OrphanPolicy::Allow)?;
    Ok(DaxImport {
        workflow,
        job_ids,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_JOBS: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<adag xmlns="http://pegasus.isi.edu/schema/DAX" name="pair" jobCount="2">
  <job id="ID01" name="make" runtime="2.0">
    <uses file="a.dat" link="output" size="5000000"/>
  </job>
  <job id="ID02" name="use" runtime="0.5">
    <uses file="a.dat" link="input" size="5000000"/>
  </job>
</adag>"#;

    #[test]
    fn runtime_and_sizes_are_converted() {
        let imp = import_dax(TWO_JOBS, DEFAULT_REFERENCE_MIPS).unwrap();
        let wf = &imp.workflow;
        assert_eq!(wf.workflow_id, "pair");
        assert_eq!(wf.task(TaskId(0)).unwrap().runtime(), 2000.0);
        assert_eq!(wf.task(TaskId(1)).unwrap().runtime(), 500.0);
        assert_eq!(wf.task(TaskId(0)).unwrap().def.outputs[0].size, 5.0);
        assert_eq!(imp.job_ids, ["ID01", "ID02"]);
    }

    #[test]
    fn reference_mips_scales_runtime() {
        let imp = import_dax(TWO_JOBS, 250.0).unwrap();
        assert_eq!(imp.workflow.task(TaskId(0)).unwrap().runtime(), 500.0);
    }

    #[test]
    fn producer_consumer_files_become_edges() {
        let imp = import_dax(TWO_JOBS, DEFAULT_REFERENCE_MIPS).unwrap();
        let consumer = imp.workflow.task(TaskId(1)).unwrap();
        assert!(consumer.parents.contains(&TaskId(0)));
    }

    #[test]
    fn explicit_edges_are_merged_with_file_edges() {
        let doc = r#"<adag name="three">
  <job id="a" runtime="1"><uses file="x" link="output" size="0"/></job>
  <job id="b" runtime="1"/>
  <job id="c" runtime="1"><uses file="x" link="input" size="0"/></job>
  <child ref="c"><parent ref="b"/></child>
</adag>"#;
        let imp = import_dax(doc, DEFAULT_REFERENCE_MIPS).unwrap();
        let c = imp.workflow.task(TaskId(2)).unwrap();
        assert_eq!(c.parents, BTreeSet::from([TaskId(0), TaskId(1)]));
    }

    #[test]
    fn empty_dax_warns() {
        let imp = import_dax(r#"<adag name="nothing"/>"#, DEFAULT_REFERENCE_MIPS).unwrap();
        assert!(imp.workflow.is_empty());
        assert_eq!(imp.warnings.len(), 1);
    }

    #[test]
    fn cyclic_dax_is_rejected() {
        let doc = r#"<adag name="loop">
  <job id="a" runtime="1"/>
  <job id="b" runtime="1"/>
  <child ref="a"><parent ref="b"/></child>
  <child ref="b"><parent ref="a"/></child>
</adag>"#;
        assert_eq!(import_dax(doc, DEFAULT_REFERENCE_MIPS).unwrap_err().kind(), "CycleDetected");
    }

    #[test]
    fn unknown_parent_is_a_schema_error() {
        let doc = r#"<adag><job id="a" runtime="1"/><child ref="a"><parent ref="zz"/></child></adag>"#;
        assert!(matches!(import_dax(doc, DEFAULT_REFERENCE_MIPS), Err(IoError::Schema { .. })));
    }
}
