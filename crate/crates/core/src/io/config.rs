use serde::{Deserialize, Serialize};

use super::{decode, IoError, NonNeg};
use crate::network::DeviceId;
use crate::orchestration::{DeadlinePolicy, PolicySpec, RunConfig};
use crate::workflow::OrphanPolicy;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum OrphanDoc {
    #[default]
    Allow,
    Warn,
    Error,
}

fn default_scheduler() -> PolicySpec {
    RunConfig::default().scheduler
}

fn default_provisioner() -> PolicySpec {
    RunConfig::default().provisioner
}

fn yes() -> bool {
    true
}

fn zero() -> NonNeg {
    NonNeg(0.0)
}

#[derive(Debug, Serialize, Deserialize)]
struct Document {
    #[serde(default)]
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<NonNeg>,
    #[serde(default)]
    deadline_policy: DeadlinePolicy,
    #[serde(default = "default_scheduler")]
    scheduler: PolicySpec,
    #[serde(default = "default_provisioner")]
    provisioner: PolicySpec,
    #[serde(default = "zero")]
    control_message_mb: NonNeg,
    #[serde(default = "zero")]
    vm_boot_delay_s: NonNeg,
    #[serde(default = "yes")]
    strict_parsing: bool,
    #[serde(default)]
    orphan_inputs: OrphanDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    broker_device: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scheduling_interval_s: Option<NonNeg>,
}

/// Config.json contents. `strict_parsing` also governs the other two
/// documents of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub run: RunConfig,
    pub strict_parsing: bool,
}

impl Default for ParsedConfig {
    fn default() -> Self {
        ParsedConfig {
            run: RunConfig::default(),
            strict_parsing: true,
        }
    }
}

/// The config's own strictness is read from its `strict_parsing` field
/// before the full parse.
pub fn parse_config(text: &str) -> Result<(ParsedConfig, Vec<String>), IoError> {
    let strict = serde_json::from_str::<serde_json::Value>(text)
        .ok()
        .and_then(|v| v.get("strict_parsing").and_then(serde_json::Value::as_bool))
        .unwrap_or(true);
    let (doc, warnings): (Document, _) = decode("config", text, strict)?;
    if let Some(i) = doc.scheduling_interval_s {
        if i.0 == 0.0 {
            return Err(IoError::schema("config", "scheduling_interval_s", "must be positive"));
        }
    }
    let run = RunConfig {
        seed: doc.seed,
        horizon: doc.horizon.map(|h| h.0),
        deadline_policy: doc.deadline_policy,
        scheduler: doc.scheduler,
        provisioner: doc.provisioner,
        control_message_mb: doc.control_message_mb.0,
        vm_boot_delay_s: doc.vm_boot_delay_s.0,
        orphan_inputs: match doc.orphan_inputs {
            OrphanDoc::Allow => OrphanPolicy::Allow,
            OrphanDoc::Warn => OrphanPolicy::Warn,
            OrphanDoc::Error => OrphanPolicy::Error,
        },
        broker_device: doc.broker_device.map(DeviceId),
        scheduling_interval_s: doc.scheduling_interval_s.map(|i| i.0),
    };
    Ok((
        ParsedConfig {
            run,
            strict_parsing: doc.strict_parsing,
        },
        warnings,
    ))
}

pub fn serialize_config(c: &ParsedConfig) -> String {
    let r = &c.run;
    let doc = Document {
        seed: r.seed,
        horizon: r.horizon.map(NonNeg),
        deadline_policy: r.deadline_policy,
        scheduler: r.scheduler.clone(),
        provisioner: r.provisioner.clone(),
        control_message_mb: NonNeg(r.control_message_mb),
        vm_boot_delay_s: NonNeg(r.vm_boot_delay_s),
        strict_parsing: c.strict_parsing,
        orphan_inputs: match r.orphan_inputs {
            OrphanPolicy::Allow => OrphanDoc::Allow,
            OrphanPolicy::Warn => OrphanDoc::Warn,
            OrphanPolicy::Error => OrphanDoc::Error,
        },
        broker_device: r.broker_device.map(|d| d.0),
        scheduling_interval_s: r.scheduling_interval_s.map(NonNeg),
    };
    serde_json::to_string_pretty(&doc).expect("config documents always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_takes_defaults() {
        let (c, _) = parse_config("{}").unwrap();
        assert_eq!(c, ParsedConfig::default());
    }

    #[test]
    fn all_fields_round_trip() {
        let doc = r#"{
            "seed": 42, "horizon": 100, "deadline_policy": "drop-descendants",
            "scheduler": {"name": "earliest-finish", "params": {"max_hops": 2}},
            "provisioner": {"name": "on-demand", "params": {"max_vms": 3}},
            "control_message_mb": 0.01, "vm_boot_delay_s": 5, "strict_parsing": true,
            "orphan_inputs": "warn", "broker_device": 0, "scheduling_interval_s": 1.5
        }"#;
        let (c, _) = parse_config(doc).unwrap();
        assert_eq!(c.run.seed, 42);
        assert_eq!(c.run.deadline_policy, DeadlinePolicy::DropDescendants);
        assert_eq!(c.run.scheduler.params["max_hops"], 2);
        assert_eq!(c.run.broker_device, Some(DeviceId(0)));
        let (back, _) = parse_config(&serialize_config(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn lenient_config_warns_on_unknown_fields() {
        let doc = r#"{"strict_parsing": false, "verbosity": 3}"#;
        let (c, warnings) = parse_config(doc).unwrap();
        assert!(!c.strict_parsing);
        assert_eq!(warnings.len(), 1);
        assert!(matches!(parse_config(r#"{"verbosity": 3}"#), Err(IoError::UnknownField { .. })));
    }

    #[test]
    fn bad_deadline_policy_is_a_schema_error() {
        match parse_config(r#"{"deadline_policy": "ignore"}"#) {
            Err(IoError::Schema { path, .. }) => assert_eq!(path, "deadline_policy"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }
}
