use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wfsim_core::compute::{HostId, HostSpec, SchedulerKind, VmId, VmSpec};
use wfsim_core::io::{
    parse_config, parse_topology, parse_workflows, run_scenario, serialize_config, serialize_topology,
    serialize_workflows, ParsedConfig, ParsedTopology, ScenarioBundle,
};
use wfsim_core::network::{DeviceId, Topology};
use wfsim_core::orchestration::{DeadlinePolicy, DeviceSpec, PolicySpec, RunConfig, TaskStatus};
use wfsim_core::trace::{read_csv, to_csv_string, TraceRecord};
use wfsim_core::workflow::{Application, TaskDef, Workflow};

fn random_topology(rng: &mut ChaCha8Rng) -> ParsedTopology {
    let n = rng.random_range(1..=5u32);
    let mut topology = Topology::new();
    for d in 0..n {
        topology.add_device(DeviceId(d)).unwrap();
    }
    let link = |t: &mut Topology, a: u32, b: u32, rng: &mut ChaCha8Rng| {
        if t.link(DeviceId(a), DeviceId(b)).is_none() {
            let bw = rng.random_range(10.0..1000.0);
            let lat = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.1) };
            t.add_link(DeviceId(a), DeviceId(b), bw, lat).unwrap();
        }
    };
    for d in 1..n {
        let parent = rng.random_range(0..d);
        link(&mut topology, parent, d, rng);
    }
    for _ in 0..rng.random_range(0..=n) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            link(&mut topology, a, b, rng);
        }
    }
    let mut devices = Vec::new();
    let mut vms = Vec::new();
    for d in 0..n {
        let mut hosts = Vec::new();
        for h in 0..rng.random_range(1..=2u32) {
            let pes = rng.random_range(1..=2);
            let mips = if rng.random_bool(0.5) { 500.0 } else { 1000.0 };
            hosts.push(HostSpec {
                id: HostId(h),
                pes,
                mips_per_pe: mips,
                ram: 1024.0,
                bandwidth: 1024.0,
                storage: 1e6,
            });
            vms.push(VmSpec {
                id: VmId(vms.len() as u32),
                mips,
                pes,
                ram: 512.0,
                bandwidth: 1000.0,
                image_size: 1000.0,
                host_binding: Some(HostId(h)),
                device: Some(DeviceId(d)),
                scheduler: if rng.random_bool(0.5) {
                    SchedulerKind::TimeShared
                } else {
                    SchedulerKind::SpaceShared
                },
            });
        }
        devices.push(DeviceSpec { id: DeviceId(d), hosts });
    }
    ParsedTopology {
        topology,
        devices,
        vms,
        routes: Vec::new(),
    }
}

fn random_application(rng: &mut ChaCha8Rng) -> Application {
    let workflows = (0..rng.random_range(1..=3))
        .map(|w| {
            let n = rng.random_range(1..=8u32);
            let defs = (0..n)
                .map(|i| {
                    let mut d = TaskDef::new(i, rng.random_range(100.0..3000.0))
                        .output(&format!("w{w}t{i}"), rng.random_range(0.0..50.0));
                    for p in 0..i {
                        if rng.random_bool(0.35) {
                            d = d.input(&format!("w{w}t{p}"), 0.0);
                        }
                    }
                    if rng.random_bool(0.3) {
                        d.entry_time = rng.random_range(0.0..3.0);
                    }
                    if rng.random_bool(0.2) {
                        d.deadline = Some(rng.random_range(0.5..8.0));
                    }
                    d
                })
                .collect::<Vec<_>>();
            // Consumer-declared sizes must match the producer's.
            let sizes: BTreeMap<String, f64> = defs
                .iter()
                .flat_map(|d| d.outputs.iter().map(|f| (f.name.clone(), f.size)))
                .collect();
            let defs = defs
                .into_iter()
                .map(|mut d| {
                    for f in d.inputs.iter_mut() {
                        f.size = sizes[&f.name];
                    }
                    d
                })
                .collect();
            Workflow::new(format!("w{w}"), defs, None, None).unwrap()
        })
        .collect();
    Application::new(workflows, Vec::new()).unwrap()
}

fn random_config(rng: &mut ChaCha8Rng) -> ParsedConfig {
    let scheduler = ["round-robin", "earliest-finish", "min-min"][rng.random_range(0..3)];
    let deadline_policy = [DeadlinePolicy::Kill, DeadlinePolicy::Continue, DeadlinePolicy::DropDescendants]
        [rng.random_range(0..3)];
    ParsedConfig {
        run: RunConfig {
            seed: rng.random(),
            deadline_policy,
            scheduler: PolicySpec::named(scheduler),
            ..RunConfig::default()
        },
        strict_parsing: true,
    }
}

fn scenario(seed: u64) -> ScenarioBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScenarioBundle {
        topology: random_topology(&mut rng),
        application: random_application(&mut rng),
        config: random_config(&mut rng),
        warnings: Vec::new(),
    }
}

fn stage(kind: &str) -> Option<u8> {
    Some(match kind {
        "release" => 0,
        "ready" => 1,
        "schedule" => 2,
        "transfer_start" | "transfer_end" => 3,
        "exec_submit" => 4,
        "exec_start" => 5,
        "exec_end" => 6,
        "complete" => 7,
        _ => return None,
    })
}

fn task_records<'a>(trace: &'a [TraceRecord], subject: &str) -> Vec<&'a TraceRecord> {
    trace.iter().filter(|r| r.subject == subject).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn documents_round_trip(seed in any::<u64>()) {
        let b = scenario(seed);
        let (app, _) = parse_workflows(&serialize_workflows(&b.application), true).unwrap();
        prop_assert_eq!(&app, &b.application);
        let (topo, _) = parse_topology(&serialize_topology(&b.topology), true).unwrap();
        prop_assert_eq!(&topo, &b.topology);
        let (config, _) = parse_config(&serialize_config(&b.config)).unwrap();
        prop_assert_eq!(&config, &b.config);
    }

    #[test]
    fn runs_respect_lifecycle_and_dependencies(seed in any::<u64>()) {
        let b = scenario(seed);
        let run = run_scenario(&b).unwrap();
        let trace = &run.output.trace;
        let r = &run.report;

        prop_assert_eq!(r.tasks.len(), r.completed + r.deadline_missed + r.killed + r.unfinished);
        // A task can be terminated before its entry time; it is then never released.
        let unreleased: Vec<_> = r.tasks.iter().filter(|t| t.release_time.is_none()).collect();
        prop_assert_eq!(r.released, r.tasks.len() - unreleased.len());
        for t in &unreleased {
            prop_assert!(t.exec_start.is_none());
            prop_assert!(t.status != TaskStatus::Completed);
        }

        for wf in &b.application.workflows {
            for t in wf.tasks() {
                let key = format!("{}:{}", wf.workflow_id, t.id());
                let recs = task_records(trace, &key);
                let mut last = 0u8;
                let mut ended = false;
                for rec in &recs {
                    if matches!(rec.kind.as_str(), "deadline_missed" | "killed") {
                        prop_assert!(!ended, "{} terminated twice", key);
                        ended = true;
                        continue;
                    }
                    if let Some(s) = stage(&rec.kind) {
                        prop_assert!(!ended, "{} {} after termination", key, rec.kind);
                        prop_assert!(s >= last, "{} went from stage {} to {}", key, last, rec.kind);
                        last = s;
                    }
                }

                let rec = r.task(&wf.workflow_id, t.id().0).unwrap();
                if let Some(start) = rec.exec_start {
                    prop_assert!(start >= t.def.entry_time, "{} started before entry time", key);
                    for p in &t.parents {
                        let parent = r.task(&wf.workflow_id, p.0).unwrap();
                        let end = parent.exec_end;
                        prop_assert!(end.is_some_and(|e| e <= start), "{} started before parent {} ended", key, p);
                    }
                    for span in &rec.transfers {
                        prop_assert!(span.end.is_some_and(|e| e <= start), "{} started before {} arrived", key, span.file);
                    }
                }
                if let Some(release) = rec.release_time {
                    prop_assert!(release >= t.def.entry_time);
                }
            }

            // Independent fold over the raw trace.
            let prefix = format!("{}:", wf.workflow_id);
            let mine = trace.iter().filter(|x| x.subject.starts_with(&prefix));
            let mut first_release = f64::INFINITY;
            let mut last_end = f64::NEG_INFINITY;
            for x in mine {
                match x.kind.as_str() {
                    "release" => first_release = first_release.min(x.time),
                    "exec_end" => last_end = last_end.max(x.time),
                    _ => {}
                }
            }
            let summary = r.workflow(&wf.workflow_id).unwrap();
            if let Some(m) = summary.makespan {
                prop_assert!((m - (last_end - first_release)).abs() <= 1e-9 * m.max(1.0));
            }
            if summary.completed == wf.len() {
                prop_assert!(summary.makespan.is_some());
            }
        }

        for t in &r.tasks {
            if t.status == TaskStatus::Completed {
                prop_assert!(t.exec_end.is_some());
            }
        }

        let csv = to_csv_string(trace);
        let back = read_csv(csv.as_bytes()).unwrap();
        prop_assert_eq!(&back, trace);
        let again = run_scenario(&b).unwrap();
        prop_assert_eq!(to_csv_string(&again.output.trace), csv);
    }
}
