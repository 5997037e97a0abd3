use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ComputeError, HostId};
use crate::des::SimTime;
use crate::network::DeviceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VmId(pub u32);

impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    #[default]
    TimeShared,
    SpaceShared,
}

/// Requested VM shape. `mips` is per PE.
#[derive(Debug, Clone, PartialEq)]
pub struct VmSpec {
    pub id: VmId,
    pub mips: f64,
    pub pes: u32,
    pub ram: f64,
    pub bandwidth: f64,
    pub image_size: f64,
    pub host_binding: Option<HostId>,
    /// Pins the VM to a device; unpinned VMs are placed by the provisioner.
    pub device: Option<DeviceId>,
    pub scheduler: SchedulerKind,
}

/// Remaining work at or below this fraction of the original length counts as
/// done; absorbs rounding from repeated share × dt subtraction.
const DONE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Execution<K> {
    pub key: K,
    pub length: f64,
    pub remaining: f64,
}

impl<K> Execution<K> {
    fn is_done(&self) -> bool {
        self.remaining <= self.length * DONE_TOLERANCE
    }
}

/// What changed after the active set was touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<K> {
    pub finished: Vec<K>,
    pub started: Vec<K>,
}

impl<K> Default for Transition<K> {
    fn default() -> Self {
        Transition {
            finished: Vec::new(),
            started: Vec::new(),
        }
    }
}

/// A VM placed on a host, executing tasks under a fluid processor-sharing
/// model. Remaining work is brought up to date lazily by [`VmRuntime::advance`].
#[derive(Debug, Clone)]
pub struct VmRuntime<K> {
    pub spec: VmSpec,
    pub host: HostId,
    running: Vec<Execution<K>>,
    waiting: VecDeque<Execution<K>>,
    last_update: SimTime,
}

impl<K: Clone + PartialEq> VmRuntime<K> {
    pub fn new(spec: VmSpec, host: HostId, now: SimTime) -> Self {
        VmRuntime {
            spec,
            host,
            running: Vec::new(),
            waiting: VecDeque::new(),
            last_update: now,
        }
    }

    pub fn kind(&self) -> SchedulerKind {
        self.spec.scheduler
    }

    pub fn capacity(&self) -> f64 {
        self.spec.mips * self.spec.pes as f64
    }

    /// MIPS granted to each running execution.
    pub fn share(&self) -> f64 {
        let n = self.running.len();
        if n == 0 {
            return 0.0;
        }
        match self.kind() {
            SchedulerKind::TimeShared => {
                self.spec.mips * (self.spec.pes as f64 / n as f64).min(1.0)
            }
            SchedulerKind::SpaceShared => self.spec.mips,
        }
    }

    /// Share a newly submitted execution would receive.
    pub fn share_if_added(&self) -> f64 {
        let n = self.running.len() + self.waiting.len() + 1;
        match self.kind() {
            SchedulerKind::TimeShared => self.spec.mips * (self.spec.pes as f64 / n as f64).min(1.0),
            SchedulerKind::SpaceShared => self.spec.mips,
        }
    }

    pub fn running(&self) -> &[Execution<K>] {
        &self.running
    }

    pub fn waiting_len(&self) -> usize {
        self.waiting.len()
    }

    pub fn active_count(&self) -> usize {
        self.running.len() + self.waiting.len()
    }

    pub fn is_idle(&self) -> bool {
        self.active_count() == 0
    }

    pub fn contains(&self, key: &K) -> bool {
        self.running.iter().any(|e| &e.key == key) || self.waiting.iter().any(|e| &e.key == key)
    }

    /// Charges elapsed time since the last update to every running execution.
    pub fn advance(&mut self, now: SimTime) {
        let dt = now - self.last_update;
        if dt > 0.0 {
            let share = self.share();
            for e in &mut self.running {
                e.remaining = (e.remaining - share * dt).max(0.0);
            }
        }
        if now > self.last_update {
            self.last_update = now;
        }
    }

    fn fill_pes(&mut self, started: &mut Vec<K>) {
        if self.kind() == SchedulerKind::SpaceShared {
            while self.running.len() < self.spec.pes as usize {
                let Some(e) = self.waiting.pop_front() else { break };
                started.push(e.key.clone());
                self.running.push(e);
            }
        }
    }

    /// Adds an execution of `length` MI at `now`.
    pub fn submit(&mut self, key: K, length: f64, now: SimTime) -> Result<Transition<K>, ComputeError> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(ComputeError::InvalidLength(length));
        }
        self.advance(now);
        let exec = Execution {
            key: key.clone(),
            length,
            remaining: length,
        };
        let mut t = Transition::default();
        match self.kind() {
            SchedulerKind::TimeShared => {
                self.running.push(exec);
                t.started.push(key);
            }
            SchedulerKind::SpaceShared => {
                self.waiting.push_back(exec);
                self.fill_pes(&mut t.started);
            }
        }
        Ok(t)
    }

    /// Removes every execution whose work is done at `now`, then promotes
    /// waiting executions onto freed PEs.
    pub fn complete_due(&mut self, now: SimTime) -> Transition<K> {
        self.advance(now);
        let mut t = Transition::default();
        let mut i = 0;
        while i < self.running.len() {
            if self.running[i].is_done() {
                t.finished.push(self.running.remove(i).key);
            } else {
                i += 1;
            }
        }
        self.fill_pes(&mut t.started);
        t
    }

    /// Drops an execution. Returns `None` when `key` is not present.
    pub fn cancel(&mut self, key: &K, now: SimTime) -> Option<Transition<K>> {
        self.advance(now);
        if let Some(i) = self.running.iter().position(|e| &e.key == key) {
            self.running.remove(i);
        } else if let Some(i) = self.waiting.iter().position(|e| &e.key == key) {
            self.waiting.remove(i);
        } else {
            return None;
        }
        let mut t = Transition::default();
        self.fill_pes(&mut t.started);
        Some(t)
    }

    /// Removes all executions, running or waiting.
    pub fn drain(&mut self, now: SimTime) -> Vec<K> {
        self.advance(now);
        self.running
            .drain(..)
            .chain(self.waiting.drain(..))
            .map(|e| e.key)
            .collect()
    }

    /// Projected finish of every running execution assuming the active set
    /// stays as it is. Waiting executions have no projection yet.
    pub fn reschedule(&mut self, now: SimTime) -> Vec<(K, SimTime)> {
        self.advance(now);
        let share = self.share();
        self.running
            .iter()
            .map(|e| (e.key.clone(), now + e.remaining / share))
            .collect()
    }

    /// Outstanding MI over running and waiting executions, projected to `now`.
    pub fn remaining_work(&self, now: SimTime) -> f64 {
        let dt = (now - self.last_update).max(0.0);
        let share = self.share();
        let running: f64 = self.running.iter().map(|e| (e.remaining - share * dt).max(0.0)).sum();
        running + self.waiting.iter().map(|e| e.remaining).sum::<f64>()
    }

    /// Projected finish of a running execution under the current share.
    pub fn projected_finish(&self, key: &K) -> Option<SimTime> {
        let e = self.running.iter().find(|e| &e.key == key)?;
        Some(self.last_update + e.remaining / self.share())
    }

    pub fn next_completion(&self) -> Option<SimTime> {
        let share = self.share();
        self.running
            .iter()
            .map(|e| self.last_update + e.remaining / share)
            .min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vm(pes: u32, mips: f64, kind: SchedulerKind) -> VmRuntime<u32> {
        VmRuntime::new(
            VmSpec {
                id: VmId(0),
                mips,
                pes,
                ram: 512.0,
                bandwidth: 1000.0,
                image_size: 10000.0,
                host_binding: None,
                device: None,
                scheduler: kind,
            },
            HostId(0),
            SimTime::ZERO,
        )
    }

    /// Runs the VM to completion from `now`, returning finish times per key.
    fn drain_finishes(v: &mut VmRuntime<u32>) -> Vec<(u32, f64)> {
        let mut out = Vec::new();
        while let Some(t) = v.next_completion() {
            for k in v.complete_due(t).finished {
                out.push((k, t.as_secs()));
            }
        }
        out
    }

    #[test]
    fn single_task_one_second() {
        let mut v = vm(1, 1000.0, SchedulerKind::TimeShared);
        v.submit(0, 1000.0, SimTime::ZERO).unwrap();
        assert_eq!(v.next_completion(), Some(SimTime::new(1.0)));
    }

    #[test]
    fn two_equal_tasks_share_equally() {
        let mut v = vm(1, 1000.0, SchedulerKind::TimeShared);
        v.submit(0, 1000.0, SimTime::ZERO).unwrap();
        v.submit(1, 1000.0, SimTime::ZERO).unwrap();
        assert_eq!(v.share(), 500.0);
        assert_eq!(drain_finishes(&mut v), vec![(0, 2.0), (1, 2.0)]);
    }

    #[test]
    fn short_task_leaves_full_speed_to_long() {
        let mut v = vm(1, 1000.0, SchedulerKind::TimeShared);
        v.submit(0, 1000.0, SimTime::ZERO).unwrap();
        v.submit(1, 500.0, SimTime::ZERO).unwrap();
        assert_eq!(drain_finishes(&mut v), vec![(1, 1.0), (0, 1.5)]);
    }

    #[test]
    fn two_pes_no_contention() {
        let mut v = vm(2, 1000.0, SchedulerKind::TimeShared);
        v.submit(0, 1000.0, SimTime::ZERO).unwrap();
        v.submit(1, 1000.0, SimTime::ZERO).unwrap();
        assert_eq!(v.share(), 1000.0);
        let proj = v.reschedule(SimTime::ZERO);
        assert_eq!(proj, vec![(0, SimTime::new(1.0)), (1, SimTime::new(1.0))]);
    }

    #[test]
    fn space_shared_fcfs() {
        let mut v = vm(1, 1000.0, SchedulerKind::SpaceShared);
        let t = v.submit(0, 1000.0, SimTime::ZERO).unwrap();
        assert_eq!(t.started, vec![0]);
        let t = v.submit(1, 1000.0, SimTime::ZERO).unwrap();
        assert!(t.started.is_empty());
        assert_eq!(v.waiting_len(), 1);
        assert_eq!(drain_finishes(&mut v), vec![(0, 1.0), (1, 2.0)]);
    }

    #[test]
    fn cancel_frees_share() {
        let mut v = vm(1, 1000.0, SchedulerKind::TimeShared);
        v.submit(0, 1000.0, SimTime::ZERO).unwrap();
        v.submit(1, 1000.0, SimTime::ZERO).unwrap();
        v.cancel(&1, SimTime::new(1.0)).unwrap();
        // 500 MI left at full speed.
        assert_eq!(v.next_completion(), Some(SimTime::new(1.5)));
        assert!(v.cancel(&7, SimTime::new(1.0)).is_none());
    }

    #[test]
    fn zero_length_rejected() {
        let mut v = vm(1, 1000.0, SchedulerKind::TimeShared);
        assert!(matches!(
            v.submit(0, 0.0, SimTime::ZERO),
            Err(ComputeError::InvalidLength(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn run(kind: SchedulerKind, pes: u32, subs: &[(f64, f64)]) -> Vec<f64> {
            let mut v = vm(pes, 1000.0, kind);
            let mut finish = vec![f64::NAN; subs.len()];
            let mut order: Vec<usize> = (0..subs.len()).collect();
            order.sort_by(|&a, &b| subs[a].0.total_cmp(&subs[b].0).then(a.cmp(&b)));
            let mut next = 0;
            loop {
                let sub_t = order.get(next).map(|&i| subs[i].0);
                let done_t = v.next_completion().map(SimTime::as_secs);
                match (sub_t, done_t) {
                    (None, None) => break,
                    (Some(s), d) if d.is_none_or(|d| s < d) => {
                        let i = order[next];
                        v.submit(i as u32, subs[i].1, SimTime::new(s)).unwrap();
                        next += 1;
                    }
                    (_, Some(d)) => {
                        for k in v.complete_due(SimTime::new(d)).finished {
                            finish[k as usize] = d;
                        }
                    }
                    _ => unreachable!(),
                }
            }
            finish
        }

        proptest! {
            #[test]
            fn single_task_equivalence(len in 1.0f64..1e5, at in 0.0f64..100.0) {
                let a = run(SchedulerKind::TimeShared, 1, &[(at, len)]);
                let b = run(SchedulerKind::SpaceShared, 1, &[(at, len)]);
                prop_assert_eq!(a, b);
            }

            #[test]
            fn adding_a_task_never_speeds_others(
                pes in 1u32..4,
                subs in proptest::collection::vec((0.0f64..5.0, 100.0f64..5000.0), 1..6),
                extra in (0.0f64..5.0, 100.0f64..5000.0),
            ) {
                let base = run(SchedulerKind::TimeShared, pes, &subs);
                let mut more = subs.clone();
                more.push(extra);
                let with = run(SchedulerKind::TimeShared, pes, &more);
                for (a, b) in base.iter().zip(&with) {
                    prop_assert!(*b >= *a - 1e-9 * a.max(1.0));
                }
            }

            #[test]
            fn time_shared_is_work_conserving(pes in 1u32..5, n in 1usize..10) {
                let mut v = vm(pes, 750.0, SchedulerKind::TimeShared);
                for i in 0..n {
                    v.submit(i as u32, 1000.0, SimTime::ZERO).unwrap();
                }
                let total = v.share() * n as f64;
                let expected = (750.0 * pes as f64).min(n as f64 * 750.0);
                prop_assert!((total - expected).abs() < 1e-9 * expected);
            }
        }
    }
}
