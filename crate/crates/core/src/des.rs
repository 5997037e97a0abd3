//! Discrete-event kernel.
//!
//! The kernel knows nothing about networks, tasks or VMs. It owns a clock, a
//! future-event queue ordered by `(time, seq)` and a registry of entities that
//! receive dispatched events. Equal-time events are delivered in scheduling
//! order, so a run is a pure function of its inputs.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use thiserror::Error;

/// Simulated time in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    /// Panics on negative or NaN input; all times in a run originate from
    /// validated inputs plus non-negative delays.
    pub fn new(secs: f64) -> Self {
        assert!(secs >= 0.0, "simulation time must be non-negative, got {secs}");
        SimTime(secs)
    }

    pub fn as_secs(self) -> f64 {
        self.0
    }
}

impl Eq for SimTime {}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add<f64> for SimTime {
    type Output = SimTime;

    fn add(self, delay: f64) -> SimTime {
        SimTime::new(self.0 + delay)
    }
}

impl Sub for SimTime {
    type Output = f64;

    fn sub(self, rhs: SimTime) -> f64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Handle to a scheduled event; its insertion sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

/// Payloads name their kind so dispatch traces can be compared across runs.
pub trait EventTag {
    fn tag(&self) -> &'static str;
}

#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub time: SimTime,
    pub source: EntityId,
    pub destination: EntityId,
    pub seq: u64,
    pub payload: P,
}

impl<P> PartialEq for SimEvent<P> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<P> Eq for SimEvent<P> {}

impl<P> PartialOrd for SimEvent<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for SimEvent<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .cmp(&other.time)
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesError {
    #[error("event at {at} is in the past (clock is {clock})")]
    PastEvent { at: f64, clock: f64 },
    #[error("unknown destination entity {0}")]
    UnknownEntity(EntityId),
    #[error("entities cannot be registered once the simulation has started")]
    AlreadyRunning,
}

/// One dispatched event, as seen by the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchRecord {
    pub time: SimTime,
    pub source: EntityId,
    pub destination: EntityId,
    pub tag: &'static str,
}

/// Clock and future-event queue. Handlers receive a mutable reference to it
/// and use it to schedule follow-up events.
pub struct Scheduler<P> {
    clock: SimTime,
    queue: BinaryHeap<Reverse<SimEvent<P>>>,
    next_seq: u64,
    entity_count: u32,
    cancelled: HashSet<u64>,
}

impl<P> Scheduler<P> {
    fn new() -> Self {
        Scheduler {
            clock: SimTime::ZERO,
            queue: BinaryHeap::new(),
            next_seq: 0,
            entity_count: 0,
            cancelled: HashSet::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn schedule(
        &mut self,
        time: SimTime,
        source: EntityId,
        destination: EntityId,
        payload: P,
    ) -> Result<EventId, DesError> {
        if time < self.clock {
            return Err(DesError::PastEvent {
                at: time.as_secs(),
                clock: self.clock.as_secs(),
            });
        }
        if destination.0 >= self.entity_count {
            return Err(DesError::UnknownEntity(destination));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(SimEvent {
            time,
            source,
            destination,
            seq,
            payload,
        }));
        Ok(EventId(seq))
    }

    /// Schedules `payload` `delay` seconds from now.
    pub fn schedule_in(
        &mut self,
        delay: f64,
        source: EntityId,
        destination: EntityId,
        payload: P,
    ) -> Result<EventId, DesError> {
        if delay.is_nan() || delay < 0.0 {
            return Err(DesError::PastEvent {
                at: self.clock.as_secs() + delay,
                clock: self.clock.as_secs(),
            });
        }
        self.schedule(self.clock + delay, source, destination, payload)
    }

    /// Tombstones a queued event; it is discarded when popped.
    pub fn cancel(&mut self, id: EventId) {
        if id.0 < self.next_seq {
            self.cancelled.insert(id.0);
        }
    }

    /// Number of live (non-cancelled) events still queued.
    pub fn pending(&self) -> usize {
        self.queue
            .iter()
            .filter(|e| !self.cancelled.contains(&e.0.seq))
            .count()
    }

    fn pop_live(&mut self, until: Option<SimTime>) -> Option<SimEvent<P>> {
        loop {
            let head = self.queue.peek()?;
            if let Some(limit) = until {
                if head.0.time > limit {
                    return None;
                }
            }
            let Reverse(event) = self.queue.pop()?;
            if self.cancelled.remove(&event.seq) {
                continue;
            }
            return Some(event);
        }
    }
}

/// An event handler registered with the kernel.
pub trait Entity<P> {
    fn name(&self) -> String;

    fn on_event(&mut self, event: SimEvent<P>, sched: &mut Scheduler<P>);

    /// Called once, in id order, after the run loop stops.
    fn on_finish(&mut self, _sched: &mut Scheduler<P>) {}
}

pub struct Simulation<P> {
    sched: Scheduler<P>,
    entities: Vec<Box<dyn Entity<P>>>,
    started: bool,
    trace: Option<Vec<DispatchRecord>>,
}

impl<P: EventTag> Default for Simulation<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P: EventTag> Simulation<P> {
    pub fn new() -> Self {
        Simulation {
            sched: Scheduler::new(),
            entities: Vec::new(),
            started: false,
            trace: None,
        }
    }

    /// Records every dispatch as a [`DispatchRecord`].
    pub fn with_dispatch_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn register_entity(&mut self, entity: Box<dyn Entity<P>>) -> Result<EntityId, DesError> {
        if self.started {
            return Err(DesError::AlreadyRunning);
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(entity);
        self.sched.entity_count += 1;
        Ok(id)
    }

    pub fn scheduler(&mut self) -> &mut Scheduler<P> {
        &mut self.sched
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn entity_name(&self, id: EntityId) -> Option<String> {
        self.entities.get(id.0 as usize).map(|e| e.name())
    }

    pub fn dispatch_trace(&self) -> &[DispatchRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Dispatches the next event, if any. Returns `false` on an empty queue.
    pub fn step(&mut self) -> bool {
        self.step_until(None)
    }

    fn step_until(&mut self, until: Option<SimTime>) -> bool {
        self.started = true;
        let Some(event) = self.sched.pop_live(until) else {
            return false;
        };
        debug_assert!(event.time >= self.sched.clock);
        self.sched.clock = event.time;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(DispatchRecord {
                time: event.time,
                source: event.source,
                destination: event.destination,
                tag: event.payload.tag(),
            });
        }
        let entity = &mut self.entities[event.destination.0 as usize];
        entity.on_event(event, &mut self.sched);
        true
    }

    /// Runs until the queue is exhausted or, with `until`, until the next
    /// event lies beyond it. Events after `until` stay queued. Returns the
    /// final clock: the last dispatch time, or `until` when events remain
    /// beyond the horizon.
    pub fn run(&mut self, until: Option<SimTime>) -> SimTime {
        while self.step_until(until) {}
        if let Some(limit) = until {
            if self.sched.pending() > 0 && limit > self.sched.clock {
                self.sched.clock = limit;
            }
        }
        for entity in self.entities.iter_mut() {
            entity.on_finish(&mut self.sched);
        }
        self.sched.clock
    }
}
