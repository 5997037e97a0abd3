use std::collections::{BTreeMap, VecDeque};

use crate::des::SimTime;

use super::{DeviceId, NetworkError, RoutingTable, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct Packet<T> {
    pub id: u64,
    /// MB. Zero for pure-latency control traffic.
    pub size: f64,
    pub origin: DeviceId,
    pub destination: DeviceId,
    pub payload: T,
}

/// Timing of one packet across one link direction.
#[derive(Debug, Clone, PartialEq)]
pub struct HopRecord {
    pub packet_id: u64,
    pub from: DeviceId,
    pub to: DeviceId,
    pub size: f64,
    pub enqueued: SimTime,
    pub service_start: SimTime,
    pub service_end: SimTime,
    pub arrival: SimTime,
}

#[derive(Debug)]
struct Waiting<T> {
    packet: Packet<T>,
    enqueued: SimTime,
}

/// One direction of a link: a single server with an FCFS queue.
#[derive(Debug)]
pub struct LinkDirection<T> {
    pub from: DeviceId,
    pub to: DeviceId,
    pub bandwidth: f64,
    pub latency: f64,
    queue: VecDeque<Waiting<T>>,
    in_service: Option<(Waiting<T>, SimTime)>,
}

impl<T> LinkDirection<T> {
    pub fn new(from: DeviceId, to: DeviceId, bandwidth: f64, latency: f64) -> Self {
        LinkDirection {
            from,
            to,
            bandwidth,
            latency,
            queue: VecDeque::new(),
            in_service: None,
        }
    }

    pub fn serialization_time(&self, size: f64) -> f64 {
        size / self.bandwidth
    }

    pub fn is_busy(&self) -> bool {
        self.in_service.is_some()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Returns the service end time when the packet goes straight into
    /// service, `None` when it has to wait.
    pub fn enqueue(&mut self, packet: Packet<T>, now: SimTime) -> Option<SimTime> {
        let w = Waiting {
            packet,
            enqueued: now,
        };
        if self.in_service.is_some() {
            self.queue.push_back(w);
            return None;
        }
        let end = now + self.serialization_time(w.packet.size);
        self.in_service = Some((w, now));
        Some(end)
    }

    /// Finishes the packet in service and starts the next one, if any.
    /// Returns the finished packet, its hop record and the next service end.
    pub fn complete(&mut self, now: SimTime) -> (Packet<T>, HopRecord, Option<SimTime>) {
        let (w, start) = self
            .in_service
            .take()
            .expect("complete called on an idle link direction");
        let hop = HopRecord {
            packet_id: w.packet.id,
            from: self.from,
            to: self.to,
            size: w.packet.size,
            enqueued: w.enqueued,
            service_start: start,
            service_end: now,
            arrival: now + self.latency,
        };
        let next_end = self.queue.pop_front().map(|next| {
            let end = now + self.serialization_time(next.packet.size);
            self.in_service = Some((next, now));
            end
        });
        (w.packet, hop, next_end)
    }
}

/// Outcome of presenting a packet to the device it is currently at.
#[derive(Debug)]
pub enum Routed<T> {
    /// The packet is at its final destination.
    Delivered(Packet<T>),
    /// Placed into service on `link`; transmission ends at `service_end`.
    Transmitting {
        link: (DeviceId, DeviceId),
        service_end: SimTime,
    },
    /// Waiting behind other packets on `link`.
    Queued { link: (DeviceId, DeviceId) },
}

/// All link directions of a topology plus its routing table.
#[derive(Debug)]
pub struct NetworkState<T> {
    routes: RoutingTable,
    links: BTreeMap<(DeviceId, DeviceId), LinkDirection<T>>,
    next_packet_id: u64,
}

impl<T> NetworkState<T> {
    pub fn new(topology: &Topology, routes: RoutingTable) -> Self {
        let mut links = BTreeMap::new();
        for l in topology.links() {
            links.insert((l.a, l.b), LinkDirection::new(l.a, l.b, l.bandwidth, l.latency));
            links.insert((l.b, l.a), LinkDirection::new(l.b, l.a, l.bandwidth, l.latency));
        }
        NetworkState {
            routes,
            links,
            next_packet_id: 0,
        }
    }

    pub fn routes(&self) -> &RoutingTable {
        &self.routes
    }

    pub fn link(&self, from: DeviceId, to: DeviceId) -> Option<&LinkDirection<T>> {
        self.links.get(&(from, to))
    }

    pub fn new_packet(&mut self, size: f64, origin: DeviceId, destination: DeviceId, payload: T) -> Packet<T> {
        let id = self.next_packet_id;
        self.next_packet_id += 1;
        Packet {
            id,
            size,
            origin,
            destination,
            payload,
        }
    }

    /// Forwards `packet` one step from device `at`.
    pub fn route(&mut self, at: DeviceId, packet: Packet<T>, now: SimTime) -> Result<Routed<T>, NetworkError> {
        if packet.destination == at {
            return Ok(Routed::Delivered(packet));
        }
        let next = self
            .routes
            .next_hop(at, packet.destination)
            .ok_or(NetworkError::NoRoute {
                from: at,
                to: packet.destination,
            })?;
        let link = (at, next);
        let dir = self
            .links
            .get_mut(&link)
            .ok_or(NetworkError::NoRoute { from: at, to: next })?;
        Ok(match dir.enqueue(packet, now) {
            Some(service_end) => Routed::Transmitting { link, service_end },
            None => Routed::Queued { link },
        })
    }

    pub fn transmission_done(
        &mut self,
        link: (DeviceId, DeviceId),
        now: SimTime,
    ) -> (Packet<T>, HopRecord, Option<SimTime>) {
        self.links
            .get_mut(&link)
            .expect("transmission on a known link")
            .complete(now)
    }

    /// Sum of serialization plus latency along the routed path, ignoring
    /// queueing. Used by policies to estimate transfer cost.
    pub fn idle_transfer_time(&self, from: DeviceId, to: DeviceId, size: f64) -> Option<f64> {
        if from == to {
            return Some(0.0);
        }
        let path = self.routes.path(from, to).ok()?;
        let mut at = from;
        let mut total = 0.0;
        for hop in path {
            let l = self.links.get(&(at, hop))?;
            total += l.serialization_time(size) + l.latency;
            at = hop;
        }
        Some(total)
    }

    pub fn hop_count(&self, from: DeviceId, to: DeviceId) -> Option<usize> {
        if from == to {
            return Some(0);
        }
        self.routes.path(from, to).ok().map(|p| p.len())
    }
}
