use std::collections::{BTreeMap, VecDeque};

use super::{DeviceId, NetworkError, Topology};

/// Next-hop entries keyed by `(source, destination)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoutingTable {
    next: BTreeMap<(DeviceId, DeviceId), DeviceId>,
}

/// An explicit `(source, destination, next_hop)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteEntry {
    pub source: DeviceId,
    pub destination: DeviceId,
    pub next_hop: DeviceId,
}

/// Hop distance from every device to `target`.
fn distances_to(topology: &Topology, target: DeviceId) -> BTreeMap<DeviceId, usize> {
    let mut dist = BTreeMap::new();
    dist.insert(target, 0);
    let mut frontier = VecDeque::from([target]);
    while let Some(d) = frontier.pop_front() {
        let here = dist[&d];
        for n in topology.neighbors(d) {
            dist.entry(n).or_insert_with(|| {
                frontier.push_back(n);
                here + 1
            });
        }
    }
    dist
}

/// All-pairs minimum-hop routing; among equally short routes the smallest
/// next-hop id wins.
pub fn build_routing_tables(topology: &Topology) -> Result<RoutingTable, NetworkError> {
    let mut next = BTreeMap::new();
    for dst in topology.devices() {
        let dist = distances_to(topology, dst);
        for src in topology.devices() {
            if src == dst {
                continue;
            }
            let Some(&d) = dist.get(&src) else {
                return Err(NetworkError::DisconnectedTopology { from: src, to: dst });
            };
            let hop = topology
                .neighbors(src)
                .into_iter()
                .find(|n| dist.get(n) == Some(&(d - 1)))
                .expect("a device at distance d has a neighbor at distance d-1");
            next.insert((src, dst), hop);
        }
    }
    Ok(RoutingTable { next })
}

impl RoutingTable {
    pub fn next_hop(&self, source: DeviceId, destination: DeviceId) -> Option<DeviceId> {
        self.next.get(&(source, destination)).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = RouteEntry> + '_ {
        self.next.iter().map(|(&(source, destination), &next_hop)| RouteEntry {
            source,
            destination,
            next_hop,
        })
    }

    pub fn len(&self) -> usize {
        self.next.len()
    }

    pub fn is_empty(&self) -> bool {
        self.next.is_empty()
    }

    /// Devices visited after `source`, ending at `destination`.
    pub fn path(&self, source: DeviceId, destination: DeviceId) -> Result<Vec<DeviceId>, NetworkError> {
        let mut path = Vec::new();
        let mut at = source;
        while at != destination {
            let hop = self.next_hop(at, destination).ok_or(NetworkError::NoRoute {
                from: source,
                to: destination,
            })?;
            if hop == source || path.contains(&hop) {
                return Err(NetworkError::RoutingLoop {
                    from: source,
                    to: destination,
                });
            }
            path.push(hop);
            at = hop;
        }
        Ok(path)
    }

    /// Replaces individual entries, then re-checks that every route still
    /// terminates without revisiting a device.
    pub fn apply_overrides(
        &mut self,
        topology: &Topology,
        overrides: &[RouteEntry],
    ) -> Result<(), NetworkError> {
        for r in overrides {
            for d in [r.source, r.destination, r.next_hop] {
                if !topology.contains(d) {
                    return Err(NetworkError::UnknownDevice(d));
                }
            }
            if topology.link(r.source, r.next_hop).is_none() {
                return Err(NetworkError::InvalidRoute(*r));
            }
            self.next.insert((r.source, r.destination), r.next_hop);
        }
        let pairs: Vec<_> = self.next.keys().copied().collect();
        for (s, d) in pairs {
            self.path(s, d)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: u32, edges: &[(u32, u32)]) -> Topology {
        let mut t = Topology::new();
        for i in 0..n {
            t.add_device(DeviceId(i)).unwrap();
        }
        for &(a, b) in edges {
            t.add_link(DeviceId(a), DeviceId(b), 1000.0, 0.0).unwrap();
        }
        t
    }

    /// Every simple path from `s` to `d`, by exhaustive DFS.
    fn all_simple_paths(t: &Topology, s: DeviceId, d: DeviceId) -> Vec<Vec<DeviceId>> {
        fn go(t: &Topology, at: DeviceId, d: DeviceId, seen: &mut Vec<DeviceId>, out: &mut Vec<Vec<DeviceId>>) {
            if at == d {
                out.push(seen[1..].to_vec());
                return;
            }
            for n in t.neighbors(at) {
                if !seen.contains(&n) {
                    seen.push(n);
                    go(t, n, d, seen, out);
                    seen.pop();
                }
            }
        }
        let mut out = Vec::new();
        go(t, s, d, &mut vec![s], &mut out);
        out
    }

    #[test]
    fn linear_chain_routes_through_every_device() {
        // d1..d8 as ids 1..=8
        let mut t = Topology::new();
        for i in 1..=8 {
            t.add_device(DeviceId(i)).unwrap();
        }
        for i in 1..8 {
            t.add_link(DeviceId(i), DeviceId(i + 1), 1024.0, 0.0).unwrap();
        }
        let rt = build_routing_tables(&t).unwrap();
        assert_eq!(rt.next_hop(DeviceId(1), DeviceId(8)), Some(DeviceId(2)));
        assert_eq!(
            rt.path(DeviceId(1), DeviceId(8)).unwrap(),
            (2..=8).map(DeviceId).collect::<Vec<_>>()
        );
        assert_eq!(rt.len(), 8 * 7);
    }

    #[test]
    fn two_nodes() {
        let t = graph(2, &[(0, 1)]);
        let rt = build_routing_tables(&t).unwrap();
        assert_eq!(rt.next_hop(DeviceId(0), DeviceId(1)), Some(DeviceId(1)));
    }

    #[test]
    fn four_cycle_tie_goes_to_smaller_next_hop() {
        // a=0, b=1, c=2, d=3; cycle a-b-c-d-a
        let t = graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let paths = all_simple_paths(&t, DeviceId(0), DeviceId(2));
        let shortest = paths.iter().map(Vec::len).min().unwrap();
        let expected = paths
            .iter()
            .filter(|p| p.len() == shortest)
            .map(|p| p[0])
            .min()
            .unwrap();
        assert_eq!(expected, DeviceId(1));
        let rt = build_routing_tables(&t).unwrap();
        assert_eq!(rt.next_hop(DeviceId(0), DeviceId(2)), Some(expected));
    }

    #[test]
    fn disconnected_names_pair() {
        let t = graph(3, &[(0, 1)]);
        let err = build_routing_tables(&t).unwrap_err();
        assert_eq!(
            err,
            NetworkError::DisconnectedTopology {
                from: DeviceId(2),
                to: DeviceId(0)
            }
        );
    }

    #[test]
    fn override_must_use_neighbor() {
        let t = graph(3, &[(0, 1), (1, 2)]);
        let mut rt = build_routing_tables(&t).unwrap();
        let bad = RouteEntry {
            source: DeviceId(0),
            destination: DeviceId(2),
            next_hop: DeviceId(2),
        };
        assert!(matches!(
            rt.apply_overrides(&t, &[bad]),
            Err(NetworkError::InvalidRoute(_))
        ));
    }

    #[test]
    fn override_loop_detected() {
        let t = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let mut rt = build_routing_tables(&t).unwrap();
        let loops = [
            RouteEntry {
                source: DeviceId(0),
                destination: DeviceId(2),
                next_hop: DeviceId(1),
            },
            RouteEntry {
                source: DeviceId(1),
                destination: DeviceId(2),
                next_hop: DeviceId(0),
            },
        ];
        assert!(matches!(
            rt.apply_overrides(&t, &loops),
            Err(NetworkError::RoutingLoop { .. })
        ));
    }

    #[test]
    fn override_longer_route_accepted() {
        let t = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let mut rt = build_routing_tables(&t).unwrap();
        rt.apply_overrides(
            &t,
            &[RouteEntry {
                source: DeviceId(0),
                destination: DeviceId(2),
                next_hop: DeviceId(1),
            }],
        )
        .unwrap();
        assert_eq!(rt.path(DeviceId(0), DeviceId(2)).unwrap(), vec![DeviceId(1), DeviceId(2)]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Connected random graph: a random spanning tree plus extra edges.
        fn connected_graph() -> impl Strategy<Value = Topology> {
            (2u32..9)
                .prop_flat_map(|n| {
                    let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
                    (Just(n), parents, proptest::collection::vec((0..n, 0..n), 0..10))
                })
                .prop_map(|(n, parents, extra)| {
                    let mut t = Topology::new();
                    for i in 0..n {
                        t.add_device(DeviceId(i)).unwrap();
                    }
                    for (i, p) in parents.into_iter().enumerate() {
                        t.add_link(DeviceId(i as u32 + 1), DeviceId(p), 1.0, 0.0).unwrap();
                    }
                    for (a, b) in extra {
                        let _ = t.add_link(DeviceId(a), DeviceId(b), 1.0, 0.0);
                    }
                    t
                })
        }

        proptest! {
            #[test]
            fn routes_are_sound_and_minimal(t in connected_graph()) {
                let rt = build_routing_tables(&t).unwrap();
                for s in t.devices() {
                    for d in t.devices() {
                        if s == d { continue; }
                        let path = rt.path(s, d).unwrap();
                        let paths = all_simple_paths(&t, s, d);
                        let shortest = paths.iter().map(Vec::len).min().unwrap();
                        prop_assert_eq!(path.len(), shortest);
                        prop_assert!(t.link(s, path[0]).is_some());
                    }
                }
            }
        }
    }
}
