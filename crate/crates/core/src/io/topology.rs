use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use super::{decode, IoError, NonNeg};
use crate::compute::{HostId, HostSpec, SchedulerKind, VmId, VmSpec};
use crate::network::{DeviceId, NetworkError, RouteEntry, Topology};
use crate::orchestration::{DeviceSpec, Infrastructure};

/// Link bandwidth in MB/s when a neighbor entry does not state one.
pub const DEFAULT_LINK_BANDWIDTH: f64 = 1000.0;

#[derive(Debug, Serialize, Deserialize)]
struct Document {
    fog_devices: Vec<DeviceDoc>,
    #[serde(default)]
    vms: Vec<VmDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    routes: Vec<RouteDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DeviceDoc {
    id: u32,
    #[serde(default)]
    neighbors: Vec<NeighborDoc>,
    #[serde(default)]
    hosts: Vec<HostDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LinkDoc {
    id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bandwidth_mbps: Option<NonNeg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latency_s: Option<NonNeg>,
}

/// A neighbor is either a bare device id or an object with link attributes.
#[derive(Debug, Serialize)]
#[serde(untagged)]
enum NeighborDoc {
    Bare(u32),
    Link(LinkDoc),
}

impl<'de> Deserialize<'de> for NeighborDoc {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct NeighborVisitor;

        impl<'de> Visitor<'de> for NeighborVisitor {
            type Value = NeighborDoc;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a device id or {id, bandwidth_mbps?, latency_s?}")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<NeighborDoc, E> {
                u32::try_from(v)
                    .map(NeighborDoc::Bare)
                    .map_err(|_| E::custom(format!("device id {v} out of range")))
            }

            fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<NeighborDoc, A::Error> {
                LinkDoc::deserialize(de::value::MapAccessDeserializer::new(map)).map(NeighborDoc::Link)
            }
        }

        d.deserialize_any(NeighborVisitor)
    }
}

impl NeighborDoc {
    fn parts(&self) -> (u32, Option<f64>, Option<f64>) {
        match self {
            NeighborDoc::Bare(id) => (*id, None, None),
            NeighborDoc::Link(l) => (l.id, l.bandwidth_mbps.map(|b| b.0), l.latency_s.map(|l| l.0)),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PeDoc {
    mips: NonNeg,
}

#[derive(Debug, Serialize, Deserialize)]
struct HostDoc {
    id: u32,
    ram: NonNeg,
    bw: NonNeg,
    storage: NonNeg,
    pes: Vec<PeDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VmDoc {
    id: u32,
    mips: NonNeg,
    pes: u32,
    ram: NonNeg,
    bw: NonNeg,
    size: NonNeg,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    device_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    host_id: Option<u32>,
    #[serde(default)]
    scheduler: SchedulerKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct RouteDoc {
    src: u32,
    dst: u32,
    next_hop: u32,
}

/// Topology.json contents: devices and links, per-device hosts, the initial
/// VM list and any explicit route overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTopology {
    pub topology: Topology,
    pub devices: Vec<DeviceSpec>,
    pub vms: Vec<VmSpec>,
    pub routes: Vec<RouteEntry>,
}

impl ParsedTopology {
    /// Builds routing tables (min-hop plus overrides).
    pub fn infrastructure(&self) -> Result<Infrastructure, NetworkError> {
        Infrastructure::new(self.topology.clone(), self.devices.clone(), self.vms.clone(), &self.routes)
    }

    pub fn host_count(&self) -> usize {
        self.devices.iter().map(|d| d.hosts.len()).sum()
    }
}

struct Side {
    bandwidth: Option<f64>,
    latency: Option<f64>,
    path: String,
}

fn merge(a: Option<f64>, b: Option<f64>, what: &str, path: &str) -> Result<Option<f64>, IoError> {
    match (a, b) {
        (Some(x), Some(y)) if x != y => Err(IoError::schema(
            "topology",
            path,
            format!("{what} {y} conflicts with {x} declared by the other endpoint"),
        )),
        (x, y) => Ok(x.or(y)),
    }
}

fn host_spec(h: &HostDoc, path: &str) -> Result<HostSpec, IoError> {
    let Some(first) = h.pes.first() else {
        return Err(IoError::schema("topology", format!("{path}.pes"), "a host needs at least one PE"));
    };
    for (k, pe) in h.pes.iter().enumerate() {
        if pe.mips != first.mips {
            return Err(IoError::schema(
                "topology",
                format!("{path}.pes[{k}].mips"),
                format!("all PEs of a host must share one speed; expected {}, got {}", first.mips.0, pe.mips.0),
            ));
        }
    }
    Ok(HostSpec {
        id: HostId(h.id),
        pes: h.pes.len() as u32,
        mips_per_pe: first.mips.0,
        ram: h.ram.0,
        bandwidth: h.bw.0,
        storage: h.storage.0,
    })
}

/// Parses a Topology.json document. Neighbor lists must be symmetric; the
/// two listings of a pair become one full-duplex link.
pub fn parse_topology(text: &str, strict: bool) -> Result<(ParsedTopology, Vec<String>), IoError> {
    let (doc, warnings): (Document, _) = decode("topology", text, strict)?;
    let mut topology = Topology::new();
    for d in &doc.fog_devices {
        if topology.add_device(DeviceId(d.id)).is_err() {
            return Err(IoError::DuplicateId {
                document: "topology",
                kind: "device",
                id: d.id.to_string(),
            });
        }
    }

    // (lister, neighbor) -> declared attributes
    let mut sides: BTreeMap<(u32, u32), Side> = BTreeMap::new();
    for (i, d) in doc.fog_devices.iter().enumerate() {
        for (j, n) in d.neighbors.iter().enumerate() {
            let (id, bandwidth, latency) = n.parts();
            let path = format!("fog_devices[{i}].neighbors[{j}]");
            if !topology.contains(DeviceId(id)) {
                return Err(IoError::schema("topology", path, format!("unknown neighbor device {id}")));
            }
            if id == d.id {
                return Err(IoError::schema("topology", path, "a device cannot neighbor itself"));
            }
            match sides.entry((d.id, id)) {
                Entry::Occupied(_) => {
                    return Err(IoError::DuplicateId {
                        document: "topology",
                        kind: "neighbor",
                        id: format!("{id} of device {}", d.id),
                    })
                }
                Entry::Vacant(v) => {
                    v.insert(Side {
                        bandwidth,
                        latency,
                        path,
                    });
                }
            }
        }
    }
    for (&(a, b), side) in &sides {
        let Some(other) = sides.get(&(b, a)) else {
            return Err(IoError::AsymmetricNeighbor {
                device: DeviceId(a),
                neighbor: DeviceId(b),
            });
        };
        if a > b {
            continue;
        }
        let bandwidth = merge(side.bandwidth, other.bandwidth, "bandwidth_mbps", &other.path)?;
        let latency = merge(side.latency, other.latency, "latency_s", &other.path)?;
        topology.add_link(
            DeviceId(a),
            DeviceId(b),
            bandwidth.unwrap_or(DEFAULT_LINK_BANDWIDTH),
            latency.unwrap_or(0.0),
        )?;
    }

    let mut devices = Vec::with_capacity(doc.fog_devices.len());
    let mut hosts_of: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for (i, d) in doc.fog_devices.iter().enumerate() {
        let ids = hosts_of.entry(d.id).or_default();
        let mut hosts = Vec::with_capacity(d.hosts.len());
        for (k, h) in d.hosts.iter().enumerate() {
            if !ids.insert(h.id) {
                return Err(IoError::DuplicateId {
                    document: "topology",
                    kind: "host",
                    id: format!("{} on device {}", h.id, d.id),
                });
            }
            hosts.push(host_spec(h, &format!("fog_devices[{i}].hosts[{k}]"))?);
        }
        devices.push(DeviceSpec {
            id: DeviceId(d.id),
            hosts,
        });
    }

    let mut vm_ids = BTreeSet::new();
    let mut vms = Vec::with_capacity(doc.vms.len());
    for (i, v) in doc.vms.iter().enumerate() {
        if !vm_ids.insert(v.id) {
            return Err(IoError::DuplicateId {
                document: "topology",
                kind: "vm",
                id: v.id.to_string(),
            });
        }
        if let Some(dev) = v.device_id {
            if !topology.contains(DeviceId(dev)) {
                return Err(IoError::schema(
                    "topology",
                    format!("vms[{i}].device_id"),
                    format!("unknown device {dev}"),
                ));
            }
        }
        if let Some(host) = v.host_id {
            let Some(dev) = v.device_id else {
                return Err(IoError::schema("topology", format!("vms[{i}].host_id"), "host_id requires device_id"));
            };
            if !hosts_of[&dev].contains(&host) {
                return Err(IoError::schema(
                    "topology",
                    format!("vms[{i}].host_id"),
                    format!("device {dev} has no host {host}"),
                ));
            }
        }
        vms.push(VmSpec {
            id: VmId(v.id),
            mips: v.mips.0,
            pes: v.pes,
            ram: v.ram.0,
            bandwidth: v.bw.0,
            image_size: v.size.0,
            host_binding: v.host_id.map(HostId),
            device: v.device_id.map(DeviceId),
            scheduler: v.scheduler,
        });
    }

    let routes = doc
        .routes
        .iter()
        .map(|r| RouteEntry {
            source: DeviceId(r.src),
            destination: DeviceId(r.dst),
            next_hop: DeviceId(r.next_hop),
        })
        .collect();

    Ok((
        ParsedTopology {
            topology,
            devices,
            vms,
            routes,
        },
        warnings,
    ))
}

/// Writes every link from both endpoints with explicit attributes.
pub fn serialize_topology(t: &ParsedTopology) -> String {
    let fog_devices = t
        .devices
        .iter()
        .map(|d| DeviceDoc {
            id: d.id.0,
            neighbors: t
                .topology
                .neighbors(d.id)
                .into_iter()
                .map(|n| {
                    let link = t.topology.link(d.id, n).expect("neighbors share a link");
                    NeighborDoc::Link(LinkDoc {
                        id: n.0,
                        bandwidth_mbps: Some(NonNeg(link.bandwidth)),
                        latency_s: Some(NonNeg(link.latency)),
                    })
                })
                .collect(),
            hosts: d
                .hosts
                .iter()
                .map(|h| HostDoc {
                    id: h.id.0,
                    ram: NonNeg(h.ram),
                    bw: NonNeg(h.bandwidth),
                    storage: NonNeg(h.storage),
                    pes: (0..h.pes).map(|_| PeDoc { mips: NonNeg(h.mips_per_pe) }).collect(),
                })
                .collect(),
        })
        .collect();
    let vms = t
        .vms
        .iter()
        .map(|v| VmDoc {
            id: v.id.0,
            mips: NonNeg(v.mips),
            pes: v.pes,
            ram: NonNeg(v.ram),
            bw: NonNeg(v.bandwidth),
            size: NonNeg(v.image_size),
            device_id: v.device.map(|d| d.0),
            host_id: v.host_binding.map(|h| h.0),
            scheduler: v.scheduler,
        })
        .collect();
    let routes = t
        .routes
        .iter()
        .map(|r| RouteDoc {
            src: r.source.0,
            dst: r.destination.0,
            next_hop: r.next_hop.0,
        })
        .collect();
    let doc = Document {
        fog_devices,
        vms,
        routes,
    };
    serde_json::to_string_pretty(&doc).expect("topology documents always serialize")
}
