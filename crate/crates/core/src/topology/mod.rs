// SPDX-License-Identifier: Apache-2.0

//! Network graph: typed nodes, full-duplex links, Ethernet segments and the
//! logical (VXLAN) networks that ride on top of them.

mod preset;
mod tree;

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::time::SimTime;
use crate::{Error, Result};

pub use preset::{fig6, Fig6Options, FIG6_ESI, FIG6_EVI};
pub use tree::{enumerate_trees, tree_weight, LinkStats, MulticastTree, TreeId, CONGESTED_LINK_WEIGHT};

/// Index of a node inside a [`Topology`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Index of a directed link inside a [`Topology`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u32);

impl LinkId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Pe,
    Spine,
    Tor,
    Host,
    Core,
}

impl Role {
    /// Switches that may carry multicast trees through them.
    fn is_fabric(self) -> bool {
        matches!(self, Role::Spine | Role::Tor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub role: Role,
    /// Rank among the nodes of the same role, ascending by name.
    pub ordinal: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub bandwidth_bps: u64,
    pub prop_delay: SimTime,
    pub queue_capacity: u32,
    /// Never used by tree construction or unicast routing.
    pub permanently_congested: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthernetSegment {
    pub esi: String,
    /// Attached PEs, sorted by ordinal.
    pub pes: Vec<NodeId>,
}

/// A VXLAN network. The VNI doubles as the Ethernet Tag used by the election.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalNetwork {
    pub vni: u32,
    /// Sorted, deduplicated.
    pub participating_tors: Vec<NodeId>,
    pub esi: String,
    pub evi: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub name: String,
    pub role: Role,
}

/// One directed link; the reverse direction must be listed separately.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    pub bandwidth_bps: u64,
    pub prop_delay: SimTime,
    pub queue_capacity: u32,
    pub permanently_congested: bool,
}

impl LinkSpec {
    pub fn new(from: &str, to: &str, bandwidth_bps: u64, prop_delay: SimTime, queue_capacity: u32) -> Self {
        LinkSpec {
            from: from.to_string(),
            to: to.to_string(),
            bandwidth_bps,
            prop_delay,
            queue_capacity,
            permanently_congested: false,
        }
    }

    pub fn reversed(&self) -> Self {
        LinkSpec {
            from: self.to.clone(),
            to: self.from.clone(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSpec {
    pub esi: String,
    pub pes: Vec<String>,
}

/// Topology section of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    Preset(String),
    Explicit {
        nodes: Vec<NodeSpec>,
        links: Vec<LinkSpec>,
        /// When empty, a single segment `ES-1` spans every PE.
        segments: Vec<SegmentSpec>,
    },
}

/// Validated, immutable network graph.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<Node>,
    links: Vec<Link>,
    out_links: Vec<Vec<LinkId>>,
    reverse: Vec<LinkId>,
    by_name: BTreeMap<String, NodeId>,
    segments: Vec<EthernetSegment>,
}

/// Builds a topology from a preset name or an explicit node/link list.
pub fn build_topology(spec: &TopologySpec) -> Result<Topology> {
    match spec {
        TopologySpec::Preset(name) => match name.as_str() {
            "fig6" => fig6(&Fig6Options::default()),
            other => Err(Error::UnknownTopologyPreset(other.to_string())),
        },
        TopologySpec::Explicit { nodes, links, segments } => Topology::new(nodes, links, segments),
    }
}

impl Topology {
    pub fn new(nodes: &[NodeSpec], links: &[LinkSpec], segments: &[SegmentSpec]) -> Result<Topology> {
        let mut by_name = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if by_name.insert(n.name.clone(), NodeId(i as u32)).is_some() {
                return Err(Error::DuplicateNode(n.name.clone()));
            }
        }

        // Ordinals: rank within the role by ascending name. `by_name` iterates
        // in lexicographic order already.
        let mut ordinals = vec![0u32; nodes.len()];
        let mut per_role: BTreeMap<Role, u32> = BTreeMap::new();
        for id in by_name.values() {
            let counter = per_role.entry(nodes[id.index()].role).or_insert(0);
            ordinals[id.index()] = *counter;
            *counter += 1;
        }
        let nodes: Vec<Node> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| Node {
                id: NodeId(i as u32),
                name: n.name.clone(),
                role: n.role,
                ordinal: ordinals[i],
            })
            .collect();

        let lookup = |name: &str, l: &LinkSpec| {
            by_name.get(name).copied().ok_or_else(|| Error::DanglingLink {
                from: l.from.clone(),
                to: l.to.clone(),
                missing: name.to_string(),
            })
        };

        let mut built = Vec::with_capacity(links.len());
        let mut pair_index: BTreeMap<(NodeId, NodeId), LinkId> = BTreeMap::new();
        for (i, l) in links.iter().enumerate() {
            let from = lookup(&l.from, l)?;
            let to = lookup(&l.to, l)?;
            let invalid = |reason| Error::InvalidLink {
                from: l.from.clone(),
                to: l.to.clone(),
                reason,
            };
            if from == to {
                return Err(invalid("self loop"));
            }
            if l.bandwidth_bps == 0 {
                return Err(invalid("bandwidth must be positive"));
            }
            if l.queue_capacity == 0 {
                return Err(invalid("queue capacity must be at least one packet"));
            }
            let id = LinkId(i as u32);
            if pair_index.insert((from, to), id).is_some() {
                return Err(invalid("parallel links are not supported"));
            }
            built.push(Link {
                id,
                from,
                to,
                bandwidth_bps: l.bandwidth_bps,
                prop_delay: l.prop_delay,
                queue_capacity: l.queue_capacity,
                permanently_congested: l.permanently_congested,
            });
        }

        let mut reverse = Vec::with_capacity(built.len());
        for l in &built {
            match pair_index.get(&(l.to, l.from)) {
                Some(r) => reverse.push(*r),
                None => {
                    return Err(Error::MissingReverseLink {
                        from: nodes[l.from.index()].name.clone(),
                        to: nodes[l.to.index()].name.clone(),
                    })
                }
            }
        }

        let mut out_links = vec![Vec::new(); nodes.len()];
        for l in &built {
            out_links[l.from.index()].push(l.id);
        }

        let mut topo = Topology {
            nodes,
            links: built,
            out_links,
            reverse,
            by_name,
            segments: Vec::new(),
        };

        if segments.is_empty() {
            let pes = topo.nodes_with_role(Role::Pe);
            if !pes.is_empty() {
                topo.segments.push(EthernetSegment {
                    esi: "ES-1".to_string(),
                    pes,
                });
            }
        } else {
            for s in segments {
                let mut pes = Vec::with_capacity(s.pes.len());
                for name in &s.pes {
                    let id = topo.node_id(name)?;
                    if topo.node(id).role != Role::Pe {
                        return Err(Error::UnknownPe(name.clone()));
                    }
                    pes.push(id);
                }
                topo.sort_by_ordinal(&mut pes);
                pes.dedup();
                topo.segments.push(EthernetSegment {
                    esi: s.esi.clone(),
                    pes,
                });
            }
        }
        Ok(topo)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.index()]
    }

    pub fn try_link(&self, id: LinkId) -> Result<&Link> {
        self.links.get(id.index()).ok_or(Error::UnknownLink(id))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.index()].name
    }

    pub fn node_id(&self, name: &str) -> Result<NodeId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        &self.out_links[node.index()]
    }

    pub fn reverse(&self, link: LinkId) -> LinkId {
        self.reverse[link.index()]
    }

    /// The directed link `from -> to`, if any.
    pub fn link_between(&self, from: NodeId, to: NodeId) -> Option<LinkId> {
        self.out_links(from).iter().copied().find(|l| self.link(*l).to == to)
    }

    pub fn segments(&self) -> &[EthernetSegment] {
        &self.segments
    }

    pub fn segment(&self, esi: &str) -> Option<&EthernetSegment> {
        self.segments.iter().find(|s| s.esi == esi)
    }

    /// Nodes of one role, sorted by ordinal.
    pub fn nodes_with_role(&self, role: Role) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.nodes.iter().filter(|n| n.role == role).map(|n| n.id).collect();
        self.sort_by_ordinal(&mut v);
        v
    }

    pub fn sort_by_ordinal(&self, ids: &mut [NodeId]) {
        ids.sort_by_key(|id| (self.node(*id).role, self.node(*id).ordinal));
    }

    /// Hosts directly attached to `switch`.
    pub fn attached_hosts(&self, switch: NodeId) -> impl Iterator<Item = (LinkId, NodeId)> + '_ {
        self.out_links(switch).iter().filter_map(move |l| {
            let to = self.link(*l).to;
            (self.node(to).role == Role::Host).then_some((*l, to))
        })
    }

    /// The route reflector: the first core node by ordinal, if any.
    pub fn route_reflector(&self) -> Option<NodeId> {
        self.nodes_with_role(Role::Core).first().copied()
    }

    /// Resolves and validates a logical network against this topology.
    pub fn logical_network(&self, vni: u32, tors: &[String], esi: &str, evi: &str) -> Result<LogicalNetwork> {
        let invalid = |reason: &str| Error::InvalidNetwork {
            vni,
            reason: reason.to_string(),
        };
        if vni == 0 {
            return Err(invalid("vni must be positive"));
        }
        if tors.is_empty() {
            return Err(invalid("no participating TORs"));
        }
        if esi.is_empty() || evi.is_empty() {
            return Err(invalid("esi and evi must be non-empty"));
        }
        if self.segment(esi).is_none() {
            return Err(invalid("unknown ethernet segment"));
        }
        let mut ids = Vec::with_capacity(tors.len());
        for t in tors {
            let id = self.node_id(t)?;
            if self.node(id).role != Role::Tor {
                return Err(Error::InvalidNetwork {
                    vni,
                    reason: alloc::format!("`{t}` is not a TOR"),
                });
            }
            ids.push(id);
        }
        ids.sort();
        ids.dedup();
        Ok(LogicalNetwork {
            vni,
            participating_tors: ids,
            esi: esi.to_string(),
            evi: evi.to_string(),
        })
    }

    /// Next-hop table towards `dst` over hop-count shortest paths. Hosts other
    /// than `dst` are never transit, and permanently-congested links are
    /// skipped. Ties go to the lowest link id.
    pub fn next_hops_to(&self, dst: NodeId) -> Vec<Option<LinkId>> {
        let n = self.nodes.len();
        let mut dist = vec![u32::MAX; n];
        dist[dst.index()] = 0;
        let mut queue = VecDeque::from([dst]);
        while let Some(v) = queue.pop_front() {
            if v != dst && self.node(v).role == Role::Host {
                continue;
            }
            // Walk incoming links u -> v via the reverse of v's out-links.
            for &out in self.out_links(v) {
                let incoming = self.link(self.reverse(out));
                if incoming.permanently_congested {
                    continue;
                }
                let u = incoming.from;
                if dist[u.index()] == u32::MAX {
                    dist[u.index()] = dist[v.index()] + 1;
                    queue.push_back(u);
                }
            }
        }
        let mut next = vec![None; n];
        for u in 0..n {
            if dist[u] == u32::MAX || dist[u] == 0 {
                continue;
            }
            next[u] = self.out_links[u]
                .iter()
                .copied()
                .filter(|l| {
                    let link = self.link(*l);
                    let v = link.to;
                    !link.permanently_congested
                        && dist[v.index()] + 1 == dist[u]
                        && (v == dst || self.node(v).role != Role::Host)
                })
                .min();
        }
        next
    }
}
