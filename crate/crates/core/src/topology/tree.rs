// SPDX-License-Identifier: Apache-2.0

//! Candidate BUM delivery trees and their link-utilization weight.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::{LinkId, LogicalNetwork, NodeId, Role, Topology};
use crate::time::SimTime;
use crate::{Error, Result};

/// Weight charged for a permanently-congested link. Larger than any sum of
/// utilizations a real tree can reach.
pub const CONGESTED_LINK_WEIGHT: f64 = 1.0e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TreeId(pub u32);

impl fmt::Display for TreeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

/// A BUM delivery tree rooted at one PE, passing through a spine RP and
/// reaching every participating TOR. Links are directed away from the PE.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticastTree {
    pub id: TreeId,
    pub rp: NodeId,
    pub pe: NodeId,
    pub vni: u32,
    /// Sorted by id.
    pub links: Vec<LinkId>,
    pub leaves: Vec<NodeId>,
    children: BTreeMap<NodeId, Vec<LinkId>>,
}

impl MulticastTree {
    pub fn new(
        topo: &Topology,
        id: TreeId,
        rp: NodeId,
        pe: NodeId,
        vni: u32,
        leaves: Vec<NodeId>,
        mut links: Vec<LinkId>,
    ) -> Self {
        links.sort();
        links.dedup();
        let mut children: BTreeMap<NodeId, Vec<LinkId>> = BTreeMap::new();
        for l in &links {
            children.entry(topo.link(*l).from).or_default().push(*l);
        }
        MulticastTree {
            id,
            rp,
            pe,
            vni,
            links,
            leaves,
            children,
        }
    }

    /// Tree links leaving `node`.
    pub fn children(&self, node: NodeId) -> &[LinkId] {
        self.children.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn nodes(&self, topo: &Topology) -> BTreeSet<NodeId> {
        let mut set = BTreeSet::from([self.pe]);
        for l in &self.links {
            set.insert(topo.link(*l).to);
        }
        set
    }

    /// Node sequence from the PE down to `target`.
    pub fn path_to(&self, topo: &Topology, target: NodeId) -> Option<Vec<NodeId>> {
        let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        for l in &self.links {
            let link = topo.link(*l);
            parent.insert(link.to, link.from);
        }
        let mut path = vec![target];
        let mut at = target;
        while at != self.pe {
            at = *parent.get(&at)?;
            if path.len() > self.links.len() {
                return None;
            }
            path.push(at);
        }
        path.reverse();
        Some(path)
    }

    pub fn label(&self, topo: &Topology) -> String {
        format!("{}/{}", topo.name(self.rp), topo.name(self.pe))
    }

    /// Checks the structural invariants: a directed tree rooted at the PE that
    /// spans the RP and exactly the participating TORs as leaves, with no
    /// other PE on it.
    pub fn validate(&self, topo: &Topology, net: &LogicalNetwork) -> core::result::Result<(), String> {
        if self.leaves != net.participating_tors {
            return Err(format!("{}: leaves differ from the participating TORs", self.id));
        }
        let mut indegree: BTreeMap<NodeId, u32> = BTreeMap::new();
        for l in &self.links {
            let link = topo.try_link(*l).map_err(|e| format!("{e}"))?;
            *indegree.entry(link.to).or_insert(0) += 1;
        }
        if indegree.contains_key(&self.pe) {
            return Err(format!("{}: the PE has an incoming tree link", self.id));
        }
        if indegree.values().any(|d| *d != 1) {
            return Err(format!("{}: a node has more than one parent", self.id));
        }
        // Connected from the PE and acyclic: every link reached exactly once.
        let mut seen = BTreeSet::from([self.pe]);
        let mut queue = VecDeque::from([self.pe]);
        while let Some(n) = queue.pop_front() {
            for l in self.children(n) {
                let to = topo.link(*l).to;
                if !seen.insert(to) {
                    return Err(format!("{}: cycle through {}", self.id, topo.name(to)));
                }
                queue.push_back(to);
            }
        }
        if seen.len() != self.links.len() + 1 {
            return Err(format!("{}: links are not connected to the PE", self.id));
        }
        if !seen.contains(&self.rp) || self.leaves.iter().any(|t| !seen.contains(t)) {
            return Err(format!("{}: RP or a leaf is not spanned", self.id));
        }
        if seen.iter().filter(|n| topo.node(**n).role == Role::Pe).count() != 1 {
            return Err(format!("{}: more than one PE on the tree", self.id));
        }
        if self.links.iter().any(|l| topo.link(*l).permanently_congested) {
            return Err(format!("{}: uses a permanently-congested link", self.id));
        }
        Ok(())
    }
}

/// Enumerates one candidate tree per (spine RP, PE) pair of the network's
/// Ethernet segment, ordered by spine then PE.
///
/// Each tree is the union of hop-count shortest paths from the RP to every
/// participating TOR and to the PE, taken from a single BFS whose parent
/// choice is the lowest link id; the union of BFS-tree paths is itself a
/// tree. Only spines and TORs are transit, and permanently-congested links
/// are never used.
pub fn enumerate_trees(topo: &Topology, net: &LogicalNetwork) -> Result<Vec<MulticastTree>> {
    let segment = topo.segment(&net.esi).ok_or_else(|| Error::InvalidNetwork {
        vni: net.vni,
        reason: format!("unknown ethernet segment `{}`", net.esi),
    })?;
    let spines = topo.nodes_with_role(Role::Spine);
    let mut trees = Vec::new();
    for &rp in &spines {
        let parent = bfs_parents(topo, rp);
        for &pe in &segment.pes {
            let mut edges = BTreeSet::new();
            let reachable = net
                .participating_tors
                .iter()
                .chain(core::iter::once(&pe))
                .all(|&target| collect_path(topo, &parent, rp, target, &mut edges));
            if !reachable {
                continue;
            }
            let links = orient_from(topo, pe, &edges);
            let id = TreeId(trees.len() as u32);
            trees.push(MulticastTree::new(
                topo,
                id,
                rp,
                pe,
                net.vni,
                net.participating_tors.clone(),
                links,
            ));
        }
    }
    if trees.is_empty() {
        return Err(Error::NoCandidateTree { vni: net.vni });
    }
    Ok(trees)
}

fn usable(topo: &Topology, link: LinkId) -> bool {
    let l = topo.link(link);
    let from = topo.node(l.from).role;
    let to = topo.node(l.to).role;
    !l.permanently_congested && from.is_fabric() && (to.is_fabric() || to == Role::Pe)
}

/// For every node reachable from `root`, the link from the previous BFS layer
/// with the lowest id.
fn bfs_parents(topo: &Topology, root: NodeId) -> Vec<Option<LinkId>> {
    let n = topo.nodes().len();
    let mut dist = vec![u32::MAX; n];
    dist[root.index()] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &l in topo.out_links(u) {
            if !usable(topo, l) {
                continue;
            }
            let v = topo.link(l).to;
            if dist[v.index()] == u32::MAX {
                dist[v.index()] = dist[u.index()] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut parent = vec![None; n];
    for l in topo.links() {
        if !usable(topo, l.id) || dist[l.from.index()] == u32::MAX {
            continue;
        }
        let v = l.to.index();
        if dist[l.from.index()] + 1 == dist[v] && parent[v].is_none_or(|p: LinkId| l.id < p) {
            parent[v] = Some(l.id);
        }
    }
    parent
}

fn collect_path(
    topo: &Topology,
    parent: &[Option<LinkId>],
    root: NodeId,
    target: NodeId,
    edges: &mut BTreeSet<LinkId>,
) -> bool {
    let mut at = target;
    while at != root {
        match parent[at.index()] {
            Some(l) => {
                edges.insert(l);
                at = topo.link(l).from;
            }
            None => return false,
        }
    }
    true
}

/// Re-directs an undirected edge set so that every link points away from `root`.
fn orient_from(topo: &Topology, root: NodeId, edges: &BTreeSet<LinkId>) -> Vec<LinkId> {
    let mut adjacency: BTreeMap<NodeId, Vec<LinkId>> = BTreeMap::new();
    for &l in edges {
        let link = topo.link(l);
        adjacency.entry(link.from).or_default().push(l);
        adjacency.entry(link.to).or_default().push(topo.reverse(l));
    }
    let mut out = Vec::with_capacity(edges.len());
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        for &l in adjacency.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            let to = topo.link(l).to;
            if seen.insert(to) {
                out.push(l);
                queue.push_back(to);
            }
        }
    }
    out
}

/// Per-link utilization over one polling interval.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkStats {
    pub interval: SimTime,
    utilization: BTreeMap<LinkId, f64>,
}

impl LinkStats {
    pub fn new(interval: SimTime) -> Self {
        LinkStats {
            interval,
            utilization: BTreeMap::new(),
        }
    }

    /// Utilization = bytes * 8 / (bandwidth * interval) for every link.
    pub fn from_bytes(topo: &Topology, bytes: &[u64], interval: SimTime) -> Self {
        let secs = interval.as_secs_f64();
        let utilization = topo
            .links()
            .iter()
            .map(|l| {
                let b = bytes.get(l.id.index()).copied().unwrap_or(0);
                let u = if secs > 0.0 {
                    (b as f64 * 8.0) / (l.bandwidth_bps as f64 * secs)
                } else {
                    0.0
                };
                (l.id, u)
            })
            .collect();
        LinkStats { interval, utilization }
    }

    pub fn set(&mut self, link: LinkId, utilization: f64) {
        self.utilization.insert(link, utilization);
    }

    pub fn get(&self, link: LinkId) -> Option<f64> {
        self.utilization.get(&link).copied()
    }
}

/// Sum of the utilizations of the tree's links.
pub fn tree_weight(topo: &Topology, tree: &MulticastTree, stats: &LinkStats) -> Result<f64> {
    let mut total = 0.0;
    for &l in &tree.links {
        if topo.try_link(l)?.permanently_congested {
            total += CONGESTED_LINK_WEIGHT;
            continue;
        }
        total += stats.get(l).ok_or(Error::MissingLinkStats(l))?;
    }
    Ok(total)
}
