// SPDX-License-Identifier: Apache-2.0

//! Post-run checks over a [`SimulationReport`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::election::{Forwarding, HandshakePhase, Vni};
use crate::engine::{Algorithm, ForwardingChange, SimulationReport};
use crate::topology::{LogicalNetwork, MulticastTree, NodeId, Role, Topology};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub check: &'static str,
    pub detail: String,
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: {}", self.check, self.detail)
    }
}

fn violation(check: &'static str, detail: String) -> Violation {
    Violation { check, detail }
}

/// True if a BUM copy that visited `path` (source first, sink last) went
/// from the tree's PE along the tree to a leaf TOR and then to the sink.
pub fn stamp_path_matches(topo: &Topology, tree: &MulticastTree, path: &[NodeId]) -> bool {
    let Some(start) = path.iter().position(|n| *n == tree.pe) else {
        return false;
    };
    let tail = &path[start..];
    let [.., tor, sink] = tail else { return false };
    if topo.node(*sink).role != Role::Host || !tree.leaves.contains(tor) || topo.link_between(*tor, *sink).is_none() {
        return false;
    }
    tree.path_to(topo, *tor)
        .is_some_and(|p| p.as_slice() == &tail[..tail.len() - 1])
}

/// Per stream: every offered packet is delivered, dropped, blocked at a PE
/// or still in flight.
pub fn check_conservation(report: &SimulationReport) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, s) in report.streams.iter().enumerate() {
        let a = &s.account;
        let accounted = a.received_unique + a.dropped + a.blocked + a.in_flight;
        if a.offered != accounted {
            out.push(violation(
                "conservation",
                format!(
                    "stream {i} ({} -> {}): offered {} != unique {} + dropped {} + blocked {} + in flight {}",
                    s.src, s.dst, a.offered, a.received_unique, a.dropped, a.blocked, a.in_flight
                ),
            ));
        }
        let c = &s.copies;
        if c.created < c.delivered + c.absorbed + c.dropped + c.blocked {
            out.push(violation(
                "conservation",
                format!("stream {i}: more copies ended than were created"),
            ));
        }
        if a.received_total != a.received_unique + a.duplicates {
            out.push(violation(
                "conservation",
                format!("stream {i}: duplicates do not add up"),
            ));
        }
    }
    out
}

/// Deliveries of one stream over one path arrive in sequence order.
pub fn check_fifo(report: &SimulationReport) -> Vec<Violation> {
    report
        .streams
        .iter()
        .enumerate()
        .filter(|(_, s)| s.out_of_order > 0)
        .map(|(i, s)| {
            violation(
                "fifo",
                format!("stream {i}: {} deliveries out of order", s.out_of_order),
            )
        })
        .collect()
}

/// No link carried more than its bandwidth in any stats interval, give or
/// take one packet of `max_packet_bytes`.
pub fn check_throughput(topo: &Topology, report: &SimulationReport, max_packet_bytes: u32) -> Vec<Violation> {
    let secs = report.stats_interval.as_secs_f64();
    let mut out = Vec::new();
    for l in topo.links() {
        let cap_bits = l.bandwidth_bps as f64 * secs + max_packet_bytes as f64 * 8.0;
        for (k, b) in report.link_bytes[l.id.index()].iter().enumerate() {
            if *b as f64 * 8.0 > cap_bits {
                out.push(violation(
                    "throughput",
                    format!(
                        "{} -> {} interval {k}: {b} bytes exceeds capacity",
                        topo.name(l.from),
                        topo.name(l.to)
                    ),
                ));
            }
        }
    }
    out
}

/// Replays the forwarding log in execution order and returns, per VNI, the
/// largest number of PEs forwarding at once.
pub fn max_simultaneous_forwarders(log: &[ForwardingChange]) -> BTreeMap<Vni, usize> {
    let mut open: BTreeMap<Vni, BTreeSet<NodeId>> = BTreeMap::new();
    let mut max: BTreeMap<Vni, usize> = BTreeMap::new();
    for c in log {
        let set = open.entry(c.vni).or_default();
        match c.state {
            Forwarding::Unblocked => set.insert(c.pe),
            Forwarding::Blocked => set.remove(&c.pe),
        };
        let m = max.entry(c.vni).or_insert(0);
        *m = (*m).max(set.len());
    }
    max
}

/// Never two PEs forwarding the same VNI, and every completed handshake
/// blocked the old DF no later than the new one started.
pub fn check_handshake_exclusivity(report: &SimulationReport) -> Vec<Violation> {
    let mut out: Vec<Violation> = max_simultaneous_forwarders(&report.forwarding_log)
        .into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|(vni, n)| {
            violation(
                "handshake_exclusivity",
                format!("vni {vni}: {n} PEs forwarding at once"),
            )
        })
        .collect();
    for s in &report.sessions {
        if s.phase != HandshakePhase::Complete {
            continue;
        }
        if let (Some(b), Some(c)) = (s.old_blocked_at, s.completed_at) {
            if b > c {
                out.push(violation(
                    "handshake_exclusivity",
                    format!("vni {}: new DF unblocked at {c} before old DF blocked at {b}", s.vni),
                ));
            }
        }
    }
    out
}

pub fn check_no_duplicates(report: &SimulationReport) -> Vec<Violation> {
    report
        .bum_streams()
        .filter(|s| s.account.duplicates > 0)
        .map(|s| {
            violation(
                "zero_duplicates",
                format!("vni {:?}: {} duplicates", s.vni, s.account.duplicates),
            )
        })
        .collect()
}

pub fn check_stamp_paths(report: &SimulationReport) -> Vec<Violation> {
    if report.path_mismatches == 0 {
        return Vec::new();
    }
    alloc::vec![violation(
        "stamp_path",
        format!(
            "{} of {} BUM deliveries strayed from their tree",
            report.path_mismatches, report.path_checks
        ),
    )]
}

pub fn check_trees(topo: &Topology, net: &LogicalNetwork, trees: &[MulticastTree]) -> Vec<Violation> {
    trees
        .iter()
        .filter_map(|t| t.validate(topo, net).err())
        .map(|e| violation("tree_validity", e))
        .collect()
}

/// Runs every check that applies to `algorithm`.
pub fn check_run(
    topo: &Topology,
    algorithm: Algorithm,
    report: &SimulationReport,
    max_packet_bytes: u32,
) -> Vec<Violation> {
    let mut out = check_conservation(report);
    out.extend(check_fifo(report));
    out.extend(check_throughput(topo, report, max_packet_bytes));
    out.extend(check_stamp_paths(report));
    match algorithm {
        Algorithm::Handshake => {
            out.extend(check_handshake_exclusivity(report));
            out.extend(check_no_duplicates(report));
        }
        Algorithm::Sdn => {
            out.extend(check_no_duplicates(report));
            out.extend(
                max_simultaneous_forwarders(&report.forwarding_log)
                    .into_iter()
                    .filter(|(_, n)| *n > 1)
                    .map(|(vni, n)| violation("sdn_exclusivity", format!("vni {vni}: {n} PEs forwarding at once"))),
            );
        }
        Algorithm::ServiceCarving => {}
    }
    out
}
