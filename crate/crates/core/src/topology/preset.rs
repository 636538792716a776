// SPDX-License-Identifier: Apache-2.0

//! The two-PE, two-spine, two-TOR evaluation topology.
//!
//! ```text
//!   BUM-Src   Source-1
//!        \    /
//!          RR
//!        /    \
//!     PE-1    PE-2
//!      |   \/   |        PE-1 - CE-2 and PE-2 - CE-1 are the multi-homing
//!      |   /\   |        cross links, marked permanently congested
//!     CE-1    CE-2
//!      |  \  /  |
//!      |   \/   |
//!      |   /\   |
//!     TOR-1   TOR-2
//!       |       |
//!     Sink-1  Source-2
//! ```

use alloc::string::ToString;
use alloc::vec::Vec;

use super::{LinkSpec, NodeSpec, Role, SegmentSpec, Topology};
use crate::time::SimTime;
use crate::Result;

pub const FIG6_ESI: &str = "ESI-1";
pub const FIG6_EVI: &str = "EVI-1";

#[derive(Debug, Clone)]
pub struct Fig6Options {
    /// Switch-to-switch links (fabric and core).
    pub fabric_bps: u64,
    /// Host access links.
    pub host_bps: u64,
    pub delay: SimTime,
    pub queue_capacity: u32,
}

impl Default for Fig6Options {
    fn default() -> Self {
        Fig6Options {
            fabric_bps: 1_000_000_000,
            host_bps: 10_000_000_000,
            delay: SimTime::from_millis(1),
            queue_capacity: 100,
        }
    }
}

pub fn fig6(opts: &Fig6Options) -> Result<Topology> {
    let node = |name: &str, role| NodeSpec {
        name: name.to_string(),
        role,
    };
    let nodes = [
        node("PE-1", Role::Pe),
        node("PE-2", Role::Pe),
        node("CE-1", Role::Spine),
        node("CE-2", Role::Spine),
        node("TOR-1", Role::Tor),
        node("TOR-2", Role::Tor),
        node("RR", Role::Core),
        node("Sink-1", Role::Host),
        node("Source-1", Role::Host),
        node("Source-2", Role::Host),
        node("BUM-Src", Role::Host),
    ];

    // Order matters: link ids break routing ties, so PE-1/CE-1 come first.
    let fabric = [
        ("PE-1", "CE-1", false),
        ("PE-2", "CE-2", false),
        ("PE-1", "CE-2", true),
        ("PE-2", "CE-1", true),
        ("CE-1", "TOR-1", false),
        ("CE-1", "TOR-2", false),
        ("CE-2", "TOR-1", false),
        ("CE-2", "TOR-2", false),
        ("RR", "PE-1", false),
        ("RR", "PE-2", false),
    ];
    let hosts = [
        ("TOR-1", "Sink-1"),
        ("TOR-2", "Source-2"),
        ("RR", "Source-1"),
        ("RR", "BUM-Src"),
    ];

    let mut links = Vec::with_capacity(2 * (fabric.len() + hosts.len()));
    for (a, b, congested) in fabric {
        let mut l = LinkSpec::new(a, b, opts.fabric_bps, opts.delay, opts.queue_capacity);
        l.permanently_congested = congested;
        links.push(l.clone());
        links.push(l.reversed());
    }
    for (a, b) in hosts {
        let l = LinkSpec::new(a, b, opts.host_bps, opts.delay, opts.queue_capacity);
        links.push(l.clone());
        links.push(l.reversed());
    }

    let segments = [SegmentSpec {
        esi: FIG6_ESI.to_string(),
        pes: ["PE-1".to_string(), "PE-2".to_string()].to_vec(),
    }];
    Topology::new(&nodes, &links, &segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig6_has_expected_nodes_and_link_speeds() {
        let topo = fig6(&Fig6Options::default()).unwrap();
        assert_eq!(topo.nodes_with_role(Role::Pe).len(), 2);
        assert_eq!(topo.nodes_with_role(Role::Spine).len(), 2);
        assert_eq!(topo.nodes_with_role(Role::Tor).len(), 2);
        assert_eq!(topo.nodes_with_role(Role::Core).len(), 1);
        assert_eq!(topo.nodes_with_role(Role::Host).len(), 4);
        for l in topo.links() {
            let a = topo.node(l.from).role;
            let b = topo.node(l.to).role;
            assert_eq!(l.prop_delay, SimTime::from_millis(1));
            if a != Role::Host && b != Role::Host {
                assert_eq!(
                    l.bandwidth_bps,
                    1_000_000_000,
                    "{} -> {}",
                    topo.name(l.from),
                    topo.name(l.to)
                );
            }
        }
        let congested: Vec<(&str, &str)> = topo
            .links()
            .iter()
            .filter(|l| l.permanently_congested)
            .map(|l| (topo.name(l.from), topo.name(l.to)))
            .collect();
        assert_eq!(
            congested,
            [("PE-1", "CE-2"), ("CE-2", "PE-1"), ("PE-2", "CE-1"), ("CE-1", "PE-2")]
        );
    }

    #[test]
    fn background_paths_follow_the_red_side() {
        let topo = fig6(&Fig6Options::default()).unwrap();
        let sink = topo.node_id("Sink-1").unwrap();
        let next = topo.next_hops_to(sink);
        let walk = |from: &str| {
            let mut at = topo.node_id(from).unwrap();
            let mut path = alloc::vec![topo.name(at).to_string()];
            while at != sink {
                let l = next[at.index()].unwrap();
                at = topo.link(l).to;
                path.push(topo.name(at).to_string());
            }
            path
        };
        assert_eq!(walk("Source-1"), ["Source-1", "RR", "PE-1", "CE-1", "TOR-1", "Sink-1"]);
        assert_eq!(walk("Source-2"), ["Source-2", "TOR-2", "CE-1", "TOR-1", "Sink-1"]);
    }
}
