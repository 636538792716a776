// SPDX-License-Identifier: Apache-2.0

use super::*;
use crate::topology::{fig6, Fig6Options, FIG6_ESI, FIG6_EVI};
use alloc::collections::BinaryHeap;
use alloc::string::ToString;
use core::cmp::Reverse;
use proptest::prelude::*;

fn ids(n: u32) -> Vec<NodeId> {
    (0..n).map(NodeId).collect()
}

#[test]
fn modulo_picks_by_remainder() {
    let c = ids(2);
    assert_eq!(modulo_elect(1000, &c).unwrap(), c[0]);
    assert_eq!(modulo_elect(1001, &c).unwrap(), c[1]);
    assert!(matches!(modulo_elect(5, &[]), Err(Error::EmptyCandidates)));
}

#[test]
fn even_tags_all_land_on_the_first_pe() {
    let c = ids(2);
    let evens: Vec<Vni> = (1..=500).map(|i| 2 * i).collect();
    let h = fairness_histogram(&evens, &c).unwrap();
    assert_eq!(h[&c[0]], 500);
    assert_eq!(h[&c[1]], 0);
    let odds: Vec<Vni> = (0..500).map(|i| 2 * i + 1).collect();
    let h = fairness_histogram(&odds, &c).unwrap();
    assert_eq!(h[&c[0]], 0);
    assert_eq!(h[&c[1]], 500);
}

#[test]
fn consecutive_tags_split_evenly() {
    let tags: Vec<Vni> = (1..=1000).collect();
    let h = fairness_histogram(&tags, &ids(2)).unwrap();
    assert_eq!(h.values().copied().collect::<Vec<_>>(), [500, 500]);

    let tags: Vec<Vni> = (1..=999).collect();
    let c = ids(3);
    let h = fairness_histogram(&tags, &c).unwrap();
    for (k, pe) in c.iter().enumerate() {
        let expected = tags.iter().filter(|t| **t as usize % 3 == k).count() as u64;
        assert_eq!(expected, 333);
        assert_eq!(h[pe], expected);
    }
}

#[derive(Debug)]
enum Ev {
    Deliver(Endpoint, Envelope),
    Timer(NodeId, usize, u64),
}

/// Minimal event loop around the plane.
struct Harness {
    plane: ElectionPlane,
    queue: BinaryHeap<Reverse<(SimTime, u64, usize)>>,
    events: Vec<Option<Ev>>,
    seq: u64,
    now: SimTime,
    fwd: BTreeMap<(NodeId, Vni), Forwarding>,
    log: Vec<(SimTime, NodeId, Vni, Forwarding)>,
    max_unblocked: BTreeMap<Vni, usize>,
}

impl Harness {
    fn new(mode: ElectionMode, params: ElectionParams, seed: u64, vnis: &[Vni]) -> (Harness, Topology) {
        let topo = fig6(&Fig6Options::default()).unwrap();
        let nets: Vec<LogicalNetwork> = vnis
            .iter()
            .map(|v| {
                topo.logical_network(*v, &["TOR-1".to_string(), "TOR-2".to_string()], FIG6_ESI, FIG6_EVI)
                    .unwrap()
            })
            .collect();
        let plane = ElectionPlane::new(&topo, &nets, mode, params, seed);
        let h = Harness {
            plane,
            queue: BinaryHeap::new(),
            events: Vec::new(),
            seq: 0,
            now: SimTime::ZERO,
            fwd: BTreeMap::new(),
            log: Vec::new(),
            max_unblocked: BTreeMap::new(),
        };
        (h, topo)
    }

    fn drain(&mut self) {
        for o in self.plane.take_outputs() {
            match o {
                ElectionOutput::Deliver { at, to, envelope } => self.push(at, Ev::Deliver(to, envelope)),
                ElectionOutput::Timer { at, pe, segment, epoch } => self.push(at, Ev::Timer(pe, segment, epoch)),
                ElectionOutput::SetForwarding { pe, vni, state } => {
                    self.fwd.insert((pe, vni), state);
                    self.log.push((self.now, pe, vni, state));
                    let n = self
                        .fwd
                        .iter()
                        .filter(|((_, v), s)| *v == vni && **s == Forwarding::Unblocked)
                        .count();
                    let m = self.max_unblocked.entry(vni).or_insert(0);
                    *m = (*m).max(n);
                }
            }
        }
    }

    fn push(&mut self, at: SimTime, ev: Ev) {
        assert!(at >= self.now);
        self.events.push(Some(ev));
        self.queue.push(Reverse((at, self.seq, self.events.len() - 1)));
        self.seq += 1;
    }

    fn run_until(&mut self, until: SimTime) {
        self.drain();
        while let Some(Reverse((at, _, idx))) = self.queue.peek().copied() {
            if at > until {
                break;
            }
            self.queue.pop();
            self.now = at;
            match self.events[idx].take().unwrap() {
                Ev::Deliver(to, env) => self.plane.deliver(to, env, at),
                Ev::Timer(pe, seg, epoch) => self.plane.on_timer_expired(pe, seg, epoch, at),
            }
            self.drain();
        }
        self.now = until;
    }

    fn state(&self, pe: NodeId, vni: Vni) -> Forwarding {
        self.fwd.get(&(pe, vni)).copied().unwrap_or(Forwarding::Blocked)
    }

    fn change_time(&self, pe: NodeId, vni: Vni, state: Forwarding) -> Option<SimTime> {
        self.log
            .iter()
            .find(|(_, p, v, s)| *p == pe && *v == vni && *s == state)
            .map(|e| e.0)
    }
}

fn params(d_ms: u64) -> ElectionParams {
    ElectionParams {
        timer: SimTime::from_millis(10),
        jitter_max: SimTime::from_millis(5),
        inter_pe_delay: SimTime::from_millis(d_ms),
        late_route: LateRoutePolicy::Timer,
    }
}

#[test]
fn service_carving_timeline_matches_timer_arithmetic() {
    let d = 10;
    let (mut h, topo) = Harness::new(ElectionMode::ServiceCarving, params(d), 7, &[1001]);
    let pe1 = topo.node_id("PE-1").unwrap();
    let pe2 = topo.node_id("PE-2").unwrap();
    h.plane.converge(&[pe1]);
    h.run_until(SimTime::from_millis(10));
    assert_eq!(h.state(pe1, 1001), Forwarding::Unblocked);

    let t0 = SimTime::from_millis(10);
    h.plane.boot(pe2, t0);
    h.run_until(SimTime::from_secs(1));

    let j1 = h.plane.jitter(pe1).unwrap();
    let j2 = h.plane.jitter(pe2).unwrap();
    assert!(j1 <= SimTime::from_millis(5) && j2 <= SimTime::from_millis(5));
    let t = SimTime::from_millis(10);
    assert_eq!(h.change_time(pe2, 1001, Forwarding::Unblocked), Some(t0 + t + j2));
    assert_eq!(
        h.change_time(pe1, 1001, Forwarding::Blocked),
        Some(t0 + SimTime::from_millis(d) + t + j1)
    );
    assert_eq!(h.state(pe1, 1001), Forwarding::Blocked);
    assert_eq!(h.state(pe2, 1001), Forwarding::Unblocked);
    assert_eq!(h.max_unblocked[&1001], 2);

    let df = h.plane.df_state(pe1, FIG6_ESI).unwrap();
    assert_eq!(df.candidates, [pe1, pe2]);
    assert_eq!(df.elected[&1001], pe2);
}

#[test]
fn jitter_is_reproducible_per_seed() {
    let (a, topo) = Harness::new(ElectionMode::ServiceCarving, params(0), 42, &[1001]);
    let (b, _) = Harness::new(ElectionMode::ServiceCarving, params(0), 42, &[1001]);
    for pe in topo.nodes_with_role(crate::topology::Role::Pe) {
        assert_eq!(a.plane.jitter(pe), b.plane.jitter(pe));
    }
}

#[test]
fn handshake_blocks_old_df_before_new_one_forwards() {
    for d in [0u64, 5, 10, 15, 20] {
        let (mut h, topo) = Harness::new(ElectionMode::Handshake, params(d), 3, &[1000, 1001]);
        let pe1 = topo.node_id("PE-1").unwrap();
        let pe2 = topo.node_id("PE-2").unwrap();
        h.plane.converge(&[pe1]);
        let t0 = SimTime::from_millis(10);
        h.run_until(t0);
        h.plane.boot(pe2, t0);
        h.run_until(SimTime::from_secs(1));

        let dd = SimTime::from_millis(d);
        assert_eq!(h.max_unblocked[&1001], 1, "d = {d}");
        assert_eq!(h.change_time(pe1, 1001, Forwarding::Blocked), Some(t0 + dd));
        assert_eq!(h.change_time(pe2, 1001, Forwarding::Unblocked), Some(t0 + dd + dd));
        // PE-1 keeps the even VNI and PE-2 never touches it.
        assert_eq!(h.state(pe1, 1000), Forwarding::Unblocked);
        assert_eq!(h.change_time(pe2, 1000, Forwarding::Unblocked), None);

        let s: Vec<&HandshakeSession> = h.plane.sessions().iter().filter(|s| s.vni == 1001).collect();
        assert_eq!(s.len(), 1, "d = {d} {:?}", s);
        assert_eq!(s[0].phase, HandshakePhase::Complete);
        assert!(s[0].old_blocked_at.unwrap() <= s[0].completed_at.unwrap());
    }
}

#[test]
fn explicit_transfer_leaves_a_gap_of_one_delay() {
    let (mut h, topo) = Harness::new(ElectionMode::Handshake, params(10), 3, &[1000]);
    let pe1 = topo.node_id("PE-1").unwrap();
    let pe2 = topo.node_id("PE-2").unwrap();
    h.plane.converge(&[pe1, pe2]);
    h.run_until(SimTime::from_millis(1));
    assert_eq!(h.state(pe1, 1000), Forwarding::Unblocked);

    let now = SimTime::from_millis(1);
    h.plane.handshake_transfer(pe1, pe2, 1000, now).unwrap();
    h.run_until(SimTime::from_millis(100));
    assert_eq!(
        h.change_time(pe1, 1000, Forwarding::Blocked),
        Some(SimTime::from_millis(11))
    );
    assert_eq!(
        h.change_time(pe2, 1000, Forwarding::Unblocked),
        Some(SimTime::from_millis(21))
    );
    assert_eq!(h.max_unblocked[&1000], 1);
    assert!(h.plane.handshake_transfer(pe1, pe2, 4242, now).is_err());
}

#[test]
fn stale_and_duplicate_inputs_change_nothing() {
    let (mut h, topo) = Harness::new(ElectionMode::ServiceCarving, params(0), 1, &[1001]);
    let pe1 = topo.node_id("PE-1").unwrap();
    let pe2 = topo.node_id("PE-2").unwrap();
    h.plane.converge(&[pe1, pe2]);
    h.run_until(SimTime::from_millis(1));
    let before = h.log.len();

    h.plane.on_timer_expired(pe1, 0, 999, SimTime::from_millis(1));
    let route = EsRoute {
        esi: FIG6_ESI.to_string(),
        origin_pe: pe2,
        sent_at: SimTime::ZERO,
    };
    h.plane.on_es_route_received(pe1, &route, SimTime::from_millis(1));
    assert!(h.plane.take_outputs().is_empty());
    assert_eq!(h.log.len(), before);
    assert_eq!(h.plane.df_state(pe1, FIG6_ESI).unwrap().candidates, [pe1, pe2]);
}

#[test]
fn late_route_policy_controls_reelection_time() {
    for (policy, expect_timer) in [(LateRoutePolicy::Timer, true), (LateRoutePolicy::Immediate, false)] {
        let mut p = params(0);
        p.late_route = policy;
        p.jitter_max = SimTime::ZERO;
        let (mut h, topo) = Harness::new(ElectionMode::ServiceCarving, p, 1, &[1001]);
        let pe1 = topo.node_id("PE-1").unwrap();
        let pe2 = topo.node_id("PE-2").unwrap();
        h.plane.converge(&[pe1]);
        h.run_until(SimTime::from_millis(1));

        let route = EsRoute {
            esi: FIG6_ESI.to_string(),
            origin_pe: pe2,
            sent_at: SimTime::ZERO,
        };
        h.plane.on_es_route_received(pe1, &route, SimTime::from_millis(1));
        let df = h.plane.df_state(pe1, FIG6_ESI).unwrap();
        assert_eq!(df.candidates.len(), 2);
        if expect_timer {
            assert_eq!(df.timer_deadline, Some(SimTime::from_millis(11)));
            assert_eq!(df.forwarding(1001), Forwarding::Unblocked);
        } else {
            assert_eq!(df.timer_deadline, None);
            assert_eq!(df.forwarding(1001), Forwarding::Blocked);
        }
    }
}

proptest! {
    /// PEs boot in arbitrary order and timing. Once everything settles there
    /// is exactly one forwarder per VNI, the modulo winner; in handshake mode
    /// there is never more than one at any instant.
    #[test]
    fn churn_converges_to_the_modulo_winner(
        boots in proptest::collection::vec(0u64..30, 2),
        d in 0u64..25,
        seed in any::<u64>(),
        handshake in any::<bool>(),
    ) {
        let mode = if handshake { ElectionMode::Handshake } else { ElectionMode::ServiceCarving };
        let vnis = [1000, 1001, 1002, 1003];
        let (mut h, topo) = Harness::new(mode, params(d), seed, &vnis);
        let pes = topo.nodes_with_role(crate::topology::Role::Pe);
        let mut order: Vec<(u64, NodeId)> = pes.iter().zip(boots.iter()).map(|(p, t)| (*t, *p)).collect();
        order.sort();
        for (t, pe) in order {
            h.run_until(SimTime::from_millis(t));
            h.plane.boot(pe, SimTime::from_millis(t));
        }
        h.run_until(SimTime::from_secs(2));
        for vni in vnis {
            let winner = modulo_elect(vni, &pes).unwrap();
            for pe in &pes {
                let want = if *pe == winner { Forwarding::Unblocked } else { Forwarding::Blocked };
                prop_assert_eq!(h.state(*pe, vni), want, "vni {} pe {:?}", vni, pe);
            }
            if handshake {
                prop_assert!(h.max_unblocked[&vni] <= 1);
            }
        }
    }
}
