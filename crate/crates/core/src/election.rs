// SPDX-License-Identifier: Apache-2.0

//! Distributed EVPN control plane: ES route exchange through a route
//! reflector, per-PE election timers, `V mod N` service carving and the
//! handshake-based DF transfer.
//!
//! The plane is driven by the simulation loop. Every handler appends
//! [`ElectionOutput`]s (messages to deliver later, timers to arm, forwarding
//! changes that take effect now) which the caller drains with
//! [`ElectionPlane::take_outputs`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::time::SimTime;
use crate::topology::{LogicalNetwork, NodeId, Topology};
use crate::{Error, Result};

pub type Vni = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Forwarding {
    Blocked,
    Unblocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElectionMode {
    /// Each PE flips its own block state when its timer fires.
    ServiceCarving,
    /// A new DF unblocks only after every other PE granted the takeover.
    Handshake,
}

/// What a PE does with an ES route that arrives after its timer expired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LateRoutePolicy {
    /// Re-elect one timer period later.
    #[default]
    Timer,
    /// Re-elect on receipt.
    Immediate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectionParams {
    /// Election timer `T`.
    pub timer: SimTime,
    /// Per-PE jitter is drawn uniformly from `[0, jitter_max]`.
    pub jitter_max: SimTime,
    /// End-to-end one-way delay of a control message between two PEs. With
    /// a route reflector each of the two hops takes half of it.
    pub inter_pe_delay: SimTime,
    pub late_route: LateRoutePolicy,
}

impl Default for ElectionParams {
    fn default() -> Self {
        ElectionParams {
            timer: SimTime::from_secs(3),
            jitter_max: SimTime::from_millis(5),
            inter_pe_delay: SimTime::ZERO,
            late_route: LateRoutePolicy::Timer,
        }
    }
}

/// `candidates[tag mod N]`.
pub fn modulo_elect(tag: Vni, candidates: &[NodeId]) -> Result<NodeId> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    Ok(candidates[tag as usize % candidates.len()])
}

/// Number of tags each candidate wins under [`modulo_elect`]. Every candidate
/// appears in the result, possibly with zero.
pub fn fairness_histogram(tags: &[Vni], candidates: &[NodeId]) -> Result<BTreeMap<NodeId, u64>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut hist: BTreeMap<NodeId, u64> = candidates.iter().map(|c| (*c, 0)).collect();
    for &t in tags {
        *hist.entry(modulo_elect(t, candidates)?).or_insert(0) += 1;
    }
    Ok(hist)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EsRoute {
    pub esi: String,
    pub origin_pe: NodeId,
    pub sent_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlMessage {
    EsRoute(EsRoute),
    /// Routes already known to the reflector, sent to a PE whose session
    /// just came up.
    RouteSync {
        esi: String,
        origins: Vec<NodeId>,
    },
    TakeoverRequest {
        esi: String,
        from: NodeId,
        vnis: Vec<Vni>,
        /// Explicit transfer: grant even if the election disagrees.
        forced: bool,
        sent_at: SimTime,
    },
    TakeoverGrant {
        esi: String,
        from: NodeId,
        vni: Vni,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Pe(NodeId),
    /// Every other PE of the segment.
    Peers {
        esi: String,
        except: NodeId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    RouteReflector,
    Pe(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub target: Target,
    pub msg: ControlMessage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ElectionOutput {
    Deliver {
        at: SimTime,
        to: Endpoint,
        envelope: Envelope,
    },
    Timer {
        at: SimTime,
        pe: NodeId,
        segment: usize,
        epoch: u64,
    },
    /// Takes effect at the instant the handler ran.
    SetForwarding { pe: NodeId, vni: Vni, state: Forwarding },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HandshakePhase {
    Requested,
    Granted,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeSession {
    pub old_df: NodeId,
    pub new_df: NodeId,
    pub vni: Vni,
    pub phase: HandshakePhase,
    pub requested_at: SimTime,
    pub granted_at: Option<SimTime>,
    /// When the old DF stopped forwarding, if it was forwarding.
    pub old_blocked_at: Option<SimTime>,
    pub completed_at: Option<SimTime>,
}

/// Election state of one PE for one Ethernet segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DfState {
    pub esi: String,
    /// Sorted by the global ordering key; `N` is its length.
    pub candidates: Vec<NodeId>,
    pub timer_deadline: Option<SimTime>,
    timer_epoch: u64,
    pub elected: BTreeMap<Vni, NodeId>,
    pub forwarding: BTreeMap<Vni, Forwarding>,
    election_pending: bool,
    grants: BTreeMap<Vni, BTreeSet<NodeId>>,
    /// Peers a takeover request is outstanding with.
    asked: BTreeMap<Vni, BTreeSet<NodeId>>,
    forced: BTreeMap<Vni, NodeId>,
}

impl DfState {
    fn new(esi: &str, vnis: &[Vni]) -> Self {
        DfState {
            esi: String::from(esi),
            candidates: Vec::new(),
            timer_deadline: None,
            timer_epoch: 0,
            elected: BTreeMap::new(),
            forwarding: vnis.iter().map(|v| (*v, Forwarding::Blocked)).collect(),
            election_pending: false,
            grants: BTreeMap::new(),
            asked: BTreeMap::new(),
            forced: BTreeMap::new(),
        }
    }

    pub fn forwarding(&self, vni: Vni) -> Forwarding {
        self.forwarding.get(&vni).copied().unwrap_or(Forwarding::Blocked)
    }
}

#[derive(Debug, Clone)]
struct PeState {
    up: bool,
    synced: bool,
    jitter: SimTime,
    segments: BTreeMap<usize, DfState>,
}

#[derive(Debug, Clone)]
struct Segment {
    esi: String,
    pes: Vec<NodeId>,
    vnis: Vec<Vni>,
}

#[derive(Debug, Clone)]
pub struct ElectionPlane {
    mode: ElectionMode,
    params: ElectionParams,
    rr: Option<NodeId>,
    segments: Vec<Segment>,
    /// Sort key per node index (the PE ordinal).
    order: Vec<u32>,
    pes: BTreeMap<NodeId, PeState>,
    rr_routes: BTreeMap<usize, BTreeSet<NodeId>>,
    sessions: Vec<HandshakeSession>,
    out: Vec<ElectionOutput>,
}

impl ElectionPlane {
    /// Creates the plane for every Ethernet segment that carries at least one
    /// of `networks`. Per-PE timer jitter is drawn from `seed`.
    pub fn new(
        topo: &Topology,
        networks: &[LogicalNetwork],
        mode: ElectionMode,
        params: ElectionParams,
        seed: u64,
    ) -> Self {
        let mut segments = Vec::new();
        for seg in topo.segments() {
            let mut vnis: Vec<Vni> = networks.iter().filter(|n| n.esi == seg.esi).map(|n| n.vni).collect();
            vnis.sort();
            vnis.dedup();
            if !vnis.is_empty() {
                segments.push(Segment {
                    esi: seg.esi.clone(),
                    pes: seg.pes.clone(),
                    vnis,
                });
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pes = BTreeMap::new();
        for pe in topo.nodes_with_role(crate::topology::Role::Pe) {
            let jitter = SimTime::from_nanos(rng.gen_range(0..=params.jitter_max.as_nanos()));
            let states = segments
                .iter()
                .enumerate()
                .filter(|(_, s)| s.pes.contains(&pe))
                .map(|(i, s)| (i, DfState::new(&s.esi, &s.vnis)))
                .collect();
            pes.insert(
                pe,
                PeState {
                    up: false,
                    synced: false,
                    jitter,
                    segments: states,
                },
            );
        }

        ElectionPlane {
            mode,
            params,
            rr: topo.route_reflector(),
            segments,
            order: topo.nodes().iter().map(|n| n.ordinal).collect(),
            pes,
            rr_routes: BTreeMap::new(),
            sessions: Vec::new(),
            out: Vec::new(),
        }
    }

    pub fn mode(&self) -> ElectionMode {
        self.mode
    }

    pub fn params(&self) -> &ElectionParams {
        &self.params
    }

    pub fn take_outputs(&mut self) -> Vec<ElectionOutput> {
        core::mem::take(&mut self.out)
    }

    pub fn jitter(&self, pe: NodeId) -> Option<SimTime> {
        self.pes.get(&pe).map(|p| p.jitter)
    }

    pub fn is_up(&self, pe: NodeId) -> bool {
        self.pes.get(&pe).is_some_and(|p| p.up)
    }

    pub fn df_state(&self, pe: NodeId, esi: &str) -> Option<&DfState> {
        let seg = self.segment_index(esi)?;
        self.pes.get(&pe)?.segments.get(&seg)
    }

    pub fn sessions(&self) -> &[HandshakeSession] {
        &self.sessions
    }

    pub fn segment_index(&self, esi: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.esi == esi)
    }

    /// Segments a PE is attached to.
    pub fn segments_of(&self, pe: NodeId) -> Vec<usize> {
        self.pes
            .get(&pe)
            .map(|p| p.segments.keys().copied().collect())
            .unwrap_or_default()
    }

    /// Brings `pes` up as an already-converged group: each knows all the
    /// others, has elected, and blocks or forwards accordingly.
    pub fn converge(&mut self, pes: &[NodeId]) {
        for (seg_idx, seg) in self.segments.iter().enumerate() {
            let mut group: Vec<NodeId> = seg.pes.iter().copied().filter(|p| pes.contains(p)).collect();
            sort_by_key(&self.order, &mut group);
            self.rr_routes.entry(seg_idx).or_default().extend(group.iter().copied());
            for &pe in &group {
                let st = self.pes.get_mut(&pe).expect("segment PE is a PE");
                st.up = true;
                st.synced = true;
                let df = st.segments.get_mut(&seg_idx).expect("attached");
                df.candidates = group.clone();
                for &vni in &seg.vnis {
                    let winner = modulo_elect(vni, &group).expect("group contains pe");
                    df.elected.insert(vni, winner);
                    let state = if winner == pe {
                        Forwarding::Unblocked
                    } else {
                        Forwarding::Blocked
                    };
                    df.forwarding.insert(vni, state);
                    self.out.push(ElectionOutput::SetForwarding { pe, vni, state });
                }
            }
        }
    }

    /// The PE powers up and discovers every Ethernet segment it is attached to.
    pub fn boot(&mut self, pe: NodeId, now: SimTime) {
        for seg in self.segments_of(pe) {
            self.on_es_discovered(pe, seg, now);
        }
    }

    /// ES discovery: advertise the ES route, (handshake) ask peers to hand
    /// over, and start the election timer.
    pub fn on_es_discovered(&mut self, pe: NodeId, segment: usize, now: SimTime) {
        let esi = self.segments[segment].esi.clone();
        let vnis = self.segments[segment].vnis.clone();
        let has_rr = self.rr.is_some();
        let Some(st) = self.pes.get_mut(&pe) else { return };
        st.up = true;
        if !has_rr {
            st.synced = true;
        }
        let Some(df) = st.segments.get_mut(&segment) else {
            return;
        };
        if !df.candidates.contains(&pe) {
            df.candidates.push(pe);
            sort_by_key(&self.order, &mut df.candidates);
        }
        let peers = Target::Peers {
            esi: esi.clone(),
            except: pe,
        };
        self.send(
            pe,
            peers.clone(),
            ControlMessage::EsRoute(EsRoute {
                esi: esi.clone(),
                origin_pe: pe,
                sent_at: now,
            }),
            now,
        );
        if self.mode == ElectionMode::Handshake {
            let peers_of_segment: BTreeSet<NodeId> = self.segments[segment]
                .pes
                .iter()
                .copied()
                .filter(|p| *p != pe)
                .collect();
            if let Some(df) = self.pes.get_mut(&pe).and_then(|s| s.segments.get_mut(&segment)) {
                df.asked = vnis.iter().map(|v| (*v, peers_of_segment.clone())).collect();
            }
            self.send(
                pe,
                peers,
                ControlMessage::TakeoverRequest {
                    esi,
                    from: pe,
                    vnis,
                    forced: false,
                    sent_at: now,
                },
                now,
            );
        }
        self.arm_timer(pe, segment, now);
    }

    /// A control message reached `at`.
    pub fn deliver(&mut self, at: Endpoint, envelope: Envelope, now: SimTime) {
        match at {
            Endpoint::RouteReflector => self.on_reflector(envelope, now),
            Endpoint::Pe(pe) => {
                if !self.is_up(pe) {
                    return;
                }
                match envelope.msg {
                    ControlMessage::EsRoute(route) => self.on_es_route_received(pe, &route, now),
                    ControlMessage::RouteSync { esi, origins } => self.on_route_sync(pe, &esi, &origins, now),
                    ControlMessage::TakeoverRequest {
                        esi,
                        from,
                        vnis,
                        forced,
                        sent_at,
                    } => self.on_takeover_request(pe, &esi, from, &vnis, forced, sent_at, now),
                    ControlMessage::TakeoverGrant { esi, from, vni } => {
                        self.on_takeover_grant(pe, &esi, from, vni, now)
                    }
                }
            }
        }
    }

    fn on_reflector(&mut self, envelope: Envelope, now: SimTime) {
        if let ControlMessage::EsRoute(route) = &envelope.msg {
            if let Some(seg) = self.segment_index(&route.esi) {
                let known = self.rr_routes.entry(seg).or_default();
                known.insert(route.origin_pe);
                let origins: Vec<NodeId> = known.iter().copied().filter(|o| *o != route.origin_pe).collect();
                let sync = ControlMessage::RouteSync {
                    esi: route.esi.clone(),
                    origins,
                };
                self.relay(route.origin_pe, sync, now);
            }
        }
        for pe in self.expand(&envelope.target) {
            self.relay(pe, envelope.msg.clone(), now);
        }
    }

    /// ES route import: add the origin and make sure an election follows.
    pub fn on_es_route_received(&mut self, pe: NodeId, route: &EsRoute, now: SimTime) {
        let Some(seg) = self.segment_index(&route.esi) else {
            return;
        };
        // The origin came up after any earlier request of ours reached it.
        if let Some(df) = self.pes.get_mut(&pe).and_then(|s| s.segments.get_mut(&seg)) {
            for asked in df.asked.values_mut() {
                asked.remove(&route.origin_pe);
            }
        }
        self.import_origins(pe, seg, &[route.origin_pe], now);
    }

    fn on_route_sync(&mut self, pe: NodeId, esi: &str, origins: &[NodeId], now: SimTime) {
        let Some(seg) = self.segment_index(esi) else { return };
        self.import_origins(pe, seg, origins, now);
        let Some(st) = self.pes.get_mut(&pe) else { return };
        st.synced = true;
        let pending = st
            .segments
            .get_mut(&seg)
            .is_some_and(|df| core::mem::take(&mut df.election_pending));
        if pending {
            self.run_election(pe, seg, now);
        }
    }

    fn import_origins(&mut self, pe: NodeId, seg: usize, origins: &[NodeId], now: SimTime) {
        let late_route = self.params.late_route;
        let Some(df) = self.pes.get_mut(&pe).and_then(|s| s.segments.get_mut(&seg)) else {
            return;
        };
        let mut changed = false;
        for o in origins {
            if !df.candidates.contains(o) {
                df.candidates.push(*o);
                changed = true;
            }
        }
        if !changed {
            return;
        }
        sort_by_key(&self.order, &mut df.candidates);
        if df.timer_deadline.is_some() || df.election_pending {
            return;
        }
        match late_route {
            LateRoutePolicy::Timer => self.arm_timer(pe, seg, now),
            LateRoutePolicy::Immediate => self.run_election(pe, seg, now),
        }
    }

    /// Timer expiry. Stale epochs (the timer was re-armed since) are ignored.
    pub fn on_timer_expired(&mut self, pe: NodeId, segment: usize, epoch: u64, now: SimTime) {
        let mode = self.mode;
        let Some(st) = self.pes.get_mut(&pe) else { return };
        if !st.up {
            return;
        }
        let synced = st.synced;
        let Some(df) = st.segments.get_mut(&segment) else {
            return;
        };
        if df.timer_epoch != epoch || df.timer_deadline.is_none() {
            return;
        }
        df.timer_deadline = None;
        if mode == ElectionMode::Handshake && !synced {
            df.election_pending = true;
            return;
        }
        self.run_election(pe, segment, now);
    }

    fn run_election(&mut self, pe: NodeId, segment: usize, now: SimTime) {
        let vnis = self.segments[segment].vnis.clone();
        let mut requests: BTreeMap<NodeId, Vec<Vni>> = BTreeMap::new();
        for vni in vnis {
            let Some(df) = self.pes.get_mut(&pe).and_then(|s| s.segments.get_mut(&segment)) else {
                return;
            };
            let Ok(winner) = modulo_elect(vni, &df.candidates) else {
                continue;
            };
            df.elected.insert(vni, winner);
            if winner != pe {
                df.grants.remove(&vni);
                self.set_forwarding(pe, segment, vni, Forwarding::Blocked);
                continue;
            }
            match self.mode {
                ElectionMode::ServiceCarving => self.set_forwarding(pe, segment, vni, Forwarding::Unblocked),
                ElectionMode::Handshake => {
                    if df.forwarding(vni) == Forwarding::Unblocked || self.try_unblock(pe, segment, vni, now) {
                        continue;
                    }
                    let df = self
                        .pes
                        .get_mut(&pe)
                        .and_then(|s| s.segments.get_mut(&segment))
                        .expect("checked");
                    let granted = df.grants.get(&vni);
                    let asked = df.asked.entry(vni).or_default();
                    for &c in &df.candidates {
                        if c != pe && !granted.is_some_and(|g| g.contains(&c)) && asked.insert(c) {
                            requests.entry(c).or_default().push(vni);
                        }
                    }
                }
            }
        }
        let esi = self.segments[segment].esi.clone();
        for (peer, vnis) in requests {
            self.send(
                pe,
                Target::Pe(peer),
                ControlMessage::TakeoverRequest {
                    esi: esi.clone(),
                    from: pe,
                    vnis,
                    forced: false,
                    sent_at: now,
                },
                now,
            );
        }
    }

    /// Unblocks `vni` at `pe` once it is synced, wins the election and holds
    /// grants from every other candidate.
    fn try_unblock(&mut self, pe: NodeId, segment: usize, vni: Vni, now: SimTime) -> bool {
        let st = &self.pes[&pe];
        let df = &st.segments[&segment];
        if !st.synced || df.forwarding(vni) == Forwarding::Unblocked {
            return false;
        }
        if modulo_elect(vni, &df.candidates).ok() != Some(pe) {
            return false;
        }
        let granted = df.grants.get(&vni);
        let all = df
            .candidates
            .iter()
            .all(|c| *c == pe || granted.is_some_and(|g| g.contains(c)));
        if all {
            self.complete_takeover(pe, segment, vni, now);
        }
        all
    }

    fn complete_takeover(&mut self, pe: NodeId, segment: usize, vni: Vni, now: SimTime) {
        self.set_forwarding(pe, segment, vni, Forwarding::Unblocked);
        for s in self.sessions.iter_mut() {
            if s.new_df == pe && s.vni == vni && s.phase == HandshakePhase::Granted {
                s.phase = HandshakePhase::Complete;
                s.completed_at = Some(now);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_takeover_request(
        &mut self,
        pe: NodeId,
        esi: &str,
        from: NodeId,
        vnis: &[Vni],
        forced: bool,
        sent_at: SimTime,
        now: SimTime,
    ) {
        let Some(seg) = self.segment_index(esi) else { return };
        let order = &self.order;
        let Some(df) = self.pes.get_mut(&pe).and_then(|s| s.segments.get_mut(&seg)) else {
            return;
        };
        if !df.candidates.contains(&from) {
            df.candidates.push(from);
            sort_by_key(order, &mut df.candidates);
        }
        for &vni in vnis {
            let df = &self.pes[&pe].segments[&seg];
            if !df.forwarding.contains_key(&vni) {
                continue;
            }
            if !forced && modulo_elect(vni, &df.candidates).ok() != Some(from) {
                continue;
            }
            let was_forwarding = df.forwarding(vni) == Forwarding::Unblocked;
            let df = self
                .pes
                .get_mut(&pe)
                .and_then(|s| s.segments.get_mut(&seg))
                .expect("checked");
            df.grants.remove(&vni);
            df.forced.remove(&vni);
            self.set_forwarding(pe, seg, vni, Forwarding::Blocked);
            // A repeated request while the takeover is in progress re-grants
            // without opening a second session.
            let open = self
                .sessions
                .iter()
                .any(|s| s.old_df == pe && s.new_df == from && s.vni == vni && s.phase == HandshakePhase::Granted);
            if !open {
                self.sessions.push(HandshakeSession {
                    old_df: pe,
                    new_df: from,
                    vni,
                    phase: HandshakePhase::Granted,
                    requested_at: sent_at,
                    granted_at: Some(now),
                    old_blocked_at: was_forwarding.then_some(now),
                    completed_at: None,
                });
            }
            self.send(
                pe,
                Target::Pe(from),
                ControlMessage::TakeoverGrant {
                    esi: String::from(esi),
                    from: pe,
                    vni,
                },
                now,
            );
        }
    }

    fn on_takeover_grant(&mut self, pe: NodeId, esi: &str, from: NodeId, vni: Vni, now: SimTime) {
        let Some(seg) = self.segment_index(esi) else { return };
        let Some(df) = self.pes.get_mut(&pe).and_then(|s| s.segments.get_mut(&seg)) else {
            return;
        };
        df.grants.entry(vni).or_default().insert(from);
        if df.forced.get(&vni) == Some(&from) {
            df.forced.remove(&vni);
            if df.forwarding(vni) == Forwarding::Blocked {
                self.complete_takeover(pe, seg, vni, now);
            }
            return;
        }
        self.try_unblock(pe, seg, vni, now);
    }

    /// Explicit DF move: `new_df` asks `old_df` to stop forwarding `vni` and
    /// starts forwarding once the grant comes back. The old DF blocks before
    /// it grants, so both are never forwarding at the same time.
    pub fn handshake_transfer(&mut self, old_df: NodeId, new_df: NodeId, vni: Vni, now: SimTime) -> Result<()> {
        if old_df == new_df {
            return Ok(());
        }
        let seg = self
            .segments
            .iter()
            .position(|s| s.vnis.contains(&vni) && s.pes.contains(&old_df) && s.pes.contains(&new_df))
            .ok_or_else(|| Error::InvalidConfig {
                field: "vni",
                reason: alloc::format!("vni {vni} is not shared by both PEs"),
            })?;
        let esi = self.segments[seg].esi.clone();
        let df = self
            .pes
            .get_mut(&new_df)
            .and_then(|s| s.segments.get_mut(&seg))
            .expect("segment PE");
        df.forced.insert(vni, old_df);
        self.send(
            new_df,
            Target::Pe(old_df),
            ControlMessage::TakeoverRequest {
                esi,
                from: new_df,
                vnis: alloc::vec![vni],
                forced: true,
                sent_at: now,
            },
            now,
        );
        Ok(())
    }

    fn set_forwarding(&mut self, pe: NodeId, segment: usize, vni: Vni, state: Forwarding) {
        let Some(df) = self.pes.get_mut(&pe).and_then(|s| s.segments.get_mut(&segment)) else {
            return;
        };
        if df.forwarding.insert(vni, state) != Some(state) {
            self.out.push(ElectionOutput::SetForwarding { pe, vni, state });
        }
    }

    fn arm_timer(&mut self, pe: NodeId, segment: usize, now: SimTime) {
        let timer = self.params.timer;
        let Some(st) = self.pes.get_mut(&pe) else { return };
        let at = now + timer + st.jitter;
        let Some(df) = st.segments.get_mut(&segment) else {
            return;
        };
        df.timer_epoch += 1;
        df.timer_deadline = Some(at);
        self.out.push(ElectionOutput::Timer {
            at,
            pe,
            segment,
            epoch: df.timer_epoch,
        });
    }

    fn first_hop(&self) -> SimTime {
        SimTime::from_nanos(self.params.inter_pe_delay.as_nanos() / 2)
    }

    fn second_hop(&self) -> SimTime {
        self.params.inter_pe_delay - self.first_hop()
    }

    fn send(&mut self, _from: NodeId, target: Target, msg: ControlMessage, now: SimTime) {
        if self.rr.is_some() {
            self.out.push(ElectionOutput::Deliver {
                at: now + self.first_hop(),
                to: Endpoint::RouteReflector,
                envelope: Envelope { target, msg },
            });
        } else {
            for pe in self.expand(&target) {
                self.out.push(ElectionOutput::Deliver {
                    at: now + self.params.inter_pe_delay,
                    to: Endpoint::Pe(pe),
                    envelope: Envelope {
                        target: Target::Pe(pe),
                        msg: msg.clone(),
                    },
                });
            }
        }
    }

    fn relay(&mut self, to: NodeId, msg: ControlMessage, now: SimTime) {
        self.out.push(ElectionOutput::Deliver {
            at: now + self.second_hop(),
            to: Endpoint::Pe(to),
            envelope: Envelope {
                target: Target::Pe(to),
                msg,
            },
        });
    }

    fn expand(&self, target: &Target) -> Vec<NodeId> {
        match target {
            Target::Pe(pe) => alloc::vec![*pe],
            Target::Peers { esi, except } => self
                .segments
                .iter()
                .find(|s| &s.esi == esi)
                .map(|s| s.pes.iter().copied().filter(|p| p != except).collect())
                .unwrap_or_default(),
        }
    }
}

fn sort_by_key(order: &[u32], ids: &mut [NodeId]) {
    ids.sort_by_key(|id| order[id.index()]);
}

#[cfg(test)]
mod tests;
