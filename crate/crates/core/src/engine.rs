// SPDX-License-Identifier: Apache-2.0

//! Discrete-event core: virtual clock, `(time, seq)`-ordered event queue,
//! FIFO link queues with serialization, propagation and tail drop, and the
//! per-node packet handlers that tie the data plane to the election plane or
//! the controller.

use alloc::collections::{BTreeMap, BinaryHeap, VecDeque};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::controller::{ControlAction, Controller, ControllerConfig, DfAction, PollRecord};
use crate::election::{
    ElectionMode, ElectionOutput, ElectionParams, ElectionPlane, Endpoint, Envelope, Forwarding, HandshakeSession, Vni,
};
use crate::invariants::stamp_path_matches;
use crate::time::SimTime;
use crate::topology::{
    enumerate_trees, Link, LinkId, LinkStats, LogicalNetwork, MulticastTree, NodeId, Role, Topology, TreeId,
};
use crate::traffic::{CopyCounters, Emitter, SinkAccount, StreamKind, StreamLedger, StreamSpec};
use crate::{Error, Result};

/// How the DF is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    ServiceCarving,
    Handshake,
    Sdn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::ServiceCarving, Algorithm::Handshake, Algorithm::Sdn];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ServiceCarving => "service_carving",
            Algorithm::Handshake => "handshake",
            Algorithm::Sdn => "sdn",
        }
    }

    pub fn from_name(name: &str) -> Option<Algorithm> {
        Algorithm::ALL.into_iter().find(|a| a.name() == name)
    }
}

impl core::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
struct Entry<A> {
    at: SimTime,
    seq: u64,
    action: A,
}

impl<A> PartialEq for Entry<A> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<A> Eq for Entry<A> {}

impl<A> PartialOrd for Entry<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Entry<A> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Pending events in strict `(time, insertion order)` order.
#[derive(Debug)]
pub struct EventQueue<A> {
    heap: BinaryHeap<Entry<A>>,
    next_seq: u64,
    now: SimTime,
}

impl<A> Default for EventQueue<A> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: SimTime::ZERO,
        }
    }
}

impl<A> EventQueue<A> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, at: SimTime, action: A) -> Result<()> {
        if at < self.now {
            return Err(Error::ScheduleInPast { at, now: self.now });
        }
        self.heap.push(Entry {
            at,
            seq: self.next_seq,
            action,
        });
        self.next_seq += 1;
        Ok(())
    }

    /// Pops the next event if it is due no later than `until`, advancing the
    /// clock to its time.
    pub fn pop_until(&mut self, until: SimTime) -> Option<(SimTime, A)> {
        if self.heap.peek()?.at > until {
            return None;
        }
        let e = self.heap.pop()?;
        self.now = e.at;
        Some((e.at, e.action))
    }

    /// Moves the clock forward without executing anything.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}

/// A packet copy in flight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub stream: u32,
    pub kind: StreamKind,
    /// Unique per stream, increasing in emission order.
    pub seq: u64,
    pub vni: Option<Vni>,
    pub size: u32,
    pub src: NodeId,
    pub dst: NodeId,
    /// Before the ingress PE: the PE this copy is routed to, once the core
    /// has replicated it.
    pub target_pe: Option<NodeId>,
    /// Tree stamped by the ingress PE.
    pub tree: Option<TreeId>,
    /// Nodes visited, BUM copies only.
    pub stamp_path: Vec<NodeId>,
}

/// Output queue of one directed link. Only departure instants are kept: a
/// packet occupies the queue until its last bit is serialized.
#[derive(Debug, Clone)]
pub struct LinkQueue {
    pub link: LinkId,
    bandwidth_bps: u64,
    prop_delay: SimTime,
    capacity: usize,
    departures: VecDeque<SimTime>,
    pub busy_until: SimTime,
    pub drops: u64,
}

impl LinkQueue {
    pub fn new(link: &Link) -> Self {
        LinkQueue {
            link: link.id,
            bandwidth_bps: link.bandwidth_bps,
            prop_delay: link.prop_delay,
            capacity: link.queue_capacity as usize,
            departures: VecDeque::new(),
            busy_until: SimTime::ZERO,
            drops: 0,
        }
    }

    /// Packets accepted but not yet fully transmitted at `now`.
    pub fn occupancy(&mut self, now: SimTime) -> usize {
        while self.departures.front().is_some_and(|d| *d <= now) {
            self.departures.pop_front();
        }
        self.departures.len()
    }

    /// Enqueues a packet of `size` bytes. Returns `(departure, arrival at the
    /// far end)`, or `None` if the queue is full and the packet is dropped.
    pub fn offer(&mut self, now: SimTime, size: u32) -> Option<(SimTime, SimTime)> {
        if self.occupancy(now) >= self.capacity {
            self.drops += 1;
            return None;
        }
        let depart = self.busy_until.max(now) + SimTime::serialization(size, self.bandwidth_bps);
        self.busy_until = depart;
        self.departures.push_back(depart);
        Some((depart, depart + self.prop_delay))
    }
}

/// Timed scenario events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioAction {
    /// The PE powers up and joins its Ethernet segments.
    InsertPe(NodeId),
    /// Administrative DF choice; acted on by the controller only.
    SetDf { pe: NodeId, vni: Vni },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedEvent {
    pub at: SimTime,
    pub action: ScenarioAction,
}

/// Everything one simulation run needs.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub topology: Topology,
    pub networks: Vec<LogicalNetwork>,
    pub streams: Vec<StreamSpec>,
    pub algorithm: Algorithm,
    pub election: ElectionParams,
    pub controller: ControllerConfig,
    /// PEs up and converged at time zero.
    pub initially_up: Vec<NodeId>,
    pub events: Vec<TimedEvent>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Emit { stream: u32 },
    Arrive { link: LinkId, packet: u32 },
    Control { slot: u32 },
    ElectionTimer { pe: NodeId, segment: u32, epoch: u64 },
    Command { slot: u32 },
    Poll,
    Scenario { index: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardingChange {
    pub at: SimTime,
    pub pe: NodeId,
    pub vni: Vni,
    pub state: Forwarding,
}

/// A PE other than the current DF started forwarding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DfChange {
    pub at: SimTime,
    pub vni: Vni,
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamReport {
    pub kind: StreamKind,
    pub src: String,
    pub dst: String,
    pub vni: Option<Vni>,
    pub account: SinkAccount,
    pub copies: CopyCounters,
    /// Deliveries that broke FIFO order on their path.
    pub out_of_order: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub end: SimTime,
    pub stats_interval: SimTime,
    pub streams: Vec<StreamReport>,
    /// Bytes per link (by link index) per stats interval, attributed to the
    /// interval in which each packet finished serialization.
    pub link_bytes: Vec<Vec<u64>>,
    pub link_drops: Vec<u64>,
    pub forwarding_log: Vec<ForwardingChange>,
    pub df_changes: Vec<DfChange>,
    pub polls: Vec<PollRecord>,
    pub sessions: Vec<HandshakeSession>,
    /// BUM deliveries whose visited nodes were compared with their tree.
    pub path_checks: u64,
    pub path_mismatches: u64,
    pub events: u64,
}

impl SimulationReport {
    pub fn bum_streams(&self) -> impl Iterator<Item = &StreamReport> {
        self.streams.iter().filter(|s| s.kind == StreamKind::Bum)
    }
}

#[derive(Debug)]
struct StreamState {
    spec: StreamSpec,
    src: NodeId,
    dst: NodeId,
    emitter: Emitter,
    pending_seq: u64,
    ledger: StreamLedger,
    first_link: Option<LinkId>,
}

#[derive(Debug)]
struct NetInfo {
    pes: Vec<NodeId>,
    tors: Vec<NodeId>,
}

#[derive(Debug)]
pub struct Simulation {
    topo: Topology,
    algorithm: Algorithm,
    queue: EventQueue<Action>,
    links: Vec<LinkQueue>,
    link_bytes: Vec<Vec<u64>>,
    stats_interval: SimTime,
    packets: Vec<Option<Packet>>,
    free_packets: Vec<u32>,
    streams: Vec<StreamState>,
    nets: BTreeMap<Vni, NetInfo>,
    trees: BTreeMap<Vni, Vec<MulticastTree>>,
    routes: Vec<Option<Vec<Option<LinkId>>>>,
    pe_up: Vec<bool>,
    forwarding: BTreeMap<(NodeId, Vni), Forwarding>,
    pe_tree: BTreeMap<(NodeId, Vni), TreeId>,
    current_df: BTreeMap<Vni, NodeId>,
    plane: Option<ElectionPlane>,
    controller: Option<Controller>,
    control_slab: Vec<Option<(Endpoint, Envelope)>>,
    command_slab: Vec<ControlAction>,
    scenario_events: Vec<TimedEvent>,
    forwarding_log: Vec<ForwardingChange>,
    df_changes: Vec<DfChange>,
    path_checks: u64,
    path_mismatches: u64,
    events: u64,
    initializing: bool,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        let SimConfig {
            topology: topo,
            networks,
            streams,
            algorithm,
            election,
            controller,
            initially_up,
            events,
            seed,
        } = config;
        controller.validate()?;

        let mut nets = BTreeMap::new();
        let mut trees = BTreeMap::new();
        for net in &networks {
            let seg = topo.segment(&net.esi).ok_or_else(|| Error::InvalidNetwork {
                vni: net.vni,
                reason: alloc::format!("unknown ethernet segment `{}`", net.esi),
            })?;
            nets.insert(
                net.vni,
                NetInfo {
                    pes: seg.pes.clone(),
                    tors: net.participating_tors.clone(),
                },
            );
            trees.insert(net.vni, enumerate_trees(&topo, net)?);
        }

        let mut sim = Simulation {
            links: topo.links().iter().map(LinkQueue::new).collect(),
            link_bytes: vec![Vec::new(); topo.links().len()],
            stats_interval: controller.poll_interval,
            queue: EventQueue::new(),
            packets: Vec::new(),
            free_packets: Vec::new(),
            streams: Vec::with_capacity(streams.len()),
            routes: vec![None; topo.nodes().len()],
            pe_up: vec![false; topo.nodes().len()],
            forwarding: BTreeMap::new(),
            pe_tree: BTreeMap::new(),
            current_df: BTreeMap::new(),
            plane: None,
            controller: None,
            control_slab: Vec::new(),
            command_slab: Vec::new(),
            scenario_events: events,
            forwarding_log: Vec::new(),
            df_changes: Vec::new(),
            path_checks: 0,
            path_mismatches: 0,
            events: 0,
            initializing: true,
            algorithm,
            nets,
            trees,
            topo,
        };

        for spec in streams {
            sim.add_stream(spec, seed)?;
        }
        for pe in &initially_up {
            if sim.topo.node(*pe).role != Role::Pe {
                return Err(Error::UnknownPe(String::from(sim.topo.name(*pe))));
            }
            sim.pe_up[pe.index()] = true;
        }

        match algorithm {
            Algorithm::ServiceCarving | Algorithm::Handshake => {
                let mode = if algorithm == Algorithm::Handshake {
                    ElectionMode::Handshake
                } else {
                    ElectionMode::ServiceCarving
                };
                // Each PE floods along its own shortest tree.
                for (vni, ts) in &sim.trees {
                    for pe in &sim.nets[vni].pes {
                        if let Some(t) = ts.iter().filter(|t| t.pe == *pe).min_by_key(|t| (t.links.len(), t.id)) {
                            sim.pe_tree.insert((*pe, *vni), t.id);
                        }
                    }
                }
                let mut plane = ElectionPlane::new(&sim.topo, &networks, mode, election, seed);
                plane.converge(&initially_up);
                sim.plane = Some(plane);
                sim.pump_election(SimTime::ZERO)?;
            }
            Algorithm::Sdn => {
                let c = Controller::new(&sim.topo, &networks, controller, &initially_up)?;
                for (vni, tree, pe) in c.initial_assignment() {
                    sim.pe_tree.insert((pe, vni), tree);
                    sim.set_forwarding(pe, vni, Forwarding::Unblocked, SimTime::ZERO);
                }
                sim.controller = Some(c);
                let first = sim.stats_interval;
                sim.queue.schedule(first, Action::Poll)?;
            }
        }
        sim.initializing = false;

        for i in 0..sim.scenario_events.len() {
            let at = sim.scenario_events[i].at;
            sim.queue.schedule(at, Action::Scenario { index: i as u32 })?;
        }
        Ok(sim)
    }

    fn add_stream(&mut self, spec: StreamSpec, seed: u64) -> Result<()> {
        spec.validate()?;
        let src = self.topo.node_id(&spec.src)?;
        let dst = self.topo.node_id(&spec.dst)?;
        let bum = spec.kind == StreamKind::Bum;
        if bum {
            let vni = spec.vni.ok_or_else(|| Error::InvalidConfig {
                field: "traffic.vni",
                reason: String::from("BUM streams need a vni"),
            })?;
            if !self.nets.contains_key(&vni) {
                return Err(Error::InvalidConfig {
                    field: "traffic.vni",
                    reason: alloc::format!("no network with vni {vni}"),
                });
            }
        }
        let first_link = if bum {
            self.topo.out_links(src).first().copied()
        } else {
            self.route(dst)[src.index()]
        };
        let index = self.streams.len() as u32;
        let stream_seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index as u64 + 1));
        let mut emitter = Emitter::seeded(&spec, stream_seed);
        let mut pending_seq = 0;
        if let Some((at, seq)) = emitter.next_emission() {
            pending_seq = seq;
            self.queue.schedule(at, Action::Emit { stream: index })?;
        }
        self.streams.push(StreamState {
            spec,
            src,
            dst,
            emitter,
            pending_seq,
            ledger: StreamLedger::new(bum),
            first_link,
        });
        Ok(())
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn election(&self) -> Option<&ElectionPlane> {
        self.plane.as_ref()
    }

    pub fn controller(&self) -> Option<&Controller> {
        self.controller.as_ref()
    }

    pub fn trees(&self, vni: Vni) -> &[MulticastTree] {
        self.trees.get(&vni).map(|t| t.as_slice()).unwrap_or(&[])
    }

    pub fn forwarding(&self, pe: NodeId, vni: Vni) -> Forwarding {
        self.forwarding.get(&(pe, vni)).copied().unwrap_or(Forwarding::Blocked)
    }

    /// Tree the PE currently stamps onto `vni` traffic.
    pub fn pe_tree(&self, pe: NodeId, vni: Vni) -> Option<TreeId> {
        self.pe_tree.get(&(pe, vni)).copied()
    }

    fn route(&mut self, dst: NodeId) -> &[Option<LinkId>] {
        if self.routes[dst.index()].is_none() {
            self.routes[dst.index()] = Some(self.topo.next_hops_to(dst));
        }
        self.routes[dst.index()].as_deref().expect("just filled")
    }

    /// Executes every event due no later than `t_end`, then moves the clock
    /// to `t_end`.
    pub fn run_until(&mut self, t_end: SimTime) -> Result<SimulationReport> {
        while let Some((now, action)) = self.queue.pop_until(t_end) {
            self.events += 1;
            self.dispatch(action, now)?;
        }
        self.queue.advance_to(t_end);
        Ok(self.report())
    }

    fn dispatch(&mut self, action: Action, now: SimTime) -> Result<()> {
        match action {
            Action::Emit { stream } => self.emit(stream, now),
            Action::Arrive { link, packet } => self.arrive(link, packet, now),
            Action::Control { slot } => {
                let (to, env) = self.control_slab[slot as usize].take().expect("delivered once");
                if let Some(p) = self.plane.as_mut() {
                    p.deliver(to, env, now);
                }
                self.pump_election(now)
            }
            Action::ElectionTimer { pe, segment, epoch } => {
                if let Some(p) = self.plane.as_mut() {
                    p.on_timer_expired(pe, segment as usize, epoch, now);
                }
                self.pump_election(now)
            }
            Action::Command { slot } => {
                self.apply_command(self.command_slab[slot as usize], now);
                Ok(())
            }
            Action::Poll => self.poll(now),
            Action::Scenario { index } => self.scenario_event(index as usize, now),
        }
    }

    fn scenario_event(&mut self, index: usize, now: SimTime) -> Result<()> {
        match self.scenario_events[index].action.clone() {
            ScenarioAction::InsertPe(pe) => {
                self.pe_up[pe.index()] = true;
                if let Some(p) = self.plane.as_mut() {
                    p.boot(pe, now);
                    self.pump_election(now)?;
                }
                if let Some(c) = self.controller.as_mut() {
                    c.pe_up(pe);
                }
            }
            ScenarioAction::SetDf { pe, vni } => {
                if let Some(c) = self.controller.as_mut() {
                    c.set_df(&self.topo, vni, pe, now)?;
                    self.pump_controller()?;
                }
            }
        }
        Ok(())
    }

    fn poll(&mut self, now: SimTime) -> Result<()> {
        let k = (now.as_nanos() / self.stats_interval.as_nanos()) as usize;
        let bytes: Vec<u64> = self
            .link_bytes
            .iter()
            .map(|per| k.checked_sub(1).and_then(|i| per.get(i)).copied().unwrap_or(0))
            .collect();
        let stats = LinkStats::from_bytes(&self.topo, &bytes, self.stats_interval);
        if let Some(c) = self.controller.as_mut() {
            c.poll_tick(&self.topo, &stats, now)?;
            self.pump_controller()?;
        }
        self.queue.schedule(now + self.stats_interval, Action::Poll)
    }

    fn pump_election(&mut self, now: SimTime) -> Result<()> {
        let Some(plane) = self.plane.as_mut() else {
            return Ok(());
        };
        for out in plane.take_outputs() {
            match out {
                ElectionOutput::Deliver { at, to, envelope } => {
                    self.control_slab.push(Some((to, envelope)));
                    let slot = (self.control_slab.len() - 1) as u32;
                    self.queue.schedule(at, Action::Control { slot })?;
                }
                ElectionOutput::Timer { at, pe, segment, epoch } => {
                    self.queue.schedule(
                        at,
                        Action::ElectionTimer {
                            pe,
                            segment: segment as u32,
                            epoch,
                        },
                    )?;
                }
                ElectionOutput::SetForwarding { pe, vni, state } => self.set_forwarding(pe, vni, state, now),
            }
        }
        Ok(())
    }

    fn pump_controller(&mut self) -> Result<()> {
        let Some(c) = self.controller.as_mut() else {
            return Ok(());
        };
        for s in c.take_outputs() {
            self.command_slab.push(s.action);
            let slot = (self.command_slab.len() - 1) as u32;
            self.queue.schedule(s.at, Action::Command { slot })?;
        }
        Ok(())
    }

    fn apply_command(&mut self, action: ControlAction, now: SimTime) {
        match action {
            ControlAction::Df(cmd) => {
                let state = match cmd.action {
                    DfAction::Block => Forwarding::Blocked,
                    DfAction::Unblock => Forwarding::Unblocked,
                };
                self.set_forwarding(cmd.target_pe, cmd.vni, state, now);
            }
            ControlAction::InstallTree { vni, tree } => {
                if let Some(t) = self.trees(vni).iter().find(|t| t.id == tree) {
                    let pe = t.pe;
                    self.pe_tree.insert((pe, vni), tree);
                }
            }
        }
    }

    fn set_forwarding(&mut self, pe: NodeId, vni: Vni, state: Forwarding, now: SimTime) {
        let prev = self.forwarding.insert((pe, vni), state);
        // Blocked is the implicit starting state.
        if prev == Some(state) || (prev.is_none() && state == Forwarding::Blocked) {
            return;
        }
        self.forwarding_log.push(ForwardingChange {
            at: now,
            pe,
            vni,
            state,
        });
        if state == Forwarding::Unblocked {
            match self.current_df.insert(vni, pe) {
                Some(prev) if prev != pe && !self.initializing => self.df_changes.push(DfChange {
                    at: now,
                    vni,
                    from: prev,
                    to: pe,
                }),
                _ => {}
            }
        }
    }

    fn emit(&mut self, stream: u32, now: SimTime) -> Result<()> {
        let st = &mut self.streams[stream as usize];
        let seq = st.pending_seq;
        st.ledger.offer(seq);
        let bum = st.spec.kind == StreamKind::Bum;
        let packet = Packet {
            stream,
            kind: st.spec.kind,
            seq,
            vni: st.spec.vni,
            size: st.spec.pkt_size,
            src: st.src,
            dst: st.dst,
            target_pe: None,
            tree: None,
            stamp_path: if bum { vec![st.src] } else { Vec::new() },
        };
        let first = st.first_link;
        if let Some((at, next)) = st.emitter.next_emission() {
            st.pending_seq = next;
            self.queue.schedule(at, Action::Emit { stream })?;
        }
        match first {
            Some(link) => self.transmit(link, packet, now),
            None => {
                self.streams[stream as usize].ledger.absorb(seq);
                Ok(())
            }
        }
    }

    /// Puts a packet on a link, or drops it at a full queue.
    pub fn transmit(&mut self, link: LinkId, packet: Packet, now: SimTime) -> Result<()> {
        let q = self.links.get_mut(link.index()).ok_or(Error::UnknownLink(link))?;
        match q.offer(now, packet.size) {
            Some((depart, arrive)) => {
                let interval = (depart.as_nanos() / self.stats_interval.as_nanos()) as usize;
                let per = &mut self.link_bytes[link.index()];
                if per.len() <= interval {
                    per.resize(interval + 1, 0);
                }
                per[interval] += packet.size as u64;
                let slot = self.store(packet);
                self.queue.schedule(arrive, Action::Arrive { link, packet: slot })
            }
            None => {
                self.streams[packet.stream as usize].ledger.drop_copy(packet.seq);
                Ok(())
            }
        }
    }

    fn store(&mut self, packet: Packet) -> u32 {
        match self.free_packets.pop() {
            Some(i) => {
                self.packets[i as usize] = Some(packet);
                i
            }
            None => {
                self.packets.push(Some(packet));
                (self.packets.len() - 1) as u32
            }
        }
    }

    fn arrive(&mut self, link: LinkId, slot: u32, now: SimTime) -> Result<()> {
        let mut packet = self.packets[slot as usize].take().expect("packet in flight");
        self.free_packets.push(slot);
        let node = self.topo.link(link).to;
        if packet.kind == StreamKind::Bum {
            packet.stamp_path.push(node);
        }
        let role = self.topo.node(node).role;

        if role == Role::Host {
            if node == packet.dst {
                self.deliver(packet);
            } else {
                self.streams[packet.stream as usize].ledger.absorb(packet.seq);
            }
            return Ok(());
        }

        if packet.kind == StreamKind::Background {
            return match self.route(packet.dst)[node.index()] {
                Some(next) => self.transmit(next, packet, now),
                None => {
                    self.streams[packet.stream as usize].ledger.absorb(packet.seq);
                    Ok(())
                }
            };
        }

        let vni = packet.vni.expect("BUM packets carry a vni");
        match packet.tree {
            None => {
                let is_segment_pe = role == Role::Pe && self.nets[&vni].pes.contains(&node);
                if is_segment_pe && packet.target_pe.is_none_or(|t| t == node) {
                    return self.ingress_pe(node, vni, packet, now);
                }
                match packet.target_pe {
                    Some(pe) => match self.route(pe)[node.index()] {
                        Some(next) => self.transmit(next, packet, now),
                        None => {
                            self.streams[packet.stream as usize].ledger.absorb(packet.seq);
                            Ok(())
                        }
                    },
                    None => {
                        // Replicate towards every PE of the segment.
                        let pes = self.nets[&vni].pes.clone();
                        let mut hops = Vec::with_capacity(pes.len());
                        for pe in pes {
                            if let Some(l) = self.route(pe)[node.index()] {
                                hops.push((pe, l));
                            }
                        }
                        let copies = hops
                            .into_iter()
                            .map(|(pe, l)| {
                                let mut p = packet.clone();
                                p.target_pe = Some(pe);
                                (l, p)
                            })
                            .collect();
                        self.fan_out(packet.stream, packet.seq, copies, now)
                    }
                }
            }
            Some(tree_id) => {
                let tree = &self.trees[&vni][tree_id.0 as usize];
                debug_assert_eq!(tree.id, tree_id);
                let mut links: Vec<LinkId> = tree.children(node).to_vec();
                if role == Role::Tor && self.nets[&vni].tors.contains(&node) {
                    links.extend(self.topo.attached_hosts(node).map(|(l, _)| l));
                }
                let copies = links.into_iter().map(|l| (l, packet.clone())).collect();
                self.fan_out(packet.stream, packet.seq, copies, now)
            }
        }
    }

    /// Ingress PE: discard unless up and forwarding, otherwise stamp the
    /// PE's current tree and flood along it.
    fn ingress_pe(&mut self, pe: NodeId, vni: Vni, mut packet: Packet, now: SimTime) -> Result<()> {
        let forwarding = self.pe_up[pe.index()] && self.forwarding(pe, vni) == Forwarding::Unblocked;
        let tree = self.pe_tree(pe, vni);
        let ledger = &mut self.streams[packet.stream as usize].ledger;
        if !forwarding {
            ledger.block_copy(packet.seq);
            return Ok(());
        }
        let Some(tree_id) = tree else {
            ledger.absorb(packet.seq);
            return Ok(());
        };
        packet.tree = Some(tree_id);
        let links: Vec<LinkId> = self.trees[&vni][tree_id.0 as usize].children(pe).to_vec();
        let copies = links.into_iter().map(|l| (l, packet.clone())).collect();
        self.fan_out(packet.stream, packet.seq, copies, now)
    }

    fn fan_out(&mut self, stream: u32, seq: u64, copies: Vec<(LinkId, Packet)>, now: SimTime) -> Result<()> {
        let ledger = &mut self.streams[stream as usize].ledger;
        if copies.is_empty() {
            ledger.absorb(seq);
            return Ok(());
        }
        ledger.replicate(seq, copies.len() as u64 - 1);
        for (l, p) in copies {
            self.transmit(l, p, now)?;
        }
        Ok(())
    }

    fn deliver(&mut self, packet: Packet) {
        let path_key = packet.tree.map_or(0, |t| t.0 as u64 + 1);
        if let (Some(vni), Some(tree)) = (packet.vni, packet.tree) {
            self.path_checks += 1;
            let tree = &self.trees[&vni][tree.0 as usize];
            if !stamp_path_matches(&self.topo, tree, &packet.stamp_path) {
                self.path_mismatches += 1;
            }
        }
        self.streams[packet.stream as usize]
            .ledger
            .record_delivery(packet.seq, path_key);
    }

    pub fn report(&self) -> SimulationReport {
        SimulationReport {
            end: self.queue.now(),
            stats_interval: self.stats_interval,
            streams: self
                .streams
                .iter()
                .map(|s| StreamReport {
                    kind: s.spec.kind,
                    src: s.spec.src.clone(),
                    dst: s.spec.dst.clone(),
                    vni: s.spec.vni,
                    account: s.ledger.account(),
                    copies: s.ledger.copies(),
                    out_of_order: s.ledger.out_of_order(),
                })
                .collect(),
            link_bytes: self.link_bytes.clone(),
            link_drops: self.links.iter().map(|q| q.drops).collect(),
            forwarding_log: self.forwarding_log.clone(),
            df_changes: self.df_changes.clone(),
            polls: self
                .controller
                .as_ref()
                .map(|c| c.poll_log().to_vec())
                .unwrap_or_default(),
            sessions: self.plane.as_ref().map(|p| p.sessions().to_vec()).unwrap_or_default(),
            path_checks: self.path_checks,
            path_mismatches: self.path_mismatches,
            events: self.events,
        }
    }
}
