// SPDX-License-Identifier: Apache-2.0

//! Centralized control: tree weights from polled link counters, the
//! threshold/hold switching rule, and block-before-unblock DF commands over
//! an out-of-band channel.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::election::Vni;
use crate::time::SimTime;
use crate::topology::{
    enumerate_trees, tree_weight, LinkStats, LogicalNetwork, MulticastTree, NodeId, Role, Topology, TreeId,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub poll_interval: SimTime,
    pub congestion_threshold: f64,
    pub hold_polls: u32,
    pub oob_delay: SimTime,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            poll_interval: SimTime::from_secs(5),
            congestion_threshold: 0.95,
            hold_polls: 2,
            oob_delay: SimTime::from_millis(1),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.poll_interval == SimTime::ZERO {
            return Err(invalid("poll_interval", "must be positive"));
        }
        if !(self.congestion_threshold > 0.0 && self.congestion_threshold <= 1.0) {
            return Err(invalid("congestion_threshold", "must be in (0, 1]"));
        }
        if self.hold_polls == 0 {
            return Err(invalid("hold_polls", "must be at least 1"));
        }
        Ok(())
    }
}

fn invalid(field: &'static str, reason: &str) -> Error {
    Error::InvalidConfig {
        field,
        reason: String::from(reason),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DfAction {
    Block,
    Unblock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DfCommand {
    pub target_pe: NodeId,
    pub vni: Vni,
    pub action: DfAction,
    pub issued_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlAction {
    Df(DfCommand),
    /// Forwarding rules of `tree` become active for `vni` (switch children
    /// and the PE's tree stamp).
    InstallTree {
        vni: Vni,
        tree: TreeId,
    },
}

/// An action and the instant it reaches the data plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scheduled {
    pub at: SimTime,
    pub action: ControlAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeDecision {
    Keep,
    Switch(TreeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeDecisionState {
    pub active_tree: TreeId,
    pub violation_streak: u32,
    pub last_weights: BTreeMap<TreeId, f64>,
    /// Set by a deterministic DF assignment; polls no longer switch.
    pub pinned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PollRecord {
    pub at: SimTime,
    pub vni: Vni,
    pub active_tree: TreeId,
    pub weights: BTreeMap<TreeId, f64>,
    pub max_active_utilization: f64,
    pub violation_streak: u32,
    pub decision: TreeDecision,
}

#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    networks: Vec<LogicalNetwork>,
    trees: BTreeMap<Vni, Vec<MulticastTree>>,
    state: BTreeMap<Vni, TreeDecisionState>,
    up: BTreeSet<NodeId>,
    last_stats: Option<LinkStats>,
    log: Vec<PollRecord>,
    out: Vec<Scheduled>,
}

impl Controller {
    /// Enumerates candidate trees for each network and picks the initial
    /// active tree among PEs in `initially_up` by (link count, id).
    pub fn new(
        topo: &Topology,
        networks: &[LogicalNetwork],
        config: ControllerConfig,
        initially_up: &[NodeId],
    ) -> Result<Self> {
        config.validate()?;
        let mut trees = BTreeMap::new();
        for net in networks {
            trees.insert(net.vni, enumerate_trees(topo, net)?);
        }
        let mut c = Controller {
            config,
            networks: networks.to_vec(),
            trees,
            state: BTreeMap::new(),
            up: initially_up.iter().copied().collect(),
            last_stats: None,
            log: Vec::new(),
            out: Vec::new(),
        };
        for net in networks {
            let initial = c
                .candidates(net.vni)
                .min_by_key(|t| (t.links.len(), t.id))
                .map(|t| t.id)
                .ok_or(Error::NoCandidateTree { vni: net.vni })?;
            c.state.insert(
                net.vni,
                TreeDecisionState {
                    active_tree: initial,
                    violation_streak: 0,
                    last_weights: BTreeMap::new(),
                    pinned: false,
                },
            );
        }
        Ok(c)
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn trees(&self, vni: Vni) -> &[MulticastTree] {
        self.trees.get(&vni).map(|t| t.as_slice()).unwrap_or(&[])
    }

    pub fn tree(&self, vni: Vni, id: TreeId) -> Option<&MulticastTree> {
        self.trees(vni).iter().find(|t| t.id == id)
    }

    pub fn state(&self, vni: Vni) -> Option<&TreeDecisionState> {
        self.state.get(&vni)
    }

    pub fn active_tree(&self, vni: Vni) -> Option<&MulticastTree> {
        self.tree(vni, self.state.get(&vni)?.active_tree)
    }

    pub fn current_df(&self, vni: Vni) -> Option<NodeId> {
        self.active_tree(vni).map(|t| t.pe)
    }

    pub fn poll_log(&self) -> &[PollRecord] {
        &self.log
    }

    pub fn take_outputs(&mut self) -> Vec<Scheduled> {
        core::mem::take(&mut self.out)
    }

    /// Initial (active tree, DF) per VNI; applied at time zero without
    /// going through the command channel.
    pub fn initial_assignment(&self) -> Vec<(Vni, TreeId, NodeId)> {
        self.state
            .iter()
            .filter_map(|(vni, s)| Some((*vni, s.active_tree, self.tree(*vni, s.active_tree)?.pe)))
            .collect()
    }

    /// A PE came up and its trees become candidates.
    pub fn pe_up(&mut self, pe: NodeId) {
        self.up.insert(pe);
    }

    /// Lets polls switch `vni` again after a deterministic assignment.
    pub fn resume(&mut self, vni: Vni) {
        if let Some(s) = self.state.get_mut(&vni) {
            s.pinned = false;
        }
    }

    fn candidates(&self, vni: Vni) -> impl Iterator<Item = &MulticastTree> {
        self.trees(vni).iter().filter(|t| self.up.contains(&t.pe))
    }

    /// One poll: weigh every candidate tree and apply the switching rule.
    /// A switch is issued when the active tree is not the lightest and one
    /// of its links is above the threshold for `hold_polls` polls in a row.
    pub fn poll_tick(&mut self, topo: &Topology, stats: &LinkStats, now: SimTime) -> Result<Vec<(Vni, TreeDecision)>> {
        let vnis: Vec<Vni> = self.state.keys().copied().collect();
        let mut decisions = Vec::with_capacity(vnis.len());
        for vni in vnis {
            let mut weights = BTreeMap::new();
            for t in self.candidates(vni) {
                weights.insert(t.id, tree_weight(topo, t, stats)?);
            }
            let active = self.state[&vni].active_tree;
            let active_tree = self.tree(vni, active).expect("active tree exists");
            let max_util = active_tree
                .links
                .iter()
                .map(|l| stats.get(*l).unwrap_or(0.0))
                .fold(0.0, f64::max);
            let w_active = match weights.get(&active) {
                Some(w) => *w,
                None => tree_weight(topo, active_tree, stats)?,
            };
            // Lightest tree; the active one wins ties, then the lowest id.
            let best = weights
                .iter()
                .min_by(|a, b| {
                    a.1.total_cmp(b.1)
                        .then_with(|| (*a.0 != active).cmp(&(*b.0 != active)))
                        .then_with(|| a.0.cmp(b.0))
                })
                .map(|(id, w)| (*id, *w));

            let st = self.state.get_mut(&vni).expect("known vni");
            st.last_weights = weights.clone();
            let mut decision = TreeDecision::Keep;
            if st.pinned {
                st.violation_streak = 0;
            } else if let Some((best_id, w_min)) = best {
                let breached = w_active > w_min && max_util > self.config.congestion_threshold;
                st.violation_streak = if breached { st.violation_streak + 1 } else { 0 };
                if st.violation_streak >= self.config.hold_polls && best_id != active {
                    st.violation_streak = 0;
                    decision = TreeDecision::Switch(best_id);
                }
            }
            let streak = st.violation_streak;
            self.log.push(PollRecord {
                at: now,
                vni,
                active_tree: active,
                weights,
                max_active_utilization: max_util,
                violation_streak: streak,
                decision,
            });
            if let TreeDecision::Switch(to) = decision {
                self.apply_tree_switch(active, to, vni, now);
            }
            decisions.push((vni, decision));
        }
        self.last_stats = Some(stats.clone());
        Ok(decisions)
    }

    /// Moves `vni` from `old_tree` to `new_tree`. If the PE changes, the old
    /// DF is blocked when the command arrives and the new one is unblocked
    /// only after that, one channel delay later.
    pub fn apply_tree_switch(&mut self, old_tree: TreeId, new_tree: TreeId, vni: Vni, now: SimTime) {
        if old_tree == new_tree {
            return;
        }
        let (Some(old), Some(new)) = (self.tree(vni, old_tree), self.tree(vni, new_tree)) else {
            return;
        };
        let (old_pe, new_pe) = (old.pe, new.pe);
        let oob = self.config.oob_delay;
        let block_at = now + oob;
        if old_pe != new_pe {
            self.push(block_at, df(old_pe, vni, DfAction::Block, now));
        }
        self.out.push(Scheduled {
            at: block_at,
            action: ControlAction::InstallTree { vni, tree: new_tree },
        });
        if old_pe != new_pe {
            self.push(block_at + oob, df(new_pe, vni, DfAction::Unblock, block_at));
        }
        if let Some(s) = self.state.get_mut(&vni) {
            s.active_tree = new_tree;
        }
    }

    /// Administrator-selected DF for `vni`, which must belong to `evi`. The
    /// target's tree is the lightest by the last poll, then fewest links,
    /// then lowest id. Dynamic switching stops for the VNI.
    pub fn set_df_deterministic(&mut self, topo: &Topology, evi: &str, vni: Vni, pe: &str, now: SimTime) -> Result<()> {
        let net = self
            .networks
            .iter()
            .find(|n| n.evi == evi && n.vni == vni)
            .ok_or_else(|| Error::UnknownEvi(alloc::format!("{evi}/{vni}")))?;
        let pe_id = topo.node_id(pe).map_err(|_| Error::UnknownPe(String::from(pe)))?;
        let in_segment = topo.segment(&net.esi).is_some_and(|s| s.pes.contains(&pe_id));
        if topo.node(pe_id).role != Role::Pe || !in_segment {
            return Err(Error::UnknownPe(String::from(pe)));
        }
        self.set_df(topo, vni, pe_id, now)
    }

    /// [`Controller::set_df_deterministic`] by VNI alone.
    pub fn set_df(&mut self, topo: &Topology, vni: Vni, pe: NodeId, now: SimTime) -> Result<()> {
        let current = self
            .current_df(vni)
            .ok_or_else(|| Error::UnknownEvi(alloc::format!("vni {vni}")))?;
        if current == pe {
            return Ok(());
        }
        let mut best: Option<(f64, usize, TreeId)> = None;
        for t in self.trees(vni).iter().filter(|t| t.pe == pe) {
            // Before the first poll every tree weighs the same.
            let w = match &self.last_stats {
                Some(stats) => tree_weight(topo, t, stats)?,
                None => 0.0,
            };
            let key = (w, t.links.len(), t.id);
            let better = match best {
                None => true,
                Some(b) => key
                    .0
                    .total_cmp(&b.0)
                    .then(key.1.cmp(&b.1))
                    .then(key.2.cmp(&b.2))
                    .is_lt(),
            };
            if better {
                best = Some(key);
            }
        }
        let (_, _, target) = best.ok_or(Error::NoCandidateTree { vni })?;
        self.up.insert(pe);
        let active = self.state[&vni].active_tree;
        self.apply_tree_switch(active, target, vni, now);
        let st = self.state.get_mut(&vni).expect("known vni");
        st.pinned = true;
        st.violation_streak = 0;
        Ok(())
    }

    fn push(&mut self, at: SimTime, cmd: DfCommand) {
        self.out.push(Scheduled {
            at,
            action: ControlAction::Df(cmd),
        });
    }
}

fn df(target_pe: NodeId, vni: Vni, action: DfAction, issued_at: SimTime) -> DfCommand {
    DfCommand {
        target_pe,
        vni,
        action,
        issued_at,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{fig6, Fig6Options, FIG6_ESI, FIG6_EVI};
    use alloc::string::ToString;
    use proptest::prelude::*;

    const VNI: Vni = 1000;

    fn setup(up: &[&str], config: ControllerConfig) -> (Topology, Controller) {
        let topo = fig6(&Fig6Options::default()).unwrap();
        let net = topo
            .logical_network(VNI, &["TOR-1".to_string(), "TOR-2".to_string()], FIG6_ESI, FIG6_EVI)
            .unwrap();
        let up: Vec<NodeId> = up.iter().map(|n| topo.node_id(n).unwrap()).collect();
        let c = Controller::new(&topo, &[net], config, &up).unwrap();
        (topo, c)
    }

    fn util(topo: &Topology, pairs: &[(&str, &str, f64)]) -> LinkStats {
        let mut s = LinkStats::new(SimTime::from_secs(5));
        for l in topo.links() {
            s.set(l.id, 0.0);
        }
        for (a, b, u) in pairs {
            let l = topo
                .link_between(topo.node_id(a).unwrap(), topo.node_id(b).unwrap())
                .unwrap();
            s.set(l, *u);
        }
        s
    }

    fn label(topo: &Topology, c: &Controller, id: TreeId) -> String {
        c.tree(VNI, id).unwrap().label(topo)
    }

    #[test]
    fn config_bounds() {
        assert!(ControllerConfig::default().validate().is_ok());
        let bad = [
            ControllerConfig {
                poll_interval: SimTime::ZERO,
                ..Default::default()
            },
            ControllerConfig {
                congestion_threshold: 0.0,
                ..Default::default()
            },
            ControllerConfig {
                congestion_threshold: 1.01,
                ..Default::default()
            },
            ControllerConfig {
                hold_polls: 0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn initial_tree_is_the_red_one() {
        let (topo, c) = setup(&["PE-1", "PE-2"], ControllerConfig::default());
        let a = c.state(VNI).unwrap().active_tree;
        assert_eq!(label(&topo, &c, a), "CE-1/PE-1");
        assert_eq!(c.current_df(VNI), topo.node_id("PE-1").ok());
    }

    #[test]
    fn idle_trees_keep() {
        let (topo, mut c) = setup(&["PE-1", "PE-2"], ControllerConfig::default());
        let s = util(&topo, &[]);
        for k in 1..5 {
            let d = c.poll_tick(&topo, &s, SimTime::from_secs(5 * k)).unwrap();
            assert_eq!(d, [(VNI, TreeDecision::Keep)]);
            assert_eq!(c.state(VNI).unwrap().violation_streak, 0);
        }
        assert!(c.take_outputs().is_empty());
    }

    #[test]
    fn breach_on_a_minimal_tree_keeps() {
        // Only a link shared by every tree is hot, so the active tree stays
        // among the lightest.
        let (topo, mut c) = setup(&["PE-1", "PE-2"], ControllerConfig::default());
        let s = util(&topo, &[("CE-1", "TOR-2", 0.97), ("CE-2", "TOR-2", 0.97)]);
        for k in 1..5 {
            let d = c.poll_tick(&topo, &s, SimTime::from_secs(5 * k)).unwrap();
            assert_eq!(d, [(VNI, TreeDecision::Keep)]);
        }
    }

    #[test]
    fn sustained_breach_switches_to_the_lightest_tree() {
        let (topo, mut c) = setup(&["PE-1", "PE-2"], ControllerConfig::default());
        // The active red tree's own BUM load on CE-1 -> TOR-2 makes every
        // tree through it heavier than the green one.
        let s = util(&topo, &[("CE-1", "TOR-1", 0.96), ("CE-1", "TOR-2", 0.1)]);
        let d1 = c.poll_tick(&topo, &s, SimTime::from_secs(5)).unwrap();
        assert_eq!(d1, [(VNI, TreeDecision::Keep)]);
        assert_eq!(c.state(VNI).unwrap().violation_streak, 1);
        let d2 = c.poll_tick(&topo, &s, SimTime::from_secs(10)).unwrap();
        let TreeDecision::Switch(to) = d2[0].1 else {
            panic!("{d2:?}")
        };
        assert_eq!(label(&topo, &c, to), "CE-2/PE-2");
        assert_eq!(c.state(VNI).unwrap().violation_streak, 0);
        assert_eq!(c.take_outputs().len(), 3);
    }

    #[test]
    fn same_pe_switch_only_moves_rules() {
        let (topo, mut c) = setup(&["PE-1", "PE-2"], ControllerConfig::default());
        let red = c.state(VNI).unwrap().active_tree;
        let other = c.trees(VNI).iter().find(|t| t.label(&topo) == "CE-2/PE-1").unwrap().id;
        let now = SimTime::from_secs(10);
        c.apply_tree_switch(red, other, VNI, now);
        assert_eq!(
            c.take_outputs(),
            [Scheduled {
                at: now + SimTime::from_millis(1),
                action: ControlAction::InstallTree { vni: VNI, tree: other },
            }]
        );
        assert_eq!(c.current_df(VNI), topo.node_id("PE-1").ok());
    }

    #[test]
    fn streak_resets_when_condition_fails() {
        let (topo, mut c) = setup(&["PE-1", "PE-2"], ControllerConfig::default());
        let hot = util(&topo, &[("CE-1", "TOR-1", 0.96)]);
        let cool = util(&topo, &[("CE-1", "TOR-1", 0.5)]);
        c.poll_tick(&topo, &hot, SimTime::from_secs(5)).unwrap();
        c.poll_tick(&topo, &cool, SimTime::from_secs(10)).unwrap();
        assert_eq!(c.state(VNI).unwrap().violation_streak, 0);
        let d = c.poll_tick(&topo, &hot, SimTime::from_secs(15)).unwrap();
        assert_eq!(d[0].1, TreeDecision::Keep);
    }

    #[test]
    fn pe_change_blocks_before_unblocking() {
        let (topo, mut c) = setup(&["PE-1", "PE-2"], ControllerConfig::default());
        let pe1 = topo.node_id("PE-1").unwrap();
        let pe2 = topo.node_id("PE-2").unwrap();
        let green = c.trees(VNI).iter().find(|t| t.label(&topo) == "CE-2/PE-2").unwrap().id;
        let red = c.state(VNI).unwrap().active_tree;
        let now = SimTime::from_secs(1);
        c.apply_tree_switch(red, green, VNI, now);
        let ms = SimTime::from_millis(1);
        assert_eq!(
            c.take_outputs(),
            [
                Scheduled {
                    at: now + ms,
                    action: ControlAction::Df(df(pe1, VNI, DfAction::Block, now)),
                },
                Scheduled {
                    at: now + ms,
                    action: ControlAction::InstallTree { vni: VNI, tree: green },
                },
                Scheduled {
                    at: now + ms + ms,
                    action: ControlAction::Df(df(pe2, VNI, DfAction::Unblock, now + ms)),
                },
            ]
        );
        assert_eq!(c.current_df(VNI), Some(pe2));
    }

    #[test]
    fn zero_oob_delay_has_no_gap() {
        let config = ControllerConfig {
            oob_delay: SimTime::ZERO,
            ..Default::default()
        };
        let (topo, mut c) = setup(&["PE-1", "PE-2"], config);
        c.set_df_deterministic(&topo, FIG6_EVI, VNI, "PE-2", SimTime::from_millis(3))
            .unwrap();
        let out = c.take_outputs();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|s| s.at == SimTime::from_millis(3)));
    }

    #[test]
    fn set_df_moves_to_the_green_tree_and_pins() {
        let (topo, mut c) = setup(&["PE-1"], ControllerConfig::default());
        c.set_df_deterministic(&topo, FIG6_EVI, VNI, "PE-1", SimTime::ZERO)
            .unwrap();
        assert!(c.take_outputs().is_empty());

        let now = SimTime::from_millis(10);
        c.set_df_deterministic(&topo, FIG6_EVI, VNI, "PE-2", now).unwrap();
        let out = c.take_outputs();
        let unblock = out
            .iter()
            .find(|s| {
                matches!(
                    s.action,
                    ControlAction::Df(DfCommand {
                        action: DfAction::Unblock,
                        ..
                    })
                )
            })
            .unwrap();
        assert_eq!(unblock.at, now + SimTime::from_millis(2));
        let active = c.state(VNI).unwrap().active_tree;
        assert_eq!(label(&topo, &c, active), "CE-2/PE-2");
        assert!(c.state(VNI).unwrap().pinned);

        let s = util(&topo, &[("CE-2", "TOR-1", 0.99)]);
        for k in 1..4 {
            let d = c.poll_tick(&topo, &s, SimTime::from_secs(5 * k)).unwrap();
            assert_eq!(d[0].1, TreeDecision::Keep);
        }
        c.resume(VNI);
        c.poll_tick(&topo, &s, SimTime::from_secs(20)).unwrap();
        assert_eq!(c.state(VNI).unwrap().violation_streak, 1);
    }

    #[test]
    fn set_df_rejects_unknown_targets() {
        let (topo, mut c) = setup(&["PE-1", "PE-2"], ControllerConfig::default());
        assert!(matches!(
            c.set_df_deterministic(&topo, FIG6_EVI, VNI, "CE-1", SimTime::ZERO),
            Err(Error::UnknownPe(_))
        ));
        assert!(matches!(
            c.set_df_deterministic(&topo, FIG6_EVI, VNI, "PE-9", SimTime::ZERO),
            Err(Error::UnknownPe(_))
        ));
        assert!(matches!(
            c.set_df_deterministic(&topo, "EVI-9", VNI, "PE-2", SimTime::ZERO),
            Err(Error::UnknownEvi(_))
        ));
    }

    proptest! {
        /// Switches only go to a strictly lighter tree, and never closer
        /// together than hold_polls polls.
        #[test]
        fn switching_rule_is_safe_and_hysteretic(
            polls in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 1..30),
            hold in 1u32..4,
        ) {
            let config = ControllerConfig { hold_polls: hold, ..Default::default() };
            let (topo, mut c) = setup(&["PE-1", "PE-2"], config);
            let hot_links = [("CE-1", "TOR-1"), ("CE-1", "TOR-2"), ("CE-2", "TOR-1"), ("CE-2", "TOR-2")];
            let mut last_switch: Option<usize> = None;
            for (k, u) in polls.iter().enumerate() {
                let pairs: Vec<(&str, &str, f64)> = hot_links.iter().zip(u).map(|((a, b), u)| (*a, *b, *u)).collect();
                let s = util(&topo, &pairs);
                let before = c.state(VNI).unwrap().active_tree;
                let d = c.poll_tick(&topo, &s, SimTime::from_secs(5 * (k as u64 + 1))).unwrap();
                if let TreeDecision::Switch(to) = d[0].1 {
                    let w = &c.state(VNI).unwrap().last_weights;
                    prop_assert!(w[&to] < w[&before]);
                    if let Some(prev) = last_switch {
                        prop_assert!(k - prev >= hold as usize);
                    }
                    last_switch = Some(k);
                }
            }
        }
    }
}
