// SPDX-License-Identifier: Apache-2.0

//! Scenario configuration, the two built-in experiments, sweep expansion and
//! per-run result rows.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::controller::ControllerConfig;
use crate::election::{ElectionParams, LateRoutePolicy, Vni};
use crate::engine::{Algorithm, ScenarioAction, SimConfig, Simulation, SimulationReport, TimedEvent};
use crate::invariants::{check_run, Violation};
use crate::time::SimTime;
use crate::topology::{build_topology, LogicalNetwork, Topology, TopologySpec, FIG6_ESI, FIG6_EVI};
use crate::traffic::{Ramp, StreamKind, StreamSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub vni: Vni,
    pub esi: String,
    pub evi: String,
    pub tors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectionConfig {
    pub timer: SimTime,
    pub jitter: SimTime,
    /// One run set per entry.
    pub inter_pe_delays: Vec<SimTime>,
    pub late_route: LateRoutePolicy,
    pub initially_up: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventSpec {
    InsertPe { at: SimTime, pe: String },
    SetDf { at: SimTime, pe: String, vni: Vni },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub algorithm: Algorithm,
    pub topology: TopologySpec,
    pub networks: Vec<NetworkSpec>,
    pub election: ElectionConfig,
    pub controller: ControllerConfig,
    pub traffic: Vec<StreamSpec>,
    /// Rate sweep applied to every BUM stream. Empty keeps the streams' own
    /// rates as a single sweep point.
    pub bum_rates_bps: Vec<u64>,
    pub runs: u32,
    pub seed: u64,
    /// Emission stops here.
    pub duration: SimTime,
    /// Extra time after `duration` for packets in flight to land.
    pub drain: SimTime,
    pub events: Vec<EventSpec>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |field: &'static str, reason: &str| Error::InvalidConfig {
            field,
            reason: reason.to_string(),
        };
        if self.runs == 0 {
            return Err(invalid("runs", "must be at least 1"));
        }
        if self.duration == SimTime::ZERO {
            return Err(invalid("duration_s", "must be positive"));
        }
        if self.election.inter_pe_delays.is_empty() {
            return Err(invalid("election.inter_pe_delays_ms", "sweep list is empty"));
        }
        if self.networks.is_empty() {
            return Err(invalid("networks", "at least one network is required"));
        }
        if self.bum_rates_bps.contains(&0) {
            return Err(invalid("bum_rates_mbps", "rates must be positive"));
        }
        self.controller.validate()?;
        for s in &self.traffic {
            s.validate()?;
        }
        // Resolve names once so that typos surface before any run starts.
        let topo = build_topology(&self.topology)?;
        self.resolve_networks(&topo)?;
        for name in &self.election.initially_up {
            topo.node_id(name)?;
        }
        for e in &self.events {
            match e {
                EventSpec::InsertPe { pe, .. } | EventSpec::SetDf { pe, .. } => {
                    topo.node_id(pe).map_err(|_| Error::UnknownPe(pe.clone()))?;
                }
            }
        }
        Ok(())
    }

    fn resolve_networks(&self, topo: &Topology) -> Result<Vec<LogicalNetwork>> {
        self.networks
            .iter()
            .map(|n| topo.logical_network(n.vni, &n.tors, &n.esi, &n.evi))
            .collect()
    }

    /// Sweep points in output order: by BUM rate, then delay, then run.
    pub fn expand(&self) -> Vec<RunPoint> {
        let rates: Vec<u64> = if self.bum_rates_bps.is_empty() {
            vec![self
                .traffic
                .iter()
                .find(|s| s.kind == StreamKind::Bum)
                .map_or(0, |s| s.rate_bps)]
        } else {
            self.bum_rates_bps.clone()
        };
        let mut points = Vec::with_capacity(rates.len() * self.election.inter_pe_delays.len() * self.runs as usize);
        for &bum_rate_bps in &rates {
            for &inter_pe_delay in &self.election.inter_pe_delays {
                for run in 0..self.runs {
                    points.push(RunPoint {
                        run,
                        inter_pe_delay,
                        bum_rate_bps,
                        seed: self.seed.wrapping_add(run as u64),
                    });
                }
            }
        }
        points
    }

    /// The simulation input for one sweep point.
    pub fn sim_config(&self, point: &RunPoint) -> Result<SimConfig> {
        let topology = build_topology(&self.topology)?;
        let networks = self.resolve_networks(&topology)?;
        let mut streams = Vec::with_capacity(self.traffic.len());
        for s in &self.traffic {
            let mut s = s.clone();
            s.stop = s.stop.min(self.duration);
            if s.start >= s.stop {
                continue;
            }
            if s.kind == StreamKind::Bum && !self.bum_rates_bps.is_empty() {
                s.rate_bps = point.bum_rate_bps;
            }
            streams.push(s);
        }
        let initially_up = self
            .election
            .initially_up
            .iter()
            .map(|n| topology.node_id(n))
            .collect::<Result<Vec<_>>>()?;
        let mut events = Vec::with_capacity(self.events.len());
        for e in &self.events {
            let (at, action) = match e {
                EventSpec::InsertPe { at, pe } => (*at, ScenarioAction::InsertPe(pe_id(&topology, pe)?)),
                EventSpec::SetDf { at, pe, vni } => (
                    *at,
                    ScenarioAction::SetDf {
                        pe: pe_id(&topology, pe)?,
                        vni: *vni,
                    },
                ),
            };
            events.push(TimedEvent { at, action });
        }
        Ok(SimConfig {
            topology,
            networks,
            streams,
            algorithm: self.algorithm,
            election: ElectionParams {
                timer: self.election.timer,
                jitter_max: self.election.jitter,
                inter_pe_delay: point.inter_pe_delay,
                late_route: self.election.late_route,
            },
            controller: self.controller.clone(),
            initially_up,
            events,
            seed: point.seed,
        })
    }

    fn max_packet_bytes(&self) -> u32 {
        self.traffic.iter().map(|s| s.pkt_size).max().unwrap_or(0)
    }
}

fn pe_id(topo: &Topology, name: &str) -> Result<crate::topology::NodeId> {
    let id = topo.node_id(name).map_err(|_| Error::UnknownPe(name.to_string()))?;
    if topo.node(id).role != crate::topology::Role::Pe {
        return Err(Error::UnknownPe(name.to_string()));
    }
    Ok(id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunPoint {
    pub run: u32,
    pub inter_pe_delay: SimTime,
    pub bum_rate_bps: u64,
    pub seed: u64,
}

/// One output row: BUM accounting summed over the run's BUM streams.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub run: u32,
    pub algo: Algorithm,
    pub inter_pe_delay_ms: f64,
    pub bum_rate_mbps: f64,
    pub offered: u64,
    pub received_total: u64,
    pub received_unique: u64,
    pub duplicates: u64,
    pub lost: u64,
    pub loss_pct: f64,
    pub df_change_count: u64,
    /// Seconds.
    pub df_change_times: Vec<f64>,
}

impl ResultRow {
    pub const COLUMNS: [&'static str; 12] = [
        "run",
        "algo",
        "inter_pe_delay_ms",
        "bum_rate_mbps",
        "offered",
        "received_total",
        "received_unique",
        "duplicates",
        "lost",
        "loss_pct",
        "df_change_count",
        "df_change_times",
    ];

    pub fn from_report(point: &RunPoint, algo: Algorithm, report: &SimulationReport) -> ResultRow {
        let mut row = ResultRow {
            run: point.run,
            algo,
            inter_pe_delay_ms: point.inter_pe_delay.as_millis_f64(),
            bum_rate_mbps: point.bum_rate_bps as f64 / 1e6,
            offered: 0,
            received_total: 0,
            received_unique: 0,
            duplicates: 0,
            lost: 0,
            loss_pct: 0.0,
            df_change_count: report.df_changes.len() as u64,
            df_change_times: report.df_changes.iter().map(|c| c.at.as_secs_f64()).collect(),
        };
        for s in report.bum_streams() {
            let a = &s.account;
            row.offered += a.offered;
            row.received_total += a.received_total;
            row.received_unique += a.received_unique;
            row.duplicates += a.duplicates;
            row.lost += a.lost;
        }
        if row.offered > 0 {
            row.loss_pct = row.lost as f64 * 100.0 / row.offered as f64;
        }
        row
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub point: RunPoint,
    pub row: ResultRow,
    pub report: SimulationReport,
    pub violations: Vec<Violation>,
}

/// Simulates one sweep point and checks the run invariants.
pub fn run_point(config: &ScenarioConfig, point: &RunPoint) -> Result<RunOutcome> {
    let sim_config = config.sim_config(point)?;
    let mut sim = Simulation::new(sim_config)?;
    let report = sim.run_until(config.duration + config.drain)?;
    let violations = check_run(sim.topology(), config.algorithm, &report, config.max_packet_bytes());
    Ok(RunOutcome {
        point: *point,
        row: ResultRow::from_report(point, config.algorithm, &report),
        report,
        violations,
    })
}

/// Runs every sweep point in order.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Vec<RunOutcome>> {
    config.validate()?;
    config.expand().iter().map(|p| run_point(config, p)).collect()
}

pub const PRESETS: [&str; 2] = ["exp1", "exp2"];

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    match name {
        "exp1" => Ok(exp1()),
        "exp2" => Ok(exp2()),
        _ => Err(Error::UnknownPreset(name.to_string())),
    }
}

fn fig6_network(vni: Vni) -> NetworkSpec {
    NetworkSpec {
        vni,
        esi: FIG6_ESI.to_string(),
        evi: FIG6_EVI.to_string(),
        tors: vec!["TOR-1".to_string(), "TOR-2".to_string()],
    }
}

fn cbr(kind: StreamKind, src: &str, dst: &str, rate_bps: u64, start: SimTime, stop: SimTime) -> StreamSpec {
    StreamSpec {
        kind,
        src: src.to_string(),
        dst: dst.to_string(),
        rate_bps,
        pkt_size: 1500,
        start,
        stop,
        ramp: None,
        vni: None,
        jitter: false,
    }
}

/// New DF selection: PE-1 serves VNI 1001 alone until PE-2 is inserted at
/// 10 ms; BUM traffic is measured over 50 ms.
pub fn exp1() -> ScenarioConfig {
    const VNI: Vni = 1001;
    let duration = SimTime::from_millis(50);
    let mut bum = cbr(
        StreamKind::Bum,
        "BUM-Src",
        "Sink-1",
        75_000_000,
        SimTime::ZERO,
        duration,
    );
    bum.vni = Some(VNI);
    let t_insert = SimTime::from_millis(10);
    ScenarioConfig {
        algorithm: Algorithm::ServiceCarving,
        topology: TopologySpec::Preset("fig6".to_string()),
        networks: vec![fig6_network(VNI)],
        election: ElectionConfig {
            timer: SimTime::from_millis(10),
            jitter: SimTime::from_millis(5),
            inter_pe_delays: [0, 5, 10, 15, 20].into_iter().map(SimTime::from_millis).collect(),
            late_route: LateRoutePolicy::Timer,
            initially_up: vec!["PE-1".to_string()],
        },
        controller: ControllerConfig::default(),
        traffic: vec![bum],
        bum_rates_bps: vec![75_000_000, 150_000_000],
        runs: 10,
        seed: 1,
        duration,
        drain: SimTime::from_millis(100),
        events: vec![
            EventSpec::InsertPe {
                at: t_insert,
                pe: "PE-2".to_string(),
            },
            EventSpec::SetDf {
                at: t_insert,
                pe: "PE-2".to_string(),
                vni: VNI,
            },
        ],
    }
}

/// Tree-weight driven DF change: Source-1 loads the red tree's spine at
/// 850 Mbps, Source-2 ramps up on top of it from 5 s, and BUM traffic for
/// VNI 1000 starts alongside the ramp.
pub fn exp2() -> ScenarioConfig {
    const VNI: Vni = 1000;
    let duration = SimTime::from_secs(75);
    let ramp_start = SimTime::from_secs(5);
    // Background flows stand in for TCP and are not phase-locked to the
    // fabric's packet slots.
    let mut source1 = cbr(
        StreamKind::Background,
        "Source-1",
        "Sink-1",
        850_000_000,
        SimTime::ZERO,
        duration,
    );
    source1.jitter = true;
    let mut source2 = cbr(StreamKind::Background, "Source-2", "Sink-1", 0, ramp_start, duration);
    source2.jitter = true;
    source2.ramp = Some(Ramp {
        step_bps: 25_000_000,
        step_duration: SimTime::from_secs(10),
        max_bps: 150_000_000,
    });
    let mut bum = cbr(StreamKind::Bum, "BUM-Src", "Sink-1", 50_000_000, ramp_start, duration);
    bum.vni = Some(VNI);
    ScenarioConfig {
        algorithm: Algorithm::Sdn,
        topology: TopologySpec::Preset("fig6".to_string()),
        networks: vec![fig6_network(VNI)],
        election: ElectionConfig {
            timer: SimTime::from_secs(3),
            jitter: SimTime::from_millis(5),
            inter_pe_delays: vec![SimTime::ZERO],
            late_route: LateRoutePolicy::Timer,
            initially_up: vec!["PE-1".to_string(), "PE-2".to_string()],
        },
        controller: ControllerConfig::default(),
        traffic: vec![source1, source2, bum],
        bum_rates_bps: vec![50_000_000, 100_000_000],
        runs: 1,
        seed: 1,
        duration,
        drain: SimTime::from_millis(100),
        events: Vec::new(),
    }
}
