// SPDX-License-Identifier: Apache-2.0

//! TOML scenario files.
//!
//! ```toml
//! [scenario]
//! algorithm = "handshake"
//! runs = 10
//! seed = 1
//! duration_s = 0.05
//! bum_rates_mbps = [75, 150]
//!
//! [topology]
//! preset = "fig6"
//!
//! [[network]]
//! vni = 1001
//! esi = "ESI-1"
//! evi = "EVI-1"
//! tors = ["TOR-1", "TOR-2"]
//!
//! [election]
//! timer_ms = 10
//! jitter_ms = 5
//! inter_pe_delays_ms = [0, 5, 10, 15, 20]
//! initially_up = ["PE-1"]
//!
//! [[traffic]]
//! kind = "bum"
//! src = "BUM-Src"
//! dst = "Sink-1"
//! rate_mbps = 75
//! stop_s = 0.05
//! vni = 1001
//!
//! [[event]]
//! kind = "insert_pe"
//! at_ms = 10
//! pe = "PE-2"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use dfsim_core::controller::ControllerConfig;
use dfsim_core::election::LateRoutePolicy;
use dfsim_core::engine::Algorithm;
use dfsim_core::scenario::{ElectionConfig, EventSpec, NetworkSpec, ScenarioConfig};
use dfsim_core::topology::{LinkSpec, NodeSpec, Role, SegmentSpec, TopologySpec};
use dfsim_core::traffic::{Ramp, StreamKind, StreamSpec};
use dfsim_core::SimTime;

use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: ScenarioSection,
    pub topology: TopologySection,
    #[serde(default, rename = "network")]
    pub networks: Vec<NetworkSection>,
    pub election: ElectionSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traffic: Vec<StreamSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty", rename = "event")]
    pub events: Vec<EventSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub algorithm: String,
    pub runs: u32,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_drain")]
    pub drain_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bum_rates_mbps: Vec<f64>,
}

fn default_drain() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty", rename = "node")]
    pub nodes: Vec<NodeSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty", rename = "link")]
    pub links: Vec<LinkSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty", rename = "segment")]
    pub segments: Vec<SegmentSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub name: String,
    /// One of `pe`, `spine`, `tor`, `host`, `core`.
    pub role: String,
}

/// A link and, unless `bidirectional = false`, its reverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub from: String,
    pub to: String,
    pub bandwidth_mbps: f64,
    pub delay_ms: f64,
    #[serde(default = "default_queue")]
    pub queue: u32,
    #[serde(default)]
    pub congested: bool,
    #[serde(default = "yes")]
    pub bidirectional: bool,
}

fn default_queue() -> u32 {
    100
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    pub esi: String,
    pub pes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub vni: u32,
    pub esi: String,
    pub evi: String,
    pub tors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectionSection {
    pub timer_ms: f64,
    pub jitter_ms: f64,
    pub inter_pe_delays_ms: Vec<f64>,
    /// `timer` or `immediate`.
    #[serde(default = "default_late_route")]
    pub late_route: String,
    pub initially_up: Vec<String>,
}

fn default_late_route() -> String {
    "timer".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub poll_interval_s: f64,
    pub congestion_threshold: f64,
    pub hold_polls: u32,
    pub oob_delay_ms: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        ControllerSection::from_config(&ControllerConfig::default())
    }
}

impl ControllerSection {
    fn from_config(c: &ControllerConfig) -> Self {
        ControllerSection {
            poll_interval_s: c.poll_interval.as_secs_f64(),
            congestion_threshold: c.congestion_threshold,
            hold_polls: c.hold_polls,
            oob_delay_ms: c.oob_delay.as_millis_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    /// `bum` or `background`.
    pub kind: String,
    pub src: String,
    pub dst: String,
    pub rate_mbps: f64,
    #[serde(default = "default_pkt_size")]
    pub pkt_size: u32,
    #[serde(default)]
    pub start_s: f64,
    pub stop_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vni: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp: Option<RampSection>,
    #[serde(default)]
    pub jitter: bool,
}

fn default_pkt_size() -> u32 {
    1500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampSection {
    pub step_mbps: f64,
    pub step_duration_s: f64,
    pub max_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSection {
    InsertPe { at_ms: f64, pe: String },
    SetDf { at_ms: f64, pe: String, vni: u32 },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Core(dfsim_core::Error::InvalidConfig {
        field,
        reason: reason.into(),
    })
}

fn non_negative(field: &'static str, v: f64) -> Result<f64, Error> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(invalid(field, format!("{v} is not a non-negative number")))
    }
}

fn secs(field: &'static str, v: f64) -> Result<SimTime, Error> {
    Ok(SimTime::from_secs_f64(non_negative(field, v)?))
}

fn millis(field: &'static str, v: f64) -> Result<SimTime, Error> {
    Ok(SimTime::from_nanos((non_negative(field, v)? * 1e6).round() as u64))
}

fn mbps(field: &'static str, v: f64) -> Result<u64, Error> {
    Ok((non_negative(field, v)? * 1e6).round() as u64)
}

fn role(name: &str) -> Result<Role, Error> {
    Ok(match name {
        "pe" => Role::Pe,
        "spine" => Role::Spine,
        "tor" => Role::Tor,
        "host" => Role::Host,
        "core" => Role::Core,
        other => return Err(invalid("topology.node.role", format!("unknown role `{other}`"))),
    })
}

fn role_name(r: Role) -> &'static str {
    match r {
        Role::Pe => "pe",
        Role::Spine => "spine",
        Role::Tor => "tor",
        Role::Host => "host",
        Role::Core => "core",
    }
}

pub fn parse_algorithm(name: &str) -> Result<Algorithm, Error> {
    Algorithm::from_name(name).ok_or_else(|| {
        invalid(
            "scenario.algorithm",
            format!("unknown algorithm `{name}` (expected service_carving, handshake or sdn)"),
        )
    })
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, Error> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    pub fn into_config(self) -> Result<ScenarioConfig, Error> {
        let s = self.scenario;
        let topology = match (self.topology.preset, self.topology.nodes.is_empty()) {
            (Some(p), true) if self.topology.links.is_empty() => TopologySpec::Preset(p),
            (Some(_), _) => return Err(invalid("topology", "give either a preset or nodes and links, not both")),
            (None, _) => {
                let nodes = self
                    .topology
                    .nodes
                    .iter()
                    .map(|n| {
                        Ok(NodeSpec {
                            name: n.name.clone(),
                            role: role(&n.role)?,
                        })
                    })
                    .collect::<Result<Vec<_>, Error>>()?;
                let mut links = Vec::new();
                for l in &self.topology.links {
                    let mut spec = LinkSpec::new(
                        &l.from,
                        &l.to,
                        mbps("topology.link.bandwidth_mbps", l.bandwidth_mbps)?,
                        millis("topology.link.delay_ms", l.delay_ms)?,
                        l.queue,
                    );
                    spec.permanently_congested = l.congested;
                    if l.bidirectional {
                        links.push(spec.reversed());
                    }
                    links.push(spec);
                }
                let segments = self
                    .topology
                    .segments
                    .iter()
                    .map(|g| SegmentSpec {
                        esi: g.esi.clone(),
                        pes: g.pes.clone(),
                    })
                    .collect();
                TopologySpec::Explicit { nodes, links, segments }
            }
        };

        let networks = self
            .networks
            .into_iter()
            .map(|n| NetworkSpec {
                vni: n.vni,
                esi: n.esi,
                evi: n.evi,
                tors: n.tors,
            })
            .collect();

        let e = self.election;
        let late_route = match e.late_route.as_str() {
            "timer" => LateRoutePolicy::Timer,
            "immediate" => LateRoutePolicy::Immediate,
            other => return Err(invalid("election.late_route", format!("unknown policy `{other}`"))),
        };
        let election = ElectionConfig {
            timer: millis("election.timer_ms", e.timer_ms)?,
            jitter: millis("election.jitter_ms", e.jitter_ms)?,
            inter_pe_delays: e
                .inter_pe_delays_ms
                .iter()
                .map(|d| millis("election.inter_pe_delays_ms", *d))
                .collect::<Result<_, _>>()?,
            late_route,
            initially_up: e.initially_up,
        };

        let c = self.controller;
        let controller = ControllerConfig {
            poll_interval: secs("controller.poll_interval_s", c.poll_interval_s)?,
            congestion_threshold: c.congestion_threshold,
            hold_polls: c.hold_polls,
            oob_delay: millis("controller.oob_delay_ms", c.oob_delay_ms)?,
        };

        let mut traffic = Vec::with_capacity(self.traffic.len());
        for t in self.traffic {
            let kind = match t.kind.as_str() {
                "bum" => StreamKind::Bum,
                "background" => StreamKind::Background,
                other => return Err(invalid("traffic.kind", format!("unknown stream kind `{other}`"))),
            };
            let ramp = match t.ramp {
                None => None,
                Some(r) => Some(Ramp {
                    step_bps: mbps("traffic.ramp.step_mbps", r.step_mbps)?,
                    step_duration: secs("traffic.ramp.step_duration_s", r.step_duration_s)?,
                    max_bps: mbps("traffic.ramp.max_mbps", r.max_mbps)?,
                }),
            };
            traffic.push(StreamSpec {
                kind,
                src: t.src,
                dst: t.dst,
                rate_bps: mbps("traffic.rate_mbps", t.rate_mbps)?,
                pkt_size: t.pkt_size,
                start: secs("traffic.start_s", t.start_s)?,
                stop: secs("traffic.stop_s", t.stop_s)?,
                ramp,
                vni: t.vni,
                jitter: t.jitter,
            });
        }

        let events = self
            .events
            .into_iter()
            .map(|ev| {
                Ok(match ev {
                    EventSection::InsertPe { at_ms, pe } => EventSpec::InsertPe {
                        at: millis("event.at_ms", at_ms)?,
                        pe,
                    },
                    EventSection::SetDf { at_ms, pe, vni } => EventSpec::SetDf {
                        at: millis("event.at_ms", at_ms)?,
                        pe,
                        vni,
                    },
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;

        let config = ScenarioConfig {
            algorithm: parse_algorithm(&s.algorithm)?,
            topology,
            networks,
            election,
            controller,
            traffic,
            bum_rates_bps: s
                .bum_rates_mbps
                .iter()
                .map(|r| mbps("scenario.bum_rates_mbps", *r))
                .collect::<Result<_, _>>()?,
            runs: s.runs,
            seed: s.seed,
            duration: secs("scenario.duration_s", s.duration_s)?,
            drain: secs("scenario.drain_s", s.drain_s)?,
            events,
        };
        config.validate()?;
        Ok(config)
    }

    /// The file form of `config`. Converting back yields `config` again.
    pub fn from_config(config: &ScenarioConfig) -> Self {
        let topology = match &config.topology {
            TopologySpec::Preset(p) => TopologySection {
                preset: Some(p.clone()),
                nodes: Vec::new(),
                links: Vec::new(),
                segments: Vec::new(),
            },
            TopologySpec::Explicit { nodes, links, segments } => TopologySection {
                preset: None,
                nodes: nodes
                    .iter()
                    .map(|n| NodeSection {
                        name: n.name.clone(),
                        role: role_name(n.role).to_string(),
                    })
                    .collect(),
                links: links
                    .iter()
                    .map(|l| LinkSection {
                        from: l.from.clone(),
                        to: l.to.clone(),
                        bandwidth_mbps: l.bandwidth_bps as f64 / 1e6,
                        delay_ms: l.prop_delay.as_millis_f64(),
                        queue: l.queue_capacity,
                        congested: l.permanently_congested,
                        bidirectional: false,
                    })
                    .collect(),
                segments: segments
                    .iter()
                    .map(|g| SegmentSection {
                        esi: g.esi.clone(),
                        pes: g.pes.clone(),
                    })
                    .collect(),
            },
        };
        let e = &config.election;
        ScenarioFile {
            scenario: ScenarioSection {
                algorithm: config.algorithm.name().to_string(),
                runs: config.runs,
                seed: config.seed,
                duration_s: config.duration.as_secs_f64(),
                drain_s: config.drain.as_secs_f64(),
                bum_rates_mbps: config.bum_rates_bps.iter().map(|r| *r as f64 / 1e6).collect(),
            },
            topology,
            networks: config
                .networks
                .iter()
                .map(|n| NetworkSection {
                    vni: n.vni,
                    esi: n.esi.clone(),
                    evi: n.evi.clone(),
                    tors: n.tors.clone(),
                })
                .collect(),
            election: ElectionSection {
                timer_ms: e.timer.as_millis_f64(),
                jitter_ms: e.jitter.as_millis_f64(),
                inter_pe_delays_ms: e.inter_pe_delays.iter().map(|d| d.as_millis_f64()).collect(),
                late_route: match e.late_route {
                    LateRoutePolicy::Timer => "timer",
                    LateRoutePolicy::Immediate => "immediate",
                }
                .to_string(),
                initially_up: e.initially_up.clone(),
            },
            controller: ControllerSection::from_config(&config.controller),
            traffic: config
                .traffic
                .iter()
                .map(|t| StreamSection {
                    kind: match t.kind {
                        StreamKind::Bum => "bum",
                        StreamKind::Background => "background",
                    }
                    .to_string(),
                    src: t.src.clone(),
                    dst: t.dst.clone(),
                    rate_mbps: t.rate_bps as f64 / 1e6,
                    pkt_size: t.pkt_size,
                    start_s: t.start.as_secs_f64(),
                    stop_s: t.stop.as_secs_f64(),
                    vni: t.vni,
                    ramp: t.ramp.map(|r| RampSection {
                        step_mbps: r.step_bps as f64 / 1e6,
                        step_duration_s: r.step_duration.as_secs_f64(),
                        max_mbps: r.max_bps as f64 / 1e6,
                    }),
                    jitter: t.jitter,
                })
                .collect(),
            events: config
                .events
                .iter()
                .map(|ev| match ev {
                    EventSpec::InsertPe { at, pe } => EventSection::InsertPe {
                        at_ms: at.as_millis_f64(),
                        pe: pe.clone(),
                    },
                    EventSpec::SetDf { at, pe, vni } => EventSection::SetDf {
                        at_ms: at.as_millis_f64(),
                        pe: pe.clone(),
                        vni: *vni,
                    },
                })
                .collect(),
        }
    }
}
