// SPDX-License-Identifier: Apache-2.0

use alloc::string::String;

use crate::time::SimTime;
use crate::topology::LinkId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("link {from} -> {to} references unknown node `{missing}`")]
    DanglingLink { from: String, to: String, missing: String },
    #[error("link {from} -> {to} has no reverse link")]
    MissingReverseLink { from: String, to: String },
    #[error("invalid link {from} -> {to}: {reason}")]
    InvalidLink {
        from: String,
        to: String,
        reason: &'static str,
    },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown topology preset `{0}`")]
    UnknownTopologyPreset(String),
    #[error("invalid logical network {vni}: {reason}")]
    InvalidNetwork { vni: u32, reason: String },
    #[error("no multicast tree exists for vni {vni}")]
    NoCandidateTree { vni: u32 },
    #[error("DF election needs at least one candidate")]
    EmptyCandidates,
    #[error("no link statistics for link {0}")]
    MissingLinkStats(LinkId),
    #[error("cannot schedule an event at {at} before the current time {now}")]
    ScheduleInPast { at: SimTime, now: SimTime },
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("`{0}` is not a PE of the requested EVPN instance")]
    UnknownPe(String),
    #[error("unknown EVPN instance `{0}`")]
    UnknownEvi(String),
    #[error("invalid scenario field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}
