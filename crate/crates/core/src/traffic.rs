// SPDX-License-Identifier: Apache-2.0

//! Traffic programs (constant rate and stepped ramps) and sink-side
//! accounting of unique, duplicated and lost packets.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::time::SimTime;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StreamKind {
    /// Flooded on a logical network; enters the DC through the DF.
    Bum,
    /// Unicast along shortest paths.
    Background,
}

/// Stepped rate increase: plateau `p` runs at `min(rate + p * step, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ramp {
    pub step_bps: u64,
    pub step_duration: SimTime,
    pub max_bps: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSpec {
    pub kind: StreamKind,
    pub src: String,
    pub dst: String,
    /// Rate of the first plateau.
    pub rate_bps: u64,
    pub pkt_size: u32,
    pub start: SimTime,
    pub stop: SimTime,
    pub ramp: Option<Ramp>,
    pub vni: Option<u32>,
    /// Emit each packet at a uniformly random instant inside its slot rather
    /// than at the slot start. Counts per slot are unchanged.
    pub jitter: bool,
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidConfig {
            field: "traffic",
            reason,
        };
        if self.start >= self.stop {
            return Err(bad(format!(
                "stream {} -> {}: start must precede stop",
                self.src, self.dst
            )));
        }
        if self.pkt_size == 0 {
            return Err(bad(format!(
                "stream {} -> {}: packet size must be positive",
                self.src, self.dst
            )));
        }
        match (self.kind, self.vni) {
            (StreamKind::Bum, None) => return Err(bad(format!("BUM stream {} -> {} needs a vni", self.src, self.dst))),
            (StreamKind::Background, Some(_)) => {
                return Err(bad(format!(
                    "background stream {} -> {} cannot carry a vni",
                    self.src, self.dst
                )))
            }
            _ => {}
        }
        if let Some(r) = self.ramp {
            if r.step_duration == SimTime::ZERO {
                return Err(bad(format!(
                    "stream {} -> {}: ramp step duration must be positive",
                    self.src, self.dst
                )));
            }
            if self.rate_bps > r.max_bps {
                return Err(bad(format!(
                    "stream {} -> {}: ramp starts above its maximum",
                    self.src, self.dst
                )));
            }
        }
        Ok(())
    }
}

/// Emission schedule of one stream. A packet is offered in every complete
/// rate slot of a plateau: slot `k` starts at `plateau_start + k * gap` and
/// must end no later than the plateau end.
#[derive(Debug, Clone)]
pub struct Emitter {
    start: SimTime,
    stop: SimTime,
    pkt_bits: u128,
    base_rate: u64,
    ramp: Option<Ramp>,
    plateau: u64,
    slot: u64,
    seq: u64,
    rng: Option<ChaCha8Rng>,
}

impl Emitter {
    pub fn new(spec: &StreamSpec) -> Self {
        Emitter {
            start: spec.start,
            stop: spec.stop,
            pkt_bits: spec.pkt_size as u128 * 8,
            base_rate: spec.rate_bps,
            ramp: spec.ramp,
            plateau: 0,
            slot: 0,
            seq: 0,
            rng: None,
        }
    }

    /// Like [`Emitter::new`], drawing in-slot offsets from `seed` when the
    /// stream asks for jitter.
    pub fn seeded(spec: &StreamSpec, seed: u64) -> Self {
        let mut e = Emitter::new(spec);
        if spec.jitter {
            e.rng = Some(ChaCha8Rng::seed_from_u64(seed));
        }
        e
    }

    pub fn rate_of_plateau(&self, plateau: u64) -> u64 {
        match self.ramp {
            None => self.base_rate,
            Some(r) => self
                .base_rate
                .saturating_add(r.step_bps.saturating_mul(plateau))
                .min(r.max_bps),
        }
    }

    fn plateau_bounds(&self, plateau: u64) -> (SimTime, SimTime) {
        match self.ramp {
            None if plateau == 0 => (self.start, self.stop),
            None => (self.stop, self.stop),
            Some(r) => {
                let d = r.step_duration.as_nanos();
                let begin = SimTime::from_nanos(self.start.as_nanos().saturating_add(d.saturating_mul(plateau)));
                let end = SimTime::from_nanos(begin.as_nanos().saturating_add(d));
                (begin.min(self.stop), end.min(self.stop))
            }
        }
    }

    fn slot_offset(&self, slot: u64, rate: u64) -> u64 {
        (slot as u128 * self.pkt_bits * 1_000_000_000 / rate as u128) as u64
    }

    /// Emission time and sequence number of the next packet, or `None` once
    /// the stream is exhausted.
    pub fn next_emission(&mut self) -> Option<(SimTime, u64)> {
        loop {
            let (begin, end) = self.plateau_bounds(self.plateau);
            if begin >= self.stop {
                return None;
            }
            let rate = self.rate_of_plateau(self.plateau);
            if rate > 0 {
                let at = begin + SimTime::from_nanos(self.slot_offset(self.slot, rate));
                let slot_end = begin + SimTime::from_nanos(self.slot_offset(self.slot + 1, rate));
                // Exact test: (slot + 1) * bits / rate <= end - begin.
                let fits = (self.slot as u128 + 1) * self.pkt_bits * 1_000_000_000
                    <= (end - begin).as_nanos() as u128 * rate as u128;
                if fits {
                    let at = match &mut self.rng {
                        Some(rng) => at + SimTime::from_nanos(rng.gen_range(0..(slot_end - at).as_nanos().max(1))),
                        None => at,
                    };
                    self.slot += 1;
                    let seq = self.seq;
                    self.seq += 1;
                    return Some((at, seq));
                }
            }
            self.plateau += 1;
            self.slot = 0;
        }
    }

    /// Packets emitted so far.
    pub fn emitted(&self) -> u64 {
        self.seq
    }
}

/// End-of-run accounting for one stream, as seen by its sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SinkAccount {
    pub offered: u64,
    pub received_total: u64,
    pub received_unique: u64,
    pub duplicates: u64,
    /// Never reached the sink; at least one copy hit a full queue.
    pub dropped: u64,
    /// Never reached the sink; every copy was discarded by a PE.
    pub blocked: u64,
    pub in_flight: u64,
    /// Every offered packet the sink has not seen and that is no longer in
    /// flight (`dropped + blocked`, plus packets whose copies were all
    /// absorbed elsewhere).
    pub lost: u64,
}

impl SinkAccount {
    pub fn loss_pct(&self) -> f64 {
        if self.offered == 0 {
            0.0
        } else {
            self.lost as f64 * 100.0 / self.offered as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct SeqFate {
    delivered: u16,
    in_flight: u16,
    dropped: bool,
    blocked: bool,
}

/// Copy-level counters; every created copy ends in exactly one bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CopyCounters {
    pub created: u64,
    pub delivered: u64,
    pub absorbed: u64,
    pub dropped: u64,
    pub blocked: u64,
}

impl CopyCounters {
    pub fn in_flight(&self) -> u64 {
        self.created - self.delivered - self.absorbed - self.dropped - self.blocked
    }
}

/// Per-stream bookkeeping of packet copies. Flooded streams track every
/// sequence number so that duplicates can be told apart from unique
/// deliveries; unicast streams keep counters only.
#[derive(Debug, Clone)]
pub struct StreamLedger {
    per_seq: Option<Vec<SeqFate>>,
    offered: u64,
    copies: CopyCounters,
    last_seq: BTreeMap<u64, u64>,
    out_of_order: u64,
}

impl StreamLedger {
    pub fn new(track_sequences: bool) -> Self {
        StreamLedger {
            per_seq: track_sequences.then(Vec::new),
            offered: 0,
            copies: CopyCounters::default(),
            last_seq: BTreeMap::new(),
            out_of_order: 0,
        }
    }

    fn fate(&mut self, seq: u64) -> Option<&mut SeqFate> {
        self.per_seq.as_mut().and_then(|v| v.get_mut(seq as usize))
    }

    /// A new packet left its source.
    pub fn offer(&mut self, seq: u64) {
        self.offered += 1;
        self.copies.created += 1;
        if let Some(v) = self.per_seq.as_mut() {
            debug_assert_eq!(v.len() as u64, seq);
            v.push(SeqFate {
                in_flight: 1,
                ..SeqFate::default()
            });
        }
    }

    /// One in-flight copy was replicated into `extra` more copies.
    pub fn replicate(&mut self, seq: u64, extra: u64) {
        self.copies.created += extra;
        if let Some(f) = self.fate(seq) {
            f.in_flight += extra as u16;
        }
    }

    /// A copy reached the stream's sink. `path` identifies the route it took
    /// so that per-path FIFO order can be checked.
    pub fn record_delivery(&mut self, seq: u64, path: u64) {
        self.copies.delivered += 1;
        if let Some(f) = self.fate(seq) {
            f.in_flight -= 1;
            f.delivered = f.delivered.saturating_add(1);
        }
        match self.last_seq.insert(path, seq) {
            Some(prev) if prev >= seq => self.out_of_order += 1,
            _ => {}
        }
    }

    /// A copy terminated somewhere other than the sink (e.g. a leaf with no
    /// interested host).
    pub fn absorb(&mut self, seq: u64) {
        self.copies.absorbed += 1;
        if let Some(f) = self.fate(seq) {
            f.in_flight -= 1;
        }
    }

    pub fn drop_copy(&mut self, seq: u64) {
        self.copies.dropped += 1;
        if let Some(f) = self.fate(seq) {
            f.in_flight -= 1;
            f.dropped = true;
        }
    }

    pub fn block_copy(&mut self, seq: u64) {
        self.copies.blocked += 1;
        if let Some(f) = self.fate(seq) {
            f.in_flight -= 1;
            f.blocked = true;
        }
    }

    pub fn copies(&self) -> CopyCounters {
        self.copies
    }

    /// Deliveries that arrived with a sequence number not above the previous
    /// one on the same path.
    pub fn out_of_order(&self) -> u64 {
        self.out_of_order
    }

    pub fn account(&self) -> SinkAccount {
        let mut a = SinkAccount {
            offered: self.offered,
            received_total: self.copies.delivered,
            ..SinkAccount::default()
        };
        match &self.per_seq {
            Some(fates) => {
                for f in fates {
                    if f.delivered > 0 {
                        a.received_unique += 1;
                    } else if f.in_flight > 0 {
                        a.in_flight += 1;
                    } else if f.dropped {
                        a.dropped += 1;
                    } else if f.blocked {
                        a.blocked += 1;
                    }
                }
            }
            None => {
                a.received_unique = self.copies.delivered;
                a.dropped = self.copies.dropped;
                a.blocked = self.copies.blocked;
                a.in_flight = self.copies.in_flight();
            }
        }
        a.duplicates = a.received_total - a.received_unique;
        a.lost = a.offered - a.received_unique - a.in_flight;
        a
    }
}
