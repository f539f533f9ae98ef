//! Trace audits. Each audit replays reservation-table mutations from the
//! trace and checks one protocol property, collecting counterexamples.

use super::trace::{Event, LossReason, Phase, Procedure, RemoveReason, Trace, TraceEvent};
use crate::mac::{CfSlot, ControlKind, ReservationKind};
use crate::topology::{Network, StationId, TopologyError};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// Counterexamples kept per verdict; the violation count is exact.
const MAX_COUNTEREXAMPLES: usize = 20;

/// Lemma 1 bound on interferer hop distance.
const MAX_INTERFERER_HOPS: u32 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("malformed trace at event {index}: {message}")]
    Malformed { index: usize, message: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub frame: u64,
    pub slot: u32,
    pub phase: Phase,
    pub station: Option<StationId>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub passed: bool,
    pub checked: u64,
    pub violations: u64,
    pub first_failure_frame: Option<u64>,
    pub counterexamples: Vec<Counterexample>,
}

impl Default for Verdict {
    fn default() -> Self {
        Self {
            passed: true,
            checked: 0,
            violations: 0,
            first_failure_frame: None,
            counterexamples: Vec::new(),
        }
    }
}

impl Verdict {
    fn fail(&mut self, ev: &TraceEvent, description: String) {
        self.passed = false;
        self.violations += 1;
        self.first_failure_frame.get_or_insert(ev.frame);
        if self.counterexamples.len() < MAX_COUNTEREXAMPLES {
            self.counterexamples.push(Counterexample {
                frame: ev.frame,
                slot: ev.slot,
                phase: ev.phase,
                station: ev.station,
                description,
            });
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed {
            write!(f, "PASS ({} checks)", self.checked)
        } else {
            write!(
                f,
                "FAIL ({} of {} checks, first at frame {})",
                self.violations,
                self.checked,
                self.first_failure_frame.unwrap_or_default()
            )?;
            if let Some(c) = self.counterexamples.first() {
                write!(f, ": {}", c.description)?;
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaVerdicts {
    /// Control collisions only involve interferers a few hops away.
    pub lemma1: Verdict,
    /// Grid slotting leaves no control collisions.
    pub lemma2: Verdict,
    /// Handshakes leave the neighbourhood's tables in agreement.
    pub lemma3: Verdict,
}

impl LemmaVerdicts {
    pub fn all_passed(&self) -> bool {
        self.lemma1.passed && self.lemma2.passed && self.lemma3.passed
    }
}

impl fmt::Display for LemmaVerdicts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lemma 1 (interferer hop distance): {}", self.lemma1)?;
        writeln!(f, "lemma 2 (no control collisions): {}", self.lemma2)?;
        writeln!(f, "lemma 3 (table agreement): {}", self.lemma3)
    }
}

type Key = (CfSlot, StationId, StationId, ReservationKind);

/// Reservation tables rebuilt from `rt_insert` / `rt_remove` events.
#[derive(Default)]
struct Replay {
    tables: BTreeMap<StationId, BTreeSet<Key>>,
}

impl Replay {
    fn apply(&mut self, index: usize, ev: &TraceEvent) -> Result<(), AuditError> {
        let malformed = |message: String| AuditError::Malformed { index, message };
        match &ev.event {
            Event::RtInsert { cf_slot, tx, rx, kind } => {
                let st = ev.station.ok_or_else(|| malformed("rt_insert without station".into()))?;
                if !self.tables.entry(st).or_default().insert((*cf_slot, *tx, *rx, *kind)) {
                    return Err(malformed(format!("station {st} inserts slot {cf_slot} twice")));
                }
            }
            Event::RtRemove {
                cf_slot, tx, rx, kind, ..
            } => {
                let st = ev.station.ok_or_else(|| malformed("rt_remove without station".into()))?;
                if !self.tables.entry(st).or_default().remove(&(*cf_slot, *tx, *rx, *kind)) {
                    return Err(malformed(format!("station {st} removes absent slot {cf_slot}")));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn holds(&self, st: StationId, slot: CfSlot, tx: StationId, rx: StationId) -> bool {
        self.tables
            .get(&st)
            .is_some_and(|t| t.iter().any(|k| k.0 == slot && k.1 == tx && k.2 == rx))
    }

    fn own_in(&self, st: StationId, slot: CfSlot) -> Vec<(StationId, StationId)> {
        self.tables
            .get(&st)
            .map(|t| {
                t.iter()
                    .filter(|k| k.0 == slot && (k.1 == st || k.2 == st))
                    .map(|k| (k.1, k.2))
                    .collect()
            })
            .unwrap_or_default()
    }

    fn datagram_holders(&self) -> Vec<(StationId, CfSlot)> {
        self.tables
            .iter()
            .flat_map(|(s, t)| {
                t.iter()
                    .filter(|k| k.3 == ReservationKind::Datagram)
                    .map(move |k| (*s, k.0))
            })
            .collect()
    }
}

/// Basic shape checks shared by every audit; returns the interference
/// multiplier recorded at run start.
fn preflight(trace: &Trace, net: Option<&Network>) -> Result<f64, AuditError> {
    let first = trace.events.first().ok_or(AuditError::Malformed {
        index: 0,
        message: "empty trace".into(),
    })?;
    let Event::RunStart {
        interference_multiplier, ..
    } = first.event
    else {
        return Err(AuditError::Malformed {
            index: 0,
            message: "trace does not open with run_start".into(),
        });
    };
    let mut last = 0u64;
    for (i, ev) in trace.events.iter().enumerate() {
        if ev.frame < last {
            return Err(AuditError::Malformed {
                index: i,
                message: format!("frame {} after frame {last}", ev.frame),
            });
        }
        last = ev.frame;
        if let (Some(net), Some(st)) = (net, ev.station) {
            if !net.contains(st) {
                return Err(AuditError::Malformed {
                    index: i,
                    message: format!("unknown station {st}"),
                });
            }
        }
    }
    Ok(interference_multiplier)
}

fn in_range(net: &Network, from: StationId, to: StationId, multiplier: f64) -> Result<bool, TopologyError> {
    let s = net.station(from)?;
    Ok(net.distance(from, to)? <= s.rf_range * multiplier)
}

fn heads_within(net: &Network, from: StationId, multiplier: f64) -> Result<BTreeSet<StationId>, TopologyError> {
    let mut out = BTreeSet::new();
    for h in net.cluster_heads() {
        if h.id != from && in_range(net, from, h.id, multiplier)? {
            out.insert(h.id);
        }
    }
    Ok(out)
}

/// Replays the trace against the three reservation lemmas.
pub fn audit_lemmas(trace: &Trace, net: &Network) -> Result<LemmaVerdicts, AuditError> {
    preflight(trace, Some(net))?;
    let mut l1 = Verdict::default();
    let mut l2 = Verdict::default();
    let mut l3 = Verdict::default();
    let mut hops: BTreeMap<StationId, BTreeMap<StationId, u32>> = BTreeMap::new();
    let mut replay = Replay::default();
    for (i, ev) in trace.events.iter().enumerate() {
        replay.apply(i, ev)?;
        match &ev.event {
            Event::CtrlTx { message, .. } => {
                l2.checked += 1;
                if matches!(message.kind, ControlKind::Cr | ControlKind::Cc) {
                    let own = net.rp_slot(message.from)?;
                    if ev.phase != Phase::Rp || ev.slot != own {
                        l2.fail(
                            ev,
                            format!(
                                "station {} started a {} in slot {} but owns slot {own}",
                                message.from, message.kind, ev.slot
                            ),
                        );
                    }
                }
            }
            Event::CtrlLost {
                kind,
                from,
                reason: LossReason::Collision | LossReason::HalfDuplex,
                interferers,
                ..
            } => {
                l2.fail(
                    ev,
                    format!(
                        "{kind} from {from} collided at {} with {:?}",
                        ev.station.map(|s| s.to_string()).unwrap_or_default(),
                        interferers.iter().map(|s| s.0).collect::<Vec<_>>()
                    ),
                );
                if !hops.contains_key(from) {
                    hops.insert(*from, net.rf_hop_distances(*from)?);
                }
                let table = &hops[from];
                for i in interferers {
                    l1.checked += 1;
                    match table.get(i) {
                        Some(h) if (1..=MAX_INTERFERER_HOPS).contains(h) => {}
                        other => l1.fail(
                            ev,
                            format!("interferer {i} of {kind} from {from} is {other:?} hops away"),
                        ),
                    }
                }
            }
            Event::HandshakeDone {
                procedure,
                tx,
                rx,
                slots,
                ..
            } => {
                l3.checked += 1;
                let mut informed = heads_within(net, *tx, 1.0)?;
                informed.extend(heads_within(net, *rx, 1.0)?);
                informed.insert(*tx);
                informed.insert(*rx);
                let mut wrong = Vec::new();
                for z in informed {
                    for &s in slots {
                        let held = replay.holds(z, s, *tx, *rx);
                        let ok = match procedure {
                            Procedure::Establish => held,
                            Procedure::Cancel => !held,
                        };
                        if !ok {
                            wrong.push((z, s));
                        }
                    }
                }
                if !wrong.is_empty() {
                    let what = match procedure {
                        Procedure::Establish => "missing",
                        Procedure::Cancel => "still holding",
                    };
                    l3.fail(
                        ev,
                        format!(
                            "after {procedure:?} {tx}->{rx} stations {what} entries: {:?}",
                            wrong.iter().map(|(z, s)| (z.0, *s)).collect::<Vec<_>>()
                        ),
                    );
                }
            }
            _ => {}
        }
    }
    Ok(LemmaVerdicts {
        lemma1: l1,
        lemma2: l2,
        lemma3: l3,
    })
}

/// Checks, at every data transmission, that both ends and every station
/// that could interfere agree on the reservation and hold no competing one.
pub fn audit_rt_consistency(trace: &Trace, net: &Network) -> Result<Verdict, AuditError> {
    let m = preflight(trace, Some(net))?;
    let mut v = Verdict::default();
    let mut replay = Replay::default();
    for (i, ev) in trace.events.iter().enumerate() {
        replay.apply(i, ev)?;
        let Event::DataTx { to, .. } = &ev.event else { continue };
        let x = ev.station.ok_or(AuditError::Malformed {
            index: i,
            message: "data_tx without station".into(),
        })?;
        let slot = ev.slot as CfSlot;
        v.checked += 1;
        let mut problems = Vec::new();
        for end in [x, *to] {
            if replay.own_in(end, slot) != vec![(x, *to)] {
                problems.push(format!("station {end} holds {:?}", replay.own_in(end, slot)));
            }
        }
        for h in net.cluster_heads() {
            let z = h.id;
            if z == x || z == *to {
                continue;
            }
            if !(in_range(net, x, z, m)? || in_range(net, z, *to, m)?) {
                continue;
            }
            if !replay.holds(z, slot, x, *to) {
                problems.push(format!("station {z} lacks the entry"));
            }
            if !replay.own_in(z, slot).is_empty() {
                problems.push(format!("station {z} has its own reservation"));
            }
        }
        if !problems.is_empty() {
            v.fail(ev, format!("slot {slot} {x}->{to}: {}", problems.join("; ")));
        }
    }
    Ok(v)
}

/// Datagram entries die at every frame boundary; real-time entries leave a
/// table only on a cancel or its acknowledgment.
pub fn audit_reservation_lifetimes(trace: &Trace) -> Result<Verdict, AuditError> {
    preflight(trace, None)?;
    let mut v = Verdict::default();
    let mut replay = Replay::default();
    let mut frame = 0u64;
    let mut last_rx: BTreeMap<StationId, (u64, u32, ControlKind)> = BTreeMap::new();
    for (i, ev) in trace.events.iter().enumerate() {
        let boundary = ev.frame > frame || matches!(ev.event, Event::RunEnd { .. });
        if boundary {
            v.checked += 1;
            let left = replay.datagram_holders();
            if !left.is_empty() {
                v.fail(
                    ev,
                    format!(
                        "datagram entries survived frame {frame}: {:?}",
                        left.iter().map(|(s, k)| (s.0, *k)).collect::<Vec<_>>()
                    ),
                );
            }
            frame = ev.frame;
        }
        replay.apply(i, ev)?;
        match &ev.event {
            Event::CtrlRx { kind, .. } => {
                if let Some(st) = ev.station {
                    last_rx.insert(st, (ev.frame, ev.slot, *kind));
                }
            }
            Event::RtRemove {
                kind: ReservationKind::RealTime,
                reason,
                cf_slot,
                ..
            } => {
                v.checked += 1;
                let st = ev.station.unwrap_or(StationId(u32::MAX));
                let by_cancel = matches!(
                    last_rx.get(&st),
                    Some(&(f, s, ControlKind::Cc | ControlKind::CcAck)) if f == ev.frame && s == ev.slot
                );
                if *reason != RemoveReason::Cancelled || ev.phase != Phase::Rp || !by_cancel {
                    v.fail(
                        ev,
                        format!("real-time slot {cf_slot} left station {st} without a cancel handshake"),
                    );
                }
            }
            _ => {}
        }
    }
    Ok(v)
}
