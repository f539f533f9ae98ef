use super::channel::{Channel, Reception};
use super::energy::{EnergyMeter, SlotAction};
use super::trace::{BackoffCause, Event, FlowQueued, LossReason, Phase, Procedure, RemoveReason, Slotting, Trace};
use super::{EngineError, Fault, SimConfig};
use crate::mac::{
    BackoffOutcome, CfSlot, ControlKind, ControlMessage, Initiation, MacStation, Micros, RemovalCause,
    ReservationKind, ReservationRequest, RtChange, SlotRole,
};
use crate::routing::best_route;
use crate::topology::{Network, StationId, StationKind};
use crate::traffic::{
    DropReason, Flow, FlowId, QueuedPacket, SessionMonitor, StationQueues, TrafficSource, Trigger,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

struct FlowState {
    flow: Flow,
    /// Radio senders along the route, in order.
    senders: Vec<StationId>,
    next: BTreeMap<StationId, StationId>,
    entry: StationId,
    source: TrafficSource,
    pending: VecDeque<QueuedPacket>,
    seq: u64,
}

#[derive(Debug, Clone)]
enum Action {
    Establish {
        peer: StationId,
        request: ReservationRequest,
        flow: FlowId,
    },
    Cancel {
        peer: StationId,
        slots: Vec<CfSlot>,
    },
}

/// Where an event happens.
#[derive(Debug, Clone, Copy)]
struct At {
    frame: u64,
    slot: u32,
    phase: Phase,
}

struct Sim<'a> {
    net: &'a Network,
    cfg: &'a SimConfig,
    channel: Channel,
    heads: Vec<StationId>,
    macs: BTreeMap<StationId, MacStation>,
    queues: BTreeMap<StationId, StationQueues>,
    flows: Vec<FlowState>,
    flow_index: BTreeMap<FlowId, usize>,
    sessions: BTreeMap<(FlowId, StationId), SessionMonitor>,
    exhausted: BTreeSet<(FlowId, StationId)>,
    faults: BTreeSet<(ControlKind, u64, StationId)>,
    meter: EnergyMeter,
    rng: ChaCha8Rng,
    trace: Trace,
}

pub(crate) fn simulate(net: &Network, flows: &[Flow], cfg: &SimConfig) -> Result<Trace, EngineError> {
    let grid = net.grid_spec().rp_modulus();
    if cfg.layout.rp_slots != grid {
        return Err(EngineError::RpSlotMismatch {
            frame: cfg.layout.rp_slots,
            grid,
        });
    }
    if !(cfg.interference_multiplier >= 1.0 && cfg.interference_multiplier.is_finite()) {
        return Err(EngineError::BadMultiplier(cfg.interference_multiplier));
    }
    if cfg.sense_window == 0 {
        return Err(EngineError::ZeroSenseWindow);
    }
    let mut seen = BTreeSet::new();
    for f in flows {
        if !seen.insert(f.id) {
            return Err(EngineError::DuplicateFlow(f.id));
        }
        f.validate()?;
        net.station(f.src)?;
        net.station(f.dst)?;
    }
    let mut sim = Sim::new(net, cfg)?;
    sim.setup(flows)?;
    for frame in 0..cfg.horizon_frames {
        sim.frame(frame);
    }
    sim.finish();
    Ok(sim.trace)
}

impl<'a> Sim<'a> {
    fn new(net: &'a Network, cfg: &'a SimConfig) -> Result<Self, EngineError> {
        let channel = Channel::new(net, cfg.interference_multiplier);
        let heads = channel.heads().to_vec();
        let mut macs = BTreeMap::new();
        let mut queues = BTreeMap::new();
        for &h in &heads {
            let rp = match cfg.slotting {
                Slotting::Grid => net.rp_slot(h)?,
                Slotting::Single => 0,
            };
            macs.insert(h, MacStation::new(h, rp, cfg.layout.cf_slots));
            queues.insert(h, StationQueues::new(h, cfg.queue_capacity));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0);
        Ok(Self {
            net,
            cfg,
            meter: EnergyMeter::new(heads.iter().copied()),
            channel,
            heads,
            macs,
            queues,
            flows: Vec::new(),
            flow_index: BTreeMap::new(),
            sessions: BTreeMap::new(),
            exhausted: BTreeSet::new(),
            faults: cfg.faults.iter().map(|f: &Fault| (f.kind, f.frame, f.sender)).collect(),
            rng,
            trace: Trace::default(),
        })
    }

    fn emit(&mut self, at: At, station: Option<StationId>, event: Event) {
        self.trace.push(at.frame, at.slot, at.phase, station, event);
    }

    fn setup(&mut self, flows: &[Flow]) -> Result<(), EngineError> {
        let setup = At {
            frame: 0,
            slot: 0,
            phase: Phase::Setup,
        };
        self.emit(
            setup,
            None,
            Event::RunStart {
                seed: self.cfg.seed,
                horizon_frames: self.cfg.horizon_frames,
                rp_slots: self.cfg.layout.rp_slots,
                cf_slots: self.cfg.layout.cf_slots,
                slotting: self.cfg.slotting,
                interference_multiplier: self.cfg.interference_multiplier,
                energy: self.cfg.energy,
                stations: self.heads.clone(),
            },
        );
        let mut sorted: Vec<&Flow> = flows.iter().collect();
        sorted.sort_by_key(|f| f.id);
        for f in sorted {
            let (path, d_path, found, error) = match self.plan(f) {
                Ok((path, d, n)) => (Some(path), Some(d), n, None),
                Err((n, e)) => (None, None, n, Some(e)),
            };
            self.emit(
                setup,
                Some(f.src),
                Event::Route {
                    flow: f.id,
                    class: f.class.name,
                    src: f.src,
                    dst: f.dst,
                    path: path.clone(),
                    d_path,
                    paths_found: found,
                    error,
                },
            );
            let Some(path) = path else { continue };
            let senders: Vec<StationId> = path
                .windows(2)
                .filter(|w| !self.is_base(w[1]))
                .map(|w| w[0])
                .collect();
            let next: BTreeMap<StationId, StationId> = path.windows(2).map(|w| (w[0], w[1])).collect();
            for &s in &senders {
                self.queues.get_mut(&s).expect("sender is a cluster head").bind(f, next[&s]);
                if f.is_real_time() {
                    self.sessions
                        .insert((f.id, s), SessionMonitor::new(f.service_mode, self.cfg.semi_bonded_tolerance));
                }
            }
            self.flow_index.insert(f.id, self.flows.len());
            self.flows.push(FlowState {
                flow: f.clone(),
                senders,
                next,
                entry: path[0],
                source: TrafficSource::new(f, self.cfg.seed),
                pending: VecDeque::new(),
                seq: 0,
            });
        }
        Ok(())
    }

    fn is_base(&self, id: StationId) -> bool {
        self.net.station(id).map(|s| s.kind == StationKind::BaseStation).unwrap_or(false)
    }

    /// Route for one flow: the selected path, its score and the number of
    /// candidate paths, or the reason it cannot be carried.
    fn plan(&self, f: &Flow) -> Result<(Vec<StationId>, f64, usize), (usize, String)> {
        let entry = match self.net.attachment(f.src) {
            Ok(Some(e)) => e,
            Ok(None) => return Err((0, format!("sensor {} is not attached to a cluster head", f.src))),
            Err(e) => return Err((0, e.to_string())),
        };
        match self.net.station(f.dst) {
            Ok(s) if s.kind == StationKind::SensorNode => {
                return Err((0, format!("destination {} is a sensor node", f.dst)))
            }
            Err(e) => return Err((0, e.to_string())),
            _ => {}
        }
        if entry == f.dst {
            return Err((0, format!("source {} attaches to its own destination", f.src)));
        }
        let (scores, best) = best_route(self.net, entry, f.dst, &self.cfg.routing).map_err(|e| (0, e.to_string()))?;
        let Some(best) = best else {
            return Err((0, "0 paths found".to_string()));
        };
        let d = scores.iter().find(|s| s.path == best).map(|s| s.d_path).unwrap_or(0.0);
        let hops = best.hops().to_vec();
        for w in hops.windows(2) {
            if self.is_base(w[1]) {
                continue;
            }
            if !(self.channel.reaches(w[0], w[1]) && self.channel.reaches(w[1], w[0])) {
                return Err((
                    scores.len(),
                    format!("hop {} -> {} is outside mutual radio range", w[0], w[1]),
                ));
            }
        }
        Ok((hops, d, scores.len()))
    }

    fn frame(&mut self, frame: u64) {
        let layout = self.cfg.layout;
        for i in 0..self.flows.len() {
            let fs = &mut self.flows[i];
            let created = fs.source.generate(&fs.flow, frame, &layout);
            let mut events = Vec::with_capacity(created.len());
            for t in created {
                let pkt = QueuedPacket {
                    flow: fs.flow.id,
                    seq: fs.seq,
                    created: t,
                    deadline: fs.flow.deadline_for(t),
                };
                fs.seq += 1;
                fs.pending.push_back(pkt);
                events.push((fs.entry, pkt));
            }
            for (st, p) in events {
                self.emit(
                    At {
                        frame,
                        slot: 0,
                        phase: Phase::Rp,
                    },
                    Some(st),
                    Event::PktGen {
                        flow: p.flow,
                        seq: p.seq,
                        created: p.created,
                        deadline: p.deadline,
                    },
                );
            }
        }
        for slot in 0..layout.rp_slots {
            self.rp_slot(frame, slot);
        }
        for slot in 0..layout.cf_slots {
            self.cf_slot(frame, slot);
        }
        self.frame_end(frame);
    }

    // ---- packet movement ----

    fn admit(&mut self, at: At, now: Micros) {
        for i in 0..self.flows.len() {
            while let Some(p) = self.flows[i].pending.front().copied() {
                if p.created > now {
                    break;
                }
                self.flows[i].pending.pop_front();
                let entry = self.flows[i].entry;
                self.arrive(i, entry, p, now, at);
            }
        }
    }

    /// Packet `p` is now held by `station`.
    fn arrive(&mut self, fi: usize, station: StationId, p: QueuedPacket, now: Micros, at: At) {
        let dst = self.flows[fi].flow.dst;
        let next = self.flows[fi].next.get(&station).copied();
        let final_hop = station == dst || next.is_some_and(|n| self.is_base(n));
        if final_hop {
            if p.deadline.is_some_and(|d| d < now) {
                self.drop_packet(at, station, p, DropReason::DeadlineMiss);
            } else {
                self.emit(
                    at,
                    Some(dst),
                    Event::PktDeliver {
                        flow: p.flow,
                        seq: p.seq,
                        created: p.created,
                        delivered: now,
                    },
                );
            }
            return;
        }
        let q = self.queues.get_mut(&station).expect("relay is a cluster head");
        if q.enqueue(p, true).is_err() {
            self.drop_packet(at, station, p, DropReason::Overflow);
        }
    }

    fn drop_packet(&mut self, at: At, station: StationId, p: QueuedPacket, reason: DropReason) {
        self.emit(
            at,
            Some(station),
            Event::PktDrop {
                flow: p.flow,
                seq: p.seq,
                reason,
            },
        );
    }

    fn expire(&mut self, at: At, now: Micros) {
        for h in self.heads.clone() {
            let gone = self.queues.get_mut(&h).expect("queue per head").expire_deadlines(now);
            for p in gone {
                self.drop_packet(at, h, p, DropReason::DeadlineMiss);
            }
        }
    }

    // ---- reservation bookkeeping ----

    fn position(&self, fi: usize, station: StationId) -> Option<usize> {
        self.flows[fi].senders.iter().position(|&s| s == station)
    }

    /// No packet of the flow is waiting at the source or before `station`.
    fn upstream_empty(&self, fi: usize, station: StationId) -> bool {
        let fs = &self.flows[fi];
        if !fs.pending.is_empty() {
            return false;
        }
        let upto = self.position(fi, station).unwrap_or(0);
        fs.senders[..upto]
            .iter()
            .all(|s| self.queues[s].queue(fs.flow.id).is_none_or(|q| q.is_empty()))
    }

    fn live(&self, fi: usize, station: StationId, frame: u64) -> bool {
        let fs = &self.flows[fi];
        fs.flow.is_active(frame)
            || !self.upstream_empty(fi, station)
            || self.queues[&station].queue(fs.flow.id).is_some_and(|q| !q.is_empty())
    }

    fn flushing(&self, fi: usize, station: StationId, frame: u64) -> bool {
        frame >= self.flows[fi].flow.stop_frame && self.upstream_empty(fi, station)
    }

    /// Real-time slots per frame `station` needs towards `peer`.
    fn rt_need(&self, station: StationId, peer: StationId, frame: u64) -> u16 {
        let layout = &self.cfg.layout;
        let mut need: u32 = 0;
        for q in self.queues[&station].queues() {
            if q.next_hop != peer || q.kind != ReservationKind::RealTime {
                continue;
            }
            let fi = self.flow_index[&q.flow];
            if self.live(fi, station, frame) {
                need += self.flows[fi].flow.slots_per_frame(layout.frame_len(), layout.cf_slots) as u32;
            }
        }
        need.min(layout.cf_slots as u32) as u16
    }

    fn choose_action(&self, x: StationId, frame: u64) -> Option<Action> {
        let mac = &self.macs[&x];
        let queues = &self.queues[&x];
        let mut best: Option<(u8, Action)> = None;
        let mut consider = |rank: u8, a: Action| {
            if best.as_ref().is_none_or(|(r, _)| rank < *r) {
                best = Some((rank, a));
            }
        };
        let peers: BTreeSet<StationId> = queues.queues().map(|q| q.next_hop).collect();
        let need: BTreeMap<StationId, u16> = peers.iter().map(|&p| (p, self.rt_need(x, p, frame))).collect();
        let has_free = !mac.table().free_slots().is_empty();
        let candidates = queues.request_candidates(
            |f| {
                let q = queues.queue(f).expect("bound flow");
                match q.kind {
                    ReservationKind::RealTime => mac.real_time_slots_to(q.next_hop).len() >= need[&q.next_hop] as usize,
                    ReservationKind::Datagram => mac
                        .table()
                        .entries()
                        .any(|e| e.tx == x && e.rx == q.next_hop && e.kind == ReservationKind::Datagram),
                }
            },
            |f| self.flushing(self.flow_index[&f], x, frame),
        );
        if let (true, Some((flow, trigger))) = (has_free, candidates.first()) {
            let q = queues.queue(*flow).expect("bound flow");
            let fs = &self.flows[self.flow_index[flow]];
            let request = match trigger {
                Trigger::Session => {
                    let held = mac.real_time_slots_to(q.next_hop).len() as u16;
                    let wanted = need[&q.next_hop].saturating_sub(held).max(1);
                    ReservationRequest::real_time(fs.flow.packet_size, q.head().and_then(|p| p.deadline), wanted)
                }
                Trigger::Burst { packets } => ReservationRequest::datagram(fs.flow.packet_size, *packets),
                Trigger::None => unreachable!("candidates carry a trigger"),
            };
            let rank = match q.priority() {
                p @ 0..=2 => p,
                _ => 4,
            };
            consider(
                rank,
                Action::Establish {
                    peer: q.next_hop,
                    request,
                    flow: *flow,
                },
            );
        }
        let mut held_peers: BTreeSet<StationId> = mac
            .table()
            .entries()
            .filter(|e| e.tx == x && e.kind == ReservationKind::RealTime)
            .map(|e| e.rx)
            .collect();
        held_peers.retain(|p| need.get(p).copied().unwrap_or(0) == 0);
        if let Some(&peer) = held_peers.first() {
            consider(
                3,
                Action::Cancel {
                    peer,
                    slots: mac.real_time_slots_to(peer),
                },
            );
        }
        best.map(|(_, a)| a)
    }

    // ---- reservation period ----

    fn rt_changes(&mut self, at: At, station: StationId, changes: Vec<RtChange>) {
        for c in changes {
            let event = match c {
                RtChange::Inserted(e) => Event::RtInsert {
                    cf_slot: e.cf_slot,
                    tx: e.tx,
                    rx: e.rx,
                    kind: e.kind,
                },
                RtChange::Removed(e, cause) => Event::RtRemove {
                    cf_slot: e.cf_slot,
                    tx: e.tx,
                    rx: e.rx,
                    kind: e.kind,
                    reason: match cause {
                        RemovalCause::Cancelled => RemoveReason::Cancelled,
                        RemovalCause::FrameEnd => RemoveReason::FrameEnd,
                    },
                },
            };
            self.emit(at, Some(station), event);
        }
    }

    fn mac_error(&mut self, at: At, station: StationId, e: impl ToString) {
        self.emit(at, Some(station), Event::MacError { message: e.to_string() });
    }

    fn backoff(&mut self, at: At, x: StationId, flow: Option<FlowId>, cause: BackoffCause) {
        let outcome = self
            .macs
            .get_mut(&x)
            .expect("mac per head")
            .register_failure(at.frame, &self.cfg.backoff, &mut self.rng);
        self.record_backoff(at, x, flow, cause, outcome);
    }

    fn record_backoff(&mut self, at: At, x: StationId, flow: Option<FlowId>, cause: BackoffCause, o: BackoffOutcome) {
        let (until, window, exhausted) = match o {
            BackoffOutcome::Deferred { until, window } => (until, Some(window), false),
            BackoffOutcome::Exhausted { until } => (until, None, true),
        };
        if exhausted {
            if let Some(f) = flow {
                self.exhausted.insert((f, x));
            }
        }
        self.emit(
            at,
            Some(x),
            Event::Backoff {
                cause,
                until,
                window,
                exhausted,
            },
        );
    }

    fn rp_slot(&mut self, frame: u64, slot: u32) {
        let at = At {
            frame,
            slot,
            phase: Phase::Rp,
        };
        let now = self.cfg.layout.rp_slot_start(frame, slot);
        self.admit(at, now);
        self.expire(at, now);

        let mut drawn: Vec<(u32, StationId, Action)> = Vec::new();
        for &x in &self.heads {
            let mac = &self.macs[&x];
            if !mac.can_initiate(frame, slot) {
                continue;
            }
            if let Some(a) = self.choose_action(x, frame) {
                drawn.push((0, x, a));
            }
        }
        for d in drawn.iter_mut() {
            d.0 = self.rng.random_range(0..self.cfg.sense_window);
        }
        drawn.sort_by_key(|(o, x, _)| (*o, *x));

        let mut started: Vec<(u32, StationId)> = Vec::new();
        let mut attempts: BTreeMap<StationId, Option<FlowId>> = BTreeMap::new();
        let mut first: Vec<ControlMessage> = Vec::new();
        for (offset, x, action) in drawn {
            let flow = match &action {
                Action::Establish { flow, .. } => Some(*flow),
                Action::Cancel { .. } => None,
            };
            let busy = started.iter().any(|&(o, t)| o < offset && self.channel.covers(t, x));
            if busy {
                self.backoff(at, x, flow, BackoffCause::CarrierBusy);
                continue;
            }
            let mac = self.macs.get_mut(&x).expect("mac per head");
            let msg = match action {
                Action::Establish { peer, request, .. } => {
                    match mac.initiate_establishment(frame, slot, peer, &request, false, &self.cfg.backoff, &mut self.rng) {
                        Ok(Initiation::Send(m)) => m,
                        Ok(Initiation::Deferred(o)) => {
                            self.record_backoff(at, x, flow, BackoffCause::CarrierBusy, o);
                            continue;
                        }
                        Err(e) => {
                            self.mac_error(at, x, e);
                            continue;
                        }
                    }
                }
                Action::Cancel { peer, slots } => match mac.cancel_connection(frame, slot, peer, &slots) {
                    Ok(m) => m,
                    Err(e) => {
                        self.mac_error(at, x, e);
                        continue;
                    }
                },
            };
            started.push((offset, x));
            attempts.insert(x, flow);
            first.push(msg);
        }

        let mut talkers: BTreeSet<StationId> = BTreeSet::new();
        let mut completed: BTreeSet<StationId> = BTreeSet::new();
        let replies = self.sub_slot(at, 0, first, &mut talkers, &mut completed);
        let broadcasts = self.sub_slot(at, 1, replies, &mut talkers, &mut completed);
        let srb_senders: Vec<(StationId, ControlMessage)> = broadcasts.iter().map(|m| (m.from, m.clone())).collect();
        self.sub_slot(at, 2, broadcasts, &mut talkers, &mut completed);
        for (x, m) in srb_senders {
            if let crate::mac::Payload::Broadcast { tx, rx, kind, slots } = m.payload {
                self.emit(
                    at,
                    Some(x),
                    Event::HandshakeDone {
                        procedure: Procedure::Establish,
                        tx,
                        rx,
                        kind,
                        slots,
                    },
                );
            }
        }
        for (x, flow) in attempts {
            if !completed.contains(&x) {
                self.backoff(at, x, flow, BackoffCause::NoReply);
            }
        }
        for h in self.heads.clone() {
            let action = if talkers.contains(&h) { SlotAction::Tx } else { SlotAction::Idle };
            self.meter.account(h, action);
        }
    }

    /// Puts `msgs` on the air in one sub-slot and applies every reception.
    /// Returns the messages the receivers answer with in the next sub-slot.
    fn sub_slot(
        &mut self,
        at: At,
        sub: u8,
        msgs: Vec<ControlMessage>,
        talkers: &mut BTreeSet<StationId>,
        completed: &mut BTreeSet<StationId>,
    ) -> Vec<ControlMessage> {
        let senders: Vec<StationId> = msgs.iter().map(|m| m.from).collect();
        for m in &msgs {
            talkers.insert(m.from);
            self.emit(
                at,
                Some(m.from),
                Event::CtrlTx {
                    sub_slot: sub,
                    message: m.clone(),
                },
            );
        }
        let mut answers = Vec::new();
        let mut cancels_done = Vec::new();
        for m in &msgs {
            let faulted = self.faults.contains(&(m.kind, at.frame, m.from));
            let audience: Vec<StationId> = self.channel.audience(m.from).collect();
            for r in audience {
                let reception = if faulted {
                    Reception::Lost {
                        reason: LossReason::Fault,
                        interferers: Vec::new(),
                    }
                } else {
                    self.channel.receive(&senders, m.from, r)
                };
                if let Reception::Lost { reason, interferers } = reception {
                    self.emit(
                        at,
                        Some(r),
                        Event::CtrlLost {
                            sub_slot: sub,
                            kind: m.kind,
                            from: m.from,
                            to: m.to,
                            reason,
                            interferers,
                        },
                    );
                    continue;
                }
                self.emit(
                    at,
                    Some(r),
                    Event::CtrlRx {
                        sub_slot: sub,
                        kind: m.kind,
                        from: m.from,
                        to: m.to,
                    },
                );
                let addressed = m.to == r;
                let mac = self.macs.get_mut(&r).expect("mac per head");
                let result = match (addressed, m.kind) {
                    (true, ControlKind::Cr) => mac.handle_cr(m, at.frame).map(|o| match o {
                        Some((ca, ch)) => {
                            answers.push(ca);
                            ch
                        }
                        None => Vec::new(),
                    }),
                    (true, ControlKind::Cc) => mac.handle_cc(m).map(|(ack, ch)| {
                        answers.push(ack);
                        ch
                    }),
                    (true, ControlKind::Ca) => mac.finalize_establishment(m, at.frame).map(|(srb, ch)| {
                        completed.insert(r);
                        answers.push(srb);
                        ch
                    }),
                    (true, ControlKind::CcAck) => mac.handle_cc_ack(m).inspect(|_| {
                        completed.insert(r);
                        cancels_done.push((r, m.clone()));
                    }),
                    _ => mac.overhear(m, at.frame),
                };
                match result {
                    Ok(changes) => self.rt_changes(at, r, changes),
                    Err(e) => self.mac_error(at, r, e),
                }
            }
        }
        for (x, ack) in cancels_done {
            if let crate::mac::Payload::CancelAck { slots } = ack.payload {
                self.emit(
                    at,
                    Some(x),
                    Event::HandshakeDone {
                        procedure: Procedure::Cancel,
                        tx: x,
                        rx: ack.from,
                        kind: ReservationKind::RealTime,
                        slots,
                    },
                );
            }
        }
        answers
    }

    // ---- contention-free period ----

    fn cf_slot(&mut self, frame: u64, slot: CfSlot) {
        let at = At {
            frame,
            slot: slot as u32,
            phase: Phase::Cfp,
        };
        let now = self.cfg.layout.cf_slot_start(frame, slot);
        let end = self.cfg.layout.cf_slot_end(frame, slot);
        self.admit(at, now);
        self.expire(at, now);

        let mut sends: Vec<(StationId, StationId, usize, QueuedPacket, ReservationKind)> = Vec::new();
        for x in self.heads.clone() {
            let SlotRole::Transmit { to, kind } = self.macs[&x].cfp_role(slot) else {
                continue;
            };
            let mut cands: Vec<(u8, Micros, Micros, FlowId)> = self.queues[&x]
                .queues()
                .filter(|q| q.next_hop == to && q.kind == kind && !q.is_empty())
                .map(|q| {
                    let h = q.head().expect("non-empty");
                    (q.priority(), h.deadline.unwrap_or(Micros::MAX), h.created, q.flow)
                })
                .collect();
            cands.sort();
            for (_, _, _, flow) in cands {
                let (pkt, expired) = self.queues.get_mut(&x).expect("queue per head").take_for_slot(flow, end);
                for p in expired {
                    self.drop_packet(at, x, p, DropReason::DeadlineMiss);
                }
                if let Some(p) = pkt {
                    sends.push((x, to, self.flow_index[&flow], p, kind));
                    break;
                }
            }
        }
        let senders: Vec<StationId> = sends.iter().map(|s| s.0).collect();
        for &(x, to, _, p, kind) in &sends {
            self.emit(
                at,
                Some(x),
                Event::DataTx {
                    flow: p.flow,
                    seq: p.seq,
                    to,
                    kind,
                },
            );
        }
        let mut heard: BTreeSet<StationId> = BTreeSet::new();
        for (x, to, fi, p, _) in sends {
            let mut reception = self.channel.receive(&senders, x, to);
            let listening = matches!(self.macs[&to].cfp_role(slot), SlotRole::Receive { from, .. } if from == x);
            if reception == Reception::Decoded && !listening {
                reception = Reception::Lost {
                    reason: LossReason::ReceiverAsleep,
                    interferers: Vec::new(),
                };
            }
            match reception {
                Reception::Decoded => {
                    heard.insert(to);
                    self.emit(
                        at,
                        Some(to),
                        Event::DataRx {
                            flow: p.flow,
                            seq: p.seq,
                            from: x,
                        },
                    );
                    self.arrive(fi, to, p, end, at);
                }
                Reception::Lost { reason, interferers } => {
                    self.emit(
                        at,
                        Some(to),
                        Event::DataLost {
                            flow: p.flow,
                            seq: p.seq,
                            from: x,
                            to,
                            reason,
                            interferers,
                        },
                    );
                    self.drop_packet(at, x, p, DropReason::Collision);
                }
            }
        }
        for h in self.heads.clone() {
            let action = if senders.contains(&h) {
                SlotAction::Tx
            } else if heard.contains(&h) {
                SlotAction::Rx
            } else if self.macs[&h].cfp_role(slot) != SlotRole::Sleep {
                SlotAction::Idle
            } else {
                SlotAction::Sleep
            };
            self.meter.account(h, action);
        }
    }

    // ---- frame boundary ----

    fn frame_end(&mut self, frame: u64) {
        let at = At {
            frame,
            slot: 0,
            phase: Phase::End,
        };
        for h in self.heads.clone() {
            let changes = self.macs.get_mut(&h).expect("mac per head").end_of_frame_cleanup();
            self.rt_changes(at, h, changes);
        }
        let keys: Vec<(FlowId, StationId)> = self.sessions.keys().copied().collect();
        for (flow, x) in keys {
            let fi = self.flow_index[&flow];
            if !self.live(fi, x, frame) {
                continue;
            }
            let peer = self.flows[fi].next[&x];
            let reserved = !self.macs[&x].real_time_slots_to(peer).is_empty();
            let exhausted = self.exhausted.contains(&(flow, x));
            let monitor = self.sessions.get_mut(&(flow, x)).expect("session key");
            if let Some(state) = monitor.observe(reserved, exhausted) {
                self.emit(at, Some(x), Event::Session { flow, state });
            }
        }
        self.exhausted.clear();
        for (h, c) in self.meter.take() {
            self.emit(
                at,
                Some(h),
                Event::Energy {
                    tx: c.tx,
                    rx: c.rx,
                    idle: c.idle,
                    sleep: c.sleep,
                },
            );
        }
    }

    fn finish(&mut self) {
        let mut queued = Vec::new();
        for fs in &self.flows {
            let mut n = fs.pending.len() as u64;
            for s in &fs.senders {
                n += self.queues[s].queue(fs.flow.id).map_or(0, |q| q.len()) as u64;
            }
            queued.push(FlowQueued {
                flow: fs.flow.id,
                queued: n,
            });
        }
        let frames = self.cfg.horizon_frames;
        self.emit(
            At {
                frame: frames,
                slot: 0,
                phase: Phase::End,
            },
            None,
            Event::RunEnd { frames, queued },
        );
    }
}
