use super::flow::{Flow, FlowId, ServiceMode};
use super::TrafficError;
use crate::mac::{Micros, ReservationKind};
use crate::topology::StationId;
use std::collections::{BTreeMap, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedPacket {
    pub flow: FlowId,
    pub seq: u64,
    pub created: Micros,
    pub deadline: Option<Micros>,
}

/// Why a queue wants a reservation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    /// Nothing to ask for yet.
    None,
    /// A real-time session without a reservation.
    Session,
    /// A full datagram burst, or the tail of a finished flow.
    Burst { packets: u32 },
}

/// Packets of one flow waiting at one station for the next hop.
#[derive(Debug, Clone)]
pub struct FlowQueue {
    pub flow: FlowId,
    pub next_hop: StationId,
    pub kind: ReservationKind,
    pub mode: ServiceMode,
    pub burst_length: u32,
    packets: VecDeque<QueuedPacket>,
}

impl FlowQueue {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn head(&self) -> Option<&QueuedPacket> {
        self.packets.front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedPacket> {
        self.packets.iter()
    }

    /// Establishment priority, lower first.
    pub fn priority(&self) -> u8 {
        match (self.kind, self.mode) {
            (ReservationKind::RealTime, ServiceMode::Bonded) => 0,
            (ReservationKind::RealTime, ServiceMode::SemiBonded) => 1,
            (ReservationKind::RealTime, ServiceMode::None) => 2,
            (ReservationKind::Datagram, _) => 3,
        }
    }

    /// `flushing` is set once no further packets of the flow can arrive here.
    pub fn trigger(&self, has_reservation: bool, flushing: bool) -> Trigger {
        if self.packets.is_empty() || has_reservation {
            return Trigger::None;
        }
        match self.kind {
            ReservationKind::RealTime => Trigger::Session,
            ReservationKind::Datagram => {
                let n = self.packets.len() as u32;
                if n >= self.burst_length || flushing {
                    Trigger::Burst {
                        packets: n.min(self.burst_length),
                    }
                } else {
                    Trigger::None
                }
            }
        }
    }
}

/// All per-flow queues of one station, with a shared per-queue capacity.
#[derive(Debug, Clone)]
pub struct StationQueues {
    station: StationId,
    capacity: usize,
    queues: BTreeMap<FlowId, FlowQueue>,
}

impl StationQueues {
    pub fn new(station: StationId, capacity: usize) -> Self {
        Self {
            station,
            capacity,
            queues: BTreeMap::new(),
        }
    }

    pub fn station(&self) -> StationId {
        self.station
    }

    /// Registers the outgoing hop this station serves for `flow`.
    pub fn bind(&mut self, flow: &Flow, next_hop: StationId) {
        self.queues.entry(flow.id).or_insert_with(|| FlowQueue {
            flow: flow.id,
            next_hop,
            kind: flow.reservation_kind(),
            mode: flow.service_mode,
            burst_length: flow.burst_length,
            packets: VecDeque::new(),
        });
    }

    pub fn queue(&self, flow: FlowId) -> Option<&FlowQueue> {
        self.queues.get(&flow)
    }

    pub fn queues(&self) -> impl Iterator<Item = &FlowQueue> {
        self.queues.values()
    }

    pub fn backlog(&self) -> usize {
        self.queues.values().map(FlowQueue::len).sum()
    }

    /// Appends a packet and reports whether it makes the queue ask for a
    /// reservation. A full queue rejects the packet.
    pub fn enqueue(&mut self, pkt: QueuedPacket, has_reservation: bool) -> Result<Trigger, TrafficError> {
        let cap = self.capacity;
        let q = self
            .queues
            .get_mut(&pkt.flow)
            .ok_or(TrafficError::UnboundFlow { flow: pkt.flow, station: self.station })?;
        if q.packets.len() >= cap {
            return Err(TrafficError::Overflow { flow: pkt.flow, station: self.station });
        }
        q.packets.push_back(pkt);
        Ok(q.trigger(has_reservation, false))
    }

    /// Removes every packet whose deadline is already behind `now`.
    pub fn expire_deadlines(&mut self, now: Micros) -> Vec<QueuedPacket> {
        let mut dropped = Vec::new();
        for q in self.queues.values_mut() {
            q.packets.retain(|p| match p.deadline {
                Some(d) if d < now => {
                    dropped.push(*p);
                    false
                }
                _ => true,
            });
        }
        dropped
    }

    /// Head packet of `flow` that can still arrive by `arrival`; packets that
    /// would land late are returned as expired instead.
    pub fn take_for_slot(&mut self, flow: FlowId, arrival: Micros) -> (Option<QueuedPacket>, Vec<QueuedPacket>) {
        let mut expired = Vec::new();
        let Some(q) = self.queues.get_mut(&flow) else {
            return (None, expired);
        };
        while let Some(p) = q.packets.pop_front() {
            match p.deadline {
                Some(d) if d < arrival => expired.push(p),
                _ => return (Some(p), expired),
            }
        }
        (None, expired)
    }

    /// Queues wanting a reservation, highest establishment priority first.
    pub fn request_candidates(
        &self,
        has_reservation: impl Fn(FlowId) -> bool,
        flushing: impl Fn(FlowId) -> bool,
    ) -> Vec<(FlowId, Trigger)> {
        let mut out: Vec<(u8, FlowId, Trigger)> = self
            .queues
            .values()
            .filter_map(|q| match q.trigger(has_reservation(q.flow), flushing(q.flow)) {
                Trigger::None => None,
                t => Some((q.priority(), q.flow, t)),
            })
            .collect();
        out.sort_by_key(|(p, f, _)| (*p, *f));
        out.into_iter().map(|(_, f, t)| (f, t)).collect()
    }
}
