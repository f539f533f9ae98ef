//! Cluster-head reservation MAC.
//!
//! Every frame opens with a reservation period in which a station may start
//! a procedure only in the slot owned by its grid cell. Establishment is a
//! three-message exchange (request, acknowledgment carrying the granted
//! slots, reservation broadcast); cancellation is a two-message exchange.
//! Stations that overhear a grant, broadcast or cancellation update their own
//! reservation tables, which then drive wake/sleep behaviour in the
//! contention-free period.

mod backoff;
mod frame;
mod messages;
mod table;

pub use backoff::{BackoffOutcome, BackoffPolicy, BackoffState};
pub use frame::{FrameLayout, Micros, MESSAGES_PER_RP_SLOT};
pub use messages::{ControlKind, ControlMessage, Payload};
pub use table::{CfSlot, ReservationEntry, ReservationKind, ReservationTable, SlotBitmap, SlotRole};

use crate::topology::StationId;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacError {
    #[error("station {station} owns reservation slot {own}, not {current}")]
    NotMySlot { station: StationId, own: u32, current: u32 },
    #[error("station {0} has no free contention-free slots")]
    NoFreeSlots(StationId),
    #[error("station {station} is backing off until frame {until}")]
    BackingOff { station: StationId, until: u64 },
    #[error("datagram reservations expire at frame end and are never cancelled")]
    DatagramCancel,
    #[error("station {station} holds no real-time reservation to {peer} in slot {slot}")]
    NoSuchReservation { station: StationId, peer: StationId, slot: CfSlot },
    #[error("slot {slot} already holds a different reservation of station {station}")]
    SlotConflict { station: StationId, slot: CfSlot },
    #[error("slot {0} is outside the {1} contention-free slots")]
    SlotOutOfRange(CfSlot, u16),
    #[error("station {0} cannot reserve a slot to itself")]
    SelfReservation(StationId),
    #[error("station {station} got an unexpected {kind} from {from}")]
    Unexpected { station: StationId, kind: ControlKind, from: StationId },
}

/// How a reservation table changed and why.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtChange {
    Inserted(ReservationEntry),
    Removed(ReservationEntry, RemovalCause),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemovalCause {
    Cancelled,
    FrameEnd,
}

/// What the station asks for in a connection request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReservationRequest {
    pub kind: ReservationKind,
    pub packet_length: u32,
    /// Real-time only: deadline of the head packet.
    pub deadline_us: Option<u64>,
    /// Real-time only: slots per frame needed to sustain the session rate.
    pub slots_wanted: u16,
    /// Datagram only: packets in the burst.
    pub buffered_packets: u32,
}

impl ReservationRequest {
    pub fn real_time(packet_length: u32, deadline_us: Option<u64>, slots_wanted: u16) -> Self {
        Self {
            kind: ReservationKind::RealTime,
            packet_length,
            deadline_us,
            slots_wanted: slots_wanted.max(1),
            buffered_packets: 0,
        }
    }

    pub fn datagram(packet_length: u32, buffered_packets: u32) -> Self {
        Self {
            kind: ReservationKind::Datagram,
            packet_length,
            deadline_us: None,
            slots_wanted: 0,
            buffered_packets,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Initiation {
    Send(ControlMessage),
    Deferred(BackoffOutcome),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Pending {
    Establish { peer: StationId, kind: ReservationKind },
    Cancel { peer: StationId, slots: Vec<CfSlot> },
}

/// Per-station MAC state machine.
#[derive(Debug, Clone)]
pub struct MacStation {
    id: StationId,
    rp_slot: u32,
    table: ReservationTable,
    backoff: BackoffState,
    pending: Option<Pending>,
}

impl MacStation {
    pub fn new(id: StationId, rp_slot: u32, cf_slots: u16) -> Self {
        Self {
            id,
            rp_slot,
            table: ReservationTable::new(id, cf_slots),
            backoff: BackoffState::default(),
            pending: None,
        }
    }

    pub fn id(&self) -> StationId {
        self.id
    }

    /// The only reservation slot in which this station may start a procedure.
    pub fn my_rp_slot(&self) -> u32 {
        self.rp_slot
    }

    pub fn table(&self) -> &ReservationTable {
        &self.table
    }

    pub fn backoff(&self) -> &BackoffState {
        &self.backoff
    }

    pub fn can_initiate(&self, frame: u64, current_slot: u32) -> bool {
        current_slot == self.rp_slot && self.backoff.eligible(frame)
    }

    fn check_slot(&self, frame: u64, current_slot: u32) -> Result<(), MacError> {
        if current_slot != self.rp_slot {
            return Err(MacError::NotMySlot {
                station: self.id,
                own: self.rp_slot,
                current: current_slot,
            });
        }
        if !self.backoff.eligible(frame) {
            return Err(MacError::BackingOff {
                station: self.id,
                until: self.backoff.next_eligible_frame,
            });
        }
        Ok(())
    }

    /// Records a failed attempt (busy medium, collision, missing reply).
    pub fn register_failure<R: Rng + ?Sized>(&mut self, frame: u64, policy: &BackoffPolicy, rng: &mut R) -> BackoffOutcome {
        self.pending = None;
        self.backoff.on_failure(frame, policy, rng)
    }

    /// Emits a connection request if the medium was sensed idle, otherwise
    /// backs off to a later frame.
    #[allow(clippy::too_many_arguments)]
    pub fn initiate_establishment<R: Rng + ?Sized>(
        &mut self,
        frame: u64,
        current_slot: u32,
        peer: StationId,
        request: &ReservationRequest,
        medium_busy: bool,
        policy: &BackoffPolicy,
        rng: &mut R,
    ) -> Result<Initiation, MacError> {
        self.check_slot(frame, current_slot)?;
        let free_slots = self.table.free_slots();
        if free_slots.is_empty() {
            return Err(MacError::NoFreeSlots(self.id));
        }
        if medium_busy {
            return Ok(Initiation::Deferred(self.register_failure(frame, policy, rng)));
        }
        let payload = match request.kind {
            ReservationKind::RealTime => Payload::RealTimeRequest {
                packet_length: request.packet_length,
                free_slots,
                deadline_us: request.deadline_us,
                slots_wanted: request.slots_wanted.max(1),
            },
            ReservationKind::Datagram => Payload::DatagramRequest {
                packet_length: request.packet_length,
                free_slots,
                buffered_packets: request.buffered_packets.max(1),
            },
        };
        self.pending = Some(Pending::Establish { peer, kind: request.kind });
        Ok(Initiation::Send(ControlMessage {
            kind: ControlKind::Cr,
            from: self.id,
            to: peer,
            payload,
        }))
    }

    /// Receiver side of a request: grant the lowest common free slots, or
    /// stay silent when there are none.
    pub fn handle_cr(
        &mut self,
        cr: &ControlMessage,
        frame: u64,
    ) -> Result<Option<(ControlMessage, Vec<RtChange>)>, MacError> {
        let (sender_free, wanted, kind) = match &cr.payload {
            Payload::RealTimeRequest { free_slots, slots_wanted, .. } if cr.to == self.id => {
                (free_slots, *slots_wanted as usize, ReservationKind::RealTime)
            }
            Payload::DatagramRequest { free_slots, buffered_packets, .. } if cr.to == self.id => {
                (free_slots, *buffered_packets as usize, ReservationKind::Datagram)
            }
            _ => return Err(self.unexpected(cr)),
        };
        let common = sender_free.intersect(&self.table.free_slots());
        let granted: Vec<CfSlot> = common.iter().take(wanted.max(1)).collect();
        if granted.is_empty() {
            return Ok(None);
        }
        let mut changes = Vec::new();
        for &slot in &granted {
            let entry = ReservationEntry {
                cf_slot: slot,
                tx: cr.from,
                rx: self.id,
                kind,
                established_frame: frame,
            };
            if self.table.insert(entry)? {
                changes.push(RtChange::Inserted(entry));
            }
        }
        let ca = ControlMessage {
            kind: ControlKind::Ca,
            from: self.id,
            to: cr.from,
            payload: Payload::Grant { kind, slots: granted },
        };
        Ok(Some((ca, changes)))
    }

    /// Sender side: commit the granted slots and announce them.
    pub fn finalize_establishment(
        &mut self,
        ca: &ControlMessage,
        frame: u64,
    ) -> Result<(ControlMessage, Vec<RtChange>), MacError> {
        let (kind, slots) = match (&self.pending, &ca.payload) {
            (Some(Pending::Establish { peer, kind }), Payload::Grant { kind: k, slots })
                if *peer == ca.from && kind == k && ca.to == self.id =>
            {
                (*kind, slots.clone())
            }
            _ => return Err(self.unexpected(ca)),
        };
        let mut changes = Vec::new();
        for &slot in &slots {
            let entry = ReservationEntry {
                cf_slot: slot,
                tx: self.id,
                rx: ca.from,
                kind,
                established_frame: frame,
            };
            if self.table.insert(entry)? {
                changes.push(RtChange::Inserted(entry));
            }
        }
        self.pending = None;
        self.backoff.on_success();
        let srb = ControlMessage {
            kind: ControlKind::Srb,
            from: self.id,
            to: ca.from,
            payload: Payload::Broadcast {
                tx: self.id,
                rx: ca.from,
                kind,
                slots,
            },
        };
        Ok((srb, changes))
    }

    /// Starts tearing down a real-time session towards `peer`.
    pub fn cancel_connection(
        &mut self,
        frame: u64,
        current_slot: u32,
        peer: StationId,
        slots: &[CfSlot],
    ) -> Result<ControlMessage, MacError> {
        self.check_slot(frame, current_slot)?;
        for &slot in slots {
            match self.table.own_entry(slot) {
                Some(e) if e.tx == self.id && e.rx == peer => {
                    if e.kind == ReservationKind::Datagram {
                        return Err(MacError::DatagramCancel);
                    }
                }
                _ => {
                    return Err(MacError::NoSuchReservation {
                        station: self.id,
                        peer,
                        slot,
                    })
                }
            }
        }
        self.pending = Some(Pending::Cancel {
            peer,
            slots: slots.to_vec(),
        });
        Ok(ControlMessage {
            kind: ControlKind::Cc,
            from: self.id,
            to: peer,
            payload: Payload::Cancel { slots: slots.to_vec() },
        })
    }

    /// Receiver side of a cancel: drop the entries and acknowledge. Always
    /// acknowledges so a retried cancel completes.
    pub fn handle_cc(&mut self, cc: &ControlMessage) -> Result<(ControlMessage, Vec<RtChange>), MacError> {
        let slots = match &cc.payload {
            Payload::Cancel { slots } if cc.to == self.id => slots.clone(),
            _ => return Err(self.unexpected(cc)),
        };
        let changes = self.remove_pair(&slots, cc.from, self.id);
        let ack = ControlMessage {
            kind: ControlKind::CcAck,
            from: self.id,
            to: cc.from,
            payload: Payload::CancelAck { slots },
        };
        Ok((ack, changes))
    }

    pub fn handle_cc_ack(&mut self, ack: &ControlMessage) -> Result<Vec<RtChange>, MacError> {
        let slots = match (&self.pending, &ack.payload) {
            (Some(Pending::Cancel { peer, slots }), Payload::CancelAck { .. }) if *peer == ack.from => slots.clone(),
            _ => return Err(self.unexpected(ack)),
        };
        self.pending = None;
        self.backoff.on_success();
        Ok(self.remove_pair(&slots, self.id, ack.from))
    }

    /// Applies a message addressed to someone else but decoded here.
    pub fn overhear(&mut self, msg: &ControlMessage, frame: u64) -> Result<Vec<RtChange>, MacError> {
        let mut changes = Vec::new();
        match (&msg.kind, &msg.payload) {
            (ControlKind::Ca, Payload::Grant { kind, slots }) => {
                self.insert_pair(slots, msg.to, msg.from, *kind, frame, &mut changes)?;
            }
            (ControlKind::Srb, Payload::Broadcast { tx, rx, kind, slots }) => {
                self.insert_pair(slots, *tx, *rx, *kind, frame, &mut changes)?;
            }
            (ControlKind::Cc, Payload::Cancel { slots }) => {
                changes = self.remove_pair(slots, msg.from, msg.to);
            }
            (ControlKind::CcAck, Payload::CancelAck { slots }) => {
                changes = self.remove_pair(slots, msg.to, msg.from);
            }
            _ => {}
        }
        Ok(changes)
    }

    fn insert_pair(
        &mut self,
        slots: &[CfSlot],
        tx: StationId,
        rx: StationId,
        kind: ReservationKind,
        frame: u64,
        changes: &mut Vec<RtChange>,
    ) -> Result<(), MacError> {
        for &slot in slots {
            let entry = ReservationEntry {
                cf_slot: slot,
                tx,
                rx,
                kind,
                established_frame: frame,
            };
            if self.table.insert(entry)? {
                changes.push(RtChange::Inserted(entry));
            }
        }
        Ok(())
    }

    fn remove_pair(&mut self, slots: &[CfSlot], tx: StationId, rx: StationId) -> Vec<RtChange> {
        slots
            .iter()
            .filter_map(|&s| self.table.remove(s, tx, rx))
            .map(|e| RtChange::Removed(e, RemovalCause::Cancelled))
            .collect()
    }

    pub fn cfp_role(&self, slot: CfSlot) -> SlotRole {
        self.table.role(slot)
    }

    pub fn end_of_frame_cleanup(&mut self) -> Vec<RtChange> {
        self.table
            .clear_datagrams()
            .into_iter()
            .map(|e| RtChange::Removed(e, RemovalCause::FrameEnd))
            .collect()
    }

    /// Own real-time transmit slots towards `peer`.
    pub fn real_time_slots_to(&self, peer: StationId) -> Vec<CfSlot> {
        self.table
            .entries()
            .filter(|e| e.tx == self.id && e.rx == peer && e.kind == ReservationKind::RealTime)
            .map(|e| e.cf_slot)
            .collect()
    }

    fn unexpected(&self, msg: &ControlMessage) -> MacError {
        MacError::Unexpected {
            station: self.id,
            kind: msg.kind,
            from: msg.from,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const X: StationId = StationId(1);
    const Y: StationId = StationId(2);
    const Z: StationId = StationId(3);

    fn station(id: StationId, cf: u16) -> MacStation {
        MacStation::new(id, 5, cf)
    }

    fn occupy(st: &mut MacStation, slots: &[CfSlot]) {
        for &s in slots {
            st.table
                .insert(ReservationEntry {
                    cf_slot: s,
                    tx: StationId(90),
                    rx: StationId(91),
                    kind: ReservationKind::RealTime,
                    established_frame: 0,
                })
                .unwrap();
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn send_cr(x: &mut MacStation, req: ReservationRequest) -> ControlMessage {
        match x.initiate_establishment(0, 5, Y, &req, false, &BackoffPolicy::default(), &mut rng()).unwrap() {
            Initiation::Send(m) => m,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rp_slot_gate() {
        let mut x = station(X, 4);
        assert_eq!(x.my_rp_slot(), 5);
        let err = x
            .initiate_establishment(0, 4, Y, &ReservationRequest::real_time(100, None, 1), false, &BackoffPolicy::default(), &mut rng())
            .unwrap_err();
        assert!(matches!(err, MacError::NotMySlot { own: 5, current: 4, .. }));
    }

    #[test]
    fn idle_medium_sends_request() {
        let mut x = station(X, 4);
        let cr = send_cr(&mut x, ReservationRequest::real_time(100, Some(60_000), 1));
        assert_eq!(cr.kind, ControlKind::Cr);
        match cr.payload {
            Payload::RealTimeRequest { free_slots, deadline_us, .. } => {
                assert_eq!(free_slots.count(), 4);
                assert_eq!(deadline_us, Some(60_000));
            }
            p => panic!("{p:?}"),
        }
    }

    #[test]
    fn busy_medium_backs_off() {
        let mut x = station(X, 4);
        let p = BackoffPolicy::default();
        let mut r = rng();
        let out = x
            .initiate_establishment(3, 5, Y, &ReservationRequest::real_time(100, None, 1), true, &p, &mut r)
            .unwrap();
        assert!(matches!(out, Initiation::Deferred(BackoffOutcome::Deferred { window: 2, .. })));
        assert_eq!(x.backoff().attempt, 1);
        let until = x.backoff().next_eligible_frame;
        let out2 = x
            .initiate_establishment(until, 5, Y, &ReservationRequest::real_time(100, None, 1), true, &p, &mut r)
            .unwrap();
        assert!(matches!(out2, Initiation::Deferred(BackoffOutcome::Deferred { window: 4, .. })));
    }

    #[test]
    fn no_free_slots_is_an_error() {
        let mut x = station(X, 2);
        occupy(&mut x, &[0, 1]);
        let err = x
            .initiate_establishment(0, 5, Y, &ReservationRequest::datagram(100, 3), false, &BackoffPolicy::default(), &mut rng())
            .unwrap_err();
        assert_eq!(err, MacError::NoFreeSlots(X));
    }

    #[test]
    fn grant_is_lowest_common_slot() {
        let mut x = station(X, 6);
        let mut y = station(Y, 6);
        occupy(&mut x, &[0, 4, 5]); // x frees {1,2,3}
        occupy(&mut y, &[0, 1, 2, 5]); // y frees {3,4}
        let cr = send_cr(&mut x, ReservationRequest::real_time(100, None, 1));
        let (ca, changes) = y.handle_cr(&cr, 0).unwrap().unwrap();
        assert_eq!(ca.payload, Payload::Grant { kind: ReservationKind::RealTime, slots: vec![3] });
        assert_eq!(changes.len(), 1);
        assert_eq!(y.cfp_role(3), SlotRole::Receive { from: X, kind: ReservationKind::RealTime });
    }

    #[test]
    fn disjoint_frees_get_no_grant() {
        let mut x = station(X, 4);
        let mut y = station(Y, 4);
        occupy(&mut x, &[0, 1]);
        occupy(&mut y, &[2, 3]);
        let cr = send_cr(&mut x, ReservationRequest::real_time(100, None, 1));
        assert!(y.handle_cr(&cr, 0).unwrap().is_none());
    }

    /// Exhaustive choice oracle: among all 3-subsets of the common frees the
    /// grant is the lexicographically smallest.
    #[test]
    fn datagram_burst_grant() {
        let mut x = station(X, 10);
        let mut y = station(Y, 10);
        occupy(&mut y, &[0, 1, 3, 4, 6, 8]); // common {2,5,7,9}
        let cr = send_cr(&mut x, ReservationRequest::datagram(100, 3));
        let (ca, _) = y.handle_cr(&cr, 0).unwrap().unwrap();
        let common = [2u16, 5, 7, 9];
        let mut subsets = Vec::new();
        for a in 0..4 {
            for b in a + 1..4 {
                for c in b + 1..4 {
                    subsets.push(vec![common[a], common[b], common[c]]);
                }
            }
        }
        subsets.sort();
        assert_eq!(ca.payload, Payload::Grant { kind: ReservationKind::Datagram, slots: subsets[0].clone() });
        assert_eq!(subsets[0], vec![2, 5, 7]);
    }

    #[test]
    fn full_handshake_and_cancel() {
        let mut x = station(X, 4);
        let mut y = station(Y, 4);
        let mut z = station(Z, 4);
        let cr = send_cr(&mut x, ReservationRequest::real_time(100, None, 1));
        let (ca, _) = y.handle_cr(&cr, 0).unwrap().unwrap();
        z.overhear(&ca, 0).unwrap();
        let (srb, _) = x.finalize_establishment(&ca, 0).unwrap();
        z.overhear(&srb, 0).unwrap();
        y.overhear(&srb, 0).unwrap();
        for st in [&x, &y, &z] {
            assert!(st.table().has(0, X, Y), "station {}", st.id());
        }
        assert_eq!(x.cfp_role(0), SlotRole::Transmit { to: Y, kind: ReservationKind::RealTime });
        assert_eq!(z.cfp_role(0), SlotRole::Sleep);
        assert_eq!(x.real_time_slots_to(Y), vec![0]);

        // Datagram-only cleanup leaves the session alone.
        assert!(x.end_of_frame_cleanup().is_empty());

        let cc = x.cancel_connection(1, 5, Y, &[0]).unwrap();
        z.overhear(&cc, 1).unwrap();
        let (ack, removed) = y.handle_cc(&cc).unwrap();
        assert_eq!(removed.len(), 1);
        x.handle_cc_ack(&ack).unwrap();
        for st in [&x, &y, &z] {
            assert_eq!(st.table().entries().count(), 0);
        }
    }

    #[test]
    fn datagram_cancel_rejected() {
        let mut x = station(X, 4);
        let mut y = station(Y, 4);
        let cr = send_cr(&mut x, ReservationRequest::datagram(100, 2));
        let (ca, _) = y.handle_cr(&cr, 0).unwrap().unwrap();
        x.finalize_establishment(&ca, 0).unwrap();
        assert_eq!(x.cancel_connection(0, 5, Y, &[0]), Err(MacError::DatagramCancel));
        assert!(matches!(x.cancel_connection(0, 5, Y, &[3]), Err(MacError::NoSuchReservation { .. })));
        assert_eq!(x.end_of_frame_cleanup().len(), 2);
        assert_eq!(x.cfp_role(0), SlotRole::Sleep);
    }

    #[test]
    fn stray_grant_is_rejected() {
        let mut x = station(X, 4);
        let ca = ControlMessage {
            kind: ControlKind::Ca,
            from: Y,
            to: X,
            payload: Payload::Grant { kind: ReservationKind::RealTime, slots: vec![0] },
        };
        assert!(matches!(x.finalize_establishment(&ca, 0), Err(MacError::Unexpected { .. })));
    }
}
