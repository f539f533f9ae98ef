use crate::topology::StationId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use super::MacError;

pub type CfSlot = u16;

/// Fixed-width bitmap over the contention-free slots of a frame.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotBitmap {
    width: u16,
    words: Vec<u64>,
}

impl SlotBitmap {
    pub fn empty(width: u16) -> Self {
        Self {
            width,
            words: vec![0; (width as usize).div_ceil(64)],
        }
    }

    pub fn full(width: u16) -> Self {
        let mut b = Self::empty(width);
        for s in 0..width {
            b.set(s);
        }
        b
    }

    pub fn from_slots(width: u16, slots: impl IntoIterator<Item = CfSlot>) -> Self {
        let mut b = Self::empty(width);
        for s in slots {
            b.set(s);
        }
        b
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn set(&mut self, slot: CfSlot) {
        assert!(slot < self.width, "slot {slot} outside bitmap of width {}", self.width);
        self.words[slot as usize / 64] |= 1 << (slot % 64);
    }

    pub fn contains(&self, slot: CfSlot) -> bool {
        slot < self.width && self.words[slot as usize / 64] & (1 << (slot % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersect(&self, other: &SlotBitmap) -> SlotBitmap {
        let width = self.width.min(other.width);
        let mut out = SlotBitmap::empty(width);
        for (i, w) in out.words.iter_mut().enumerate() {
            *w = self.words[i] & other.words[i];
        }
        if !width.is_multiple_of(64) {
            if let Some(last) = out.words.last_mut() {
                *last &= (1u64 << (width % 64)) - 1;
            }
        }
        out
    }

    /// Set slots in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = CfSlot> + '_ {
        (0..self.width).filter(move |&s| self.contains(s))
    }
}

impl fmt::Debug for SlotBitmap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservationKind {
    RealTime,
    Datagram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReservationEntry {
    pub cf_slot: CfSlot,
    pub tx: StationId,
    pub rx: StationId,
    pub kind: ReservationKind,
    pub established_frame: u64,
}

impl ReservationEntry {
    /// Identity used for cross-table agreement; ignores when it was learnt.
    pub fn key(&self) -> (CfSlot, StationId, StationId, ReservationKind) {
        (self.cf_slot, self.tx, self.rx, self.kind)
    }

    pub fn involves(&self, id: StationId) -> bool {
        self.tx == id || self.rx == id
    }
}

/// What the owner does in a contention-free slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRole {
    Transmit { to: StationId, kind: ReservationKind },
    Receive { from: StationId, kind: ReservationKind },
    Sleep,
}

/// Per-station view of contention-free slot usage in its neighbourhood.
///
/// The owner takes part in at most one reservation per slot. Overheard
/// reservations of other pairs may share a slot when spatial reuse put two
/// non-interfering pairs in range of the owner.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservationTable {
    owner: StationId,
    cf_slots: u16,
    slots: BTreeMap<CfSlot, Vec<ReservationEntry>>,
}

impl ReservationTable {
    pub fn new(owner: StationId, cf_slots: u16) -> Self {
        Self {
            owner,
            cf_slots,
            slots: BTreeMap::new(),
        }
    }

    pub fn owner(&self) -> StationId {
        self.owner
    }

    pub fn cf_slots(&self) -> u16 {
        self.cf_slots
    }

    pub fn free_slots(&self) -> SlotBitmap {
        SlotBitmap::from_slots(self.cf_slots, (0..self.cf_slots).filter(|s| !self.slots.contains_key(s)))
    }

    pub fn occupied_count(&self) -> usize {
        self.slots.len()
    }

    pub fn is_free(&self, slot: CfSlot) -> bool {
        !self.slots.contains_key(&slot)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ReservationEntry> {
        self.slots.values().flatten()
    }

    pub fn entries_in(&self, slot: CfSlot) -> &[ReservationEntry] {
        self.slots.get(&slot).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has(&self, slot: CfSlot, tx: StationId, rx: StationId) -> bool {
        self.entries_in(slot).iter().any(|e| e.tx == tx && e.rx == rx)
    }

    pub fn own_entry(&self, slot: CfSlot) -> Option<&ReservationEntry> {
        self.entries_in(slot).iter().find(|e| e.involves(self.owner))
    }

    /// Inserts unless an identical pair already holds the slot. Returns
    /// whether the table changed.
    pub fn insert(&mut self, entry: ReservationEntry) -> Result<bool, MacError> {
        if entry.tx == entry.rx {
            return Err(MacError::SelfReservation(entry.tx));
        }
        if entry.cf_slot >= self.cf_slots {
            return Err(MacError::SlotOutOfRange(entry.cf_slot, self.cf_slots));
        }
        if entry.involves(self.owner) {
            if let Some(own) = self.own_entry(entry.cf_slot) {
                if (own.tx, own.rx) != (entry.tx, entry.rx) {
                    return Err(MacError::SlotConflict {
                        station: self.owner,
                        slot: entry.cf_slot,
                    });
                }
            }
        }
        let list = self.slots.entry(entry.cf_slot).or_default();
        if list.iter().any(|e| e.tx == entry.tx && e.rx == entry.rx) {
            return Ok(false);
        }
        list.push(entry);
        list.sort_by_key(|e| (e.tx, e.rx));
        Ok(true)
    }

    pub fn remove(&mut self, slot: CfSlot, tx: StationId, rx: StationId) -> Option<ReservationEntry> {
        let list = self.slots.get_mut(&slot)?;
        let pos = list.iter().position(|e| e.tx == tx && e.rx == rx)?;
        let e = list.remove(pos);
        if list.is_empty() {
            self.slots.remove(&slot);
        }
        Some(e)
    }

    /// Drops every datagram entry; real-time ones persist until cancelled.
    pub fn clear_datagrams(&mut self) -> Vec<ReservationEntry> {
        let mut removed = Vec::new();
        self.slots.retain(|_, list| {
            list.retain(|e| {
                let dg = e.kind == ReservationKind::Datagram;
                if dg {
                    removed.push(*e);
                }
                !dg
            });
            !list.is_empty()
        });
        removed
    }

    pub fn role(&self, slot: CfSlot) -> SlotRole {
        match self.own_entry(slot) {
            Some(e) if e.tx == self.owner => SlotRole::Transmit { to: e.rx, kind: e.kind },
            Some(e) => SlotRole::Receive { from: e.tx, kind: e.kind },
            None => SlotRole::Sleep,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(slot: u16, tx: u32, rx: u32, kind: ReservationKind) -> ReservationEntry {
        ReservationEntry {
            cf_slot: slot,
            tx: StationId(tx),
            rx: StationId(rx),
            kind,
            established_frame: 0,
        }
    }

    #[test]
    fn bitmap_ops() {
        let a = SlotBitmap::from_slots(70, [1, 2, 3, 65]);
        let b = SlotBitmap::from_slots(70, [3, 4, 65, 69]);
        assert_eq!(a.intersect(&b).iter().collect::<Vec<_>>(), vec![3, 65]);
        assert_eq!(SlotBitmap::full(70).count(), 70);
        assert!(SlotBitmap::empty(5).is_empty());
        assert!(!a.contains(200));
    }

    #[test]
    fn owner_conflicts_and_stacking() {
        let mut t = ReservationTable::new(StationId(1), 4);
        assert!(t.insert(e(0, 1, 2, ReservationKind::RealTime)).unwrap());
        assert!(!t.insert(e(0, 1, 2, ReservationKind::RealTime)).unwrap());
        assert!(matches!(
            t.insert(e(0, 3, 1, ReservationKind::RealTime)),
            Err(MacError::SlotConflict { .. })
        ));
        // Overheard pairs can stack.
        assert!(t.insert(e(2, 5, 6, ReservationKind::Datagram)).unwrap());
        assert!(t.insert(e(2, 7, 8, ReservationKind::Datagram)).unwrap());
        assert_eq!(t.free_slots().iter().collect::<Vec<_>>(), vec![1, 3]);
        assert!(matches!(t.insert(e(9, 5, 6, ReservationKind::Datagram)), Err(MacError::SlotOutOfRange(9, 4))));
        assert!(matches!(t.insert(e(1, 5, 5, ReservationKind::Datagram)), Err(MacError::SelfReservation(_))));
        assert_eq!(t.role(0), SlotRole::Transmit { to: StationId(2), kind: ReservationKind::RealTime });
        assert_eq!(t.role(2), SlotRole::Sleep);
    }

    #[test]
    fn datagram_cleanup() {
        let mut t = ReservationTable::new(StationId(1), 8);
        t.insert(e(0, 1, 2, ReservationKind::Datagram)).unwrap();
        t.insert(e(1, 3, 1, ReservationKind::Datagram)).unwrap();
        t.insert(e(2, 1, 2, ReservationKind::RealTime)).unwrap();
        let removed = t.clear_datagrams();
        assert_eq!(removed.len(), 2);
        assert_eq!(t.entries().count(), 1);
        assert_eq!(t.role(2), SlotRole::Transmit { to: StationId(2), kind: ReservationKind::RealTime });

        let mut rt_only = ReservationTable::new(StationId(1), 8);
        rt_only.insert(e(4, 2, 1, ReservationKind::RealTime)).unwrap();
        let before = rt_only.clone();
        assert!(rt_only.clear_datagrams().is_empty());
        assert_eq!(rt_only, before);
    }

    proptest! {
        #[test]
        fn slot_conservation(ops in prop::collection::vec((0u16..16, 0u32..6, 0u32..6, any::<bool>(), any::<bool>()), 0..60)) {
            let mut t = ReservationTable::new(StationId(0), 16);
            for (slot, tx, rx, rt, remove) in ops {
                let kind = if rt { ReservationKind::RealTime } else { ReservationKind::Datagram };
                if remove {
                    t.remove(slot, StationId(tx), StationId(rx));
                } else {
                    let _ = t.insert(e(slot, tx, rx, kind));
                }
                prop_assert_eq!(t.occupied_count() + t.free_slots().count(), 16);
                for s in 0..16 {
                    let own = t.entries_in(s).iter().filter(|x| x.involves(StationId(0))).count();
                    prop_assert!(own <= 1);
                }
            }
        }
    }
}
