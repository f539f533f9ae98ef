use serde::{Deserialize, Serialize};

/// Time is kept in integer microseconds.
pub type Micros = u64;

/// A frame is `rp_slots` reservation slots followed by `cf_slots`
/// contention-free slots. Each reservation slot carries up to three control
/// messages; each contention-free slot one data packet and its ACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub rp_slots: u32,
    pub cf_slots: u16,
    pub rp_slot_len: Micros,
    pub cf_slot_len: Micros,
}

/// Control messages that fit in one reservation slot.
pub const MESSAGES_PER_RP_SLOT: u8 = 3;

impl FrameLayout {
    pub fn frame_len(&self) -> Micros {
        self.rp_slots as Micros * self.rp_slot_len + self.cf_slots as Micros * self.cf_slot_len
    }

    pub fn slots_per_frame(&self) -> u64 {
        self.rp_slots as u64 + self.cf_slots as u64
    }

    pub fn frame_start(&self, frame: u64) -> Micros {
        frame * self.frame_len()
    }

    pub fn rp_slot_start(&self, frame: u64, slot: u32) -> Micros {
        self.frame_start(frame) + slot as Micros * self.rp_slot_len
    }

    pub fn cf_slot_start(&self, frame: u64, slot: u16) -> Micros {
        self.frame_start(frame) + self.rp_slots as Micros * self.rp_slot_len + slot as Micros * self.cf_slot_len
    }

    pub fn cf_slot_end(&self, frame: u64, slot: u16) -> Micros {
        self.cf_slot_start(frame, slot) + self.cf_slot_len
    }

    /// Frame containing instant `t`.
    pub fn frame_of(&self, t: Micros) -> u64 {
        t / self.frame_len()
    }
}

impl Default for FrameLayout {
    fn default() -> Self {
        Self {
            rp_slots: 11,
            cf_slots: 20,
            rp_slot_len: 300,
            cf_slot_len: 500,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing() {
        let f = FrameLayout::default();
        assert_eq!(f.frame_len(), 11 * 300 + 20 * 500);
        assert_eq!(f.rp_slot_start(2, 3), 2 * 13_300 + 900);
        assert_eq!(f.cf_slot_start(0, 0), 3_300);
        assert_eq!(f.cf_slot_end(1, 19), 2 * 13_300);
        assert_eq!(f.frame_of(13_299), 0);
        assert_eq!(f.frame_of(13_300), 1);
        assert_eq!(f.slots_per_frame(), 31);
    }
}
