use super::class::{standard_class, ClassName, DelayBound, ServiceClass};
use super::TrafficError;
use crate::mac::{Micros, ReservationKind};
use crate::topology::StationId;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub u32);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceMode {
    /// The reservation must be held without interruption for the session.
    Bonded,
    /// Short reservation gaps are tolerated.
    SemiBonded,
    #[default]
    None,
}

pub const DEFAULT_BURST_LENGTH: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub id: FlowId,
    pub src: StationId,
    pub dst: StationId,
    pub class: ServiceClass,
    pub service_mode: ServiceMode,
    /// bits per second
    pub rate: u64,
    /// bits
    pub packet_size: u32,
    /// Datagram burst length N.
    pub burst_length: u32,
    pub start_frame: u64,
    /// Exclusive.
    pub stop_frame: u64,
    /// Overrides the class's default budget; must lie inside the class range.
    pub delay_bound_ms: Option<u32>,
}

impl Flow {
    pub fn new(id: u32, src: StationId, dst: StationId, class: ClassName, rate: u64, packet_size: u32) -> Self {
        Self {
            id: FlowId(id),
            src,
            dst,
            class: standard_class(class),
            service_mode: ServiceMode::None,
            rate,
            packet_size,
            burst_length: DEFAULT_BURST_LENGTH,
            start_frame: 0,
            stop_frame: u64::MAX,
            delay_bound_ms: None,
        }
    }

    pub fn with_mode(mut self, mode: ServiceMode) -> Self {
        self.service_mode = mode;
        self
    }

    pub fn active_between(mut self, start: u64, stop: u64) -> Self {
        self.start_frame = start;
        self.stop_frame = stop;
        self
    }

    pub fn is_real_time(&self) -> bool {
        self.class.name.is_real_time()
    }

    pub fn reservation_kind(&self) -> ReservationKind {
        if self.is_real_time() {
            ReservationKind::RealTime
        } else {
            ReservationKind::Datagram
        }
    }

    pub fn is_active(&self, frame: u64) -> bool {
        (self.start_frame..self.stop_frame).contains(&frame)
    }

    pub fn delay_budget_ms(&self) -> Option<u32> {
        self.delay_bound_ms.or(self.class.default_delay_ms())
    }

    pub fn deadline_for(&self, created: Micros) -> Option<Micros> {
        self.delay_budget_ms().map(|ms| created + ms as Micros * 1_000)
    }

    /// Contention-free slots per frame needed to carry the flow's rate.
    pub fn slots_per_frame(&self, frame_len: Micros, cf_slots: u16) -> u16 {
        let bits = self.rate as u128 * frame_len as u128;
        let per_slot = self.packet_size as u128 * 1_000_000;
        (bits.div_ceil(per_slot).max(1)).min(cf_slots as u128) as u16
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        if !self.class.rate_in_bounds(self.rate) {
            return Err(TrafficError::RateOutOfClass {
                flow: self.id,
                rate: self.rate,
                min: self.class.bandwidth_min,
                max: self.class.bandwidth_max,
            });
        }
        if self.packet_size == 0 {
            return Err(TrafficError::ZeroPacketSize(self.id));
        }
        if self.burst_length == 0 {
            return Err(TrafficError::ZeroBurstLength(self.id));
        }
        if self.service_mode != ServiceMode::None && !self.is_real_time() {
            return Err(TrafficError::ServiceModeOnDatagram(self.id));
        }
        if self.src == self.dst {
            return Err(TrafficError::LoopFlow(self.id));
        }
        if self.start_frame > self.stop_frame {
            return Err(TrafficError::BadWindow(self.id));
        }
        if let Some(ms) = self.delay_bound_ms {
            match self.class.delay_bound {
                DelayBound::Bounded { min_ms, max_ms } if (min_ms..=max_ms).contains(&ms) => {}
                _ => return Err(TrafficError::DelayOutOfClass { flow: self.id, ms }),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Collision,
    DeadlineMiss,
    Overflow,
}

impl DropReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Collision => "collision",
            Self::DeadlineMiss => "deadline_miss",
            Self::Overflow => "overflow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub flow: FlowId,
    pub seq: u64,
    pub created: Micros,
    pub deadline: Option<Micros>,
    pub delivered: Option<Micros>,
    pub dropped: Option<DropReason>,
}

impl PacketRecord {
    pub fn new(flow: FlowId, seq: u64, created: Micros, deadline: Option<Micros>) -> Self {
        Self {
            flow,
            seq,
            created,
            deadline,
            delivered: None,
            dropped: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.delivered.is_some() || self.dropped.is_some()
    }

    /// Marks delivery; refuses a packet that already has a fate.
    pub fn deliver(&mut self, at: Micros) -> bool {
        if self.is_terminal() {
            return false;
        }
        self.delivered = Some(at);
        true
    }

    pub fn drop_with(&mut self, reason: DropReason) -> bool {
        if self.is_terminal() {
            return false;
        }
        self.dropped = Some(reason);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn voice(rate: u64) -> Flow {
        Flow::new(1, StationId(0), StationId(1), ClassName::Cbr, rate, 1_000)
    }

    #[test]
    fn validation() {
        assert!(voice(64_000).validate().is_ok());
        assert!(matches!(voice(5_000_000).validate(), Err(TrafficError::RateOutOfClass { .. })));
        let mut f = voice(64_000);
        f.delay_bound_ms = Some(90);
        assert!(matches!(f.validate(), Err(TrafficError::DelayOutOfClass { .. })));
        let dg = Flow::new(2, StationId(0), StationId(1), ClassName::Ubr, 2_000_000, 8_000).with_mode(ServiceMode::Bonded);
        assert_eq!(dg.validate(), Err(TrafficError::ServiceModeOnDatagram(FlowId(2))));
    }

    #[test]
    fn deadlines_and_slot_needs() {
        let f = voice(64_000);
        assert_eq!(f.deadline_for(1_000), Some(61_000));
        assert_eq!(Flow::new(3, StationId(0), StationId(1), ClassName::Abr, 1_000_000, 8_000).deadline_for(5), None);
        // 64 kb/s over a 13.3 ms frame is 0.85 packets of 1 kb.
        assert_eq!(f.slots_per_frame(13_300, 20), 1);
        assert_eq!(voice(200_000).slots_per_frame(13_300, 20), 3);
    }

    #[test]
    fn packet_fates_exclusive() {
        let mut p = PacketRecord::new(FlowId(0), 0, 0, None);
        assert!(p.deliver(10));
        assert!(!p.drop_with(DropReason::Collision));
        let mut q = PacketRecord::new(FlowId(0), 1, 0, None);
        assert!(q.drop_with(DropReason::DeadlineMiss));
        assert!(!q.deliver(3));
    }
}
