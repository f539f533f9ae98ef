//! Service classes, flows, packet sources and the per-station queues that
//! decide when a reservation is needed.

mod class;
mod flow;
mod queue;
mod source;

pub use class::{standard_class, standard_class_by_name, ClassName, DelayBound, ServiceClass};
pub use flow::{DropReason, Flow, FlowId, PacketRecord, ServiceMode, DEFAULT_BURST_LENGTH};
pub use queue::{FlowQueue, QueuedPacket, StationQueues, Trigger};
pub use source::{TrafficSource, VBR_SWITCH_PROBABILITY};

use crate::topology::StationId;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrafficError {
    #[error("unknown service class `{0}`")]
    UnknownClass(String),
    #[error("flow {flow}: rate {rate} b/s outside class range {min}..={max}")]
    RateOutOfClass { flow: FlowId, rate: u64, min: u64, max: u64 },
    #[error("flow {0}: packet size must be positive")]
    ZeroPacketSize(FlowId),
    #[error("flow {0}: burst length must be positive")]
    ZeroBurstLength(FlowId),
    #[error("flow {0}: service modes apply only to real-time classes")]
    ServiceModeOnDatagram(FlowId),
    #[error("flow {0}: source and destination coincide")]
    LoopFlow(FlowId),
    #[error("flow {0}: start frame after stop frame")]
    BadWindow(FlowId),
    #[error("flow {flow}: delay bound {ms} ms outside the class range")]
    DelayOutOfClass { flow: FlowId, ms: u32 },
    #[error("flow {flow}: queue at station {station} is full")]
    Overflow { flow: FlowId, station: StationId },
    #[error("flow {flow}: station {station} is not on its path")]
    UnboundFlow { flow: FlowId, station: StationId },
}

/// Default reservation gap, in frames, a semi-bonded session absorbs.
pub const DEFAULT_SEMI_BONDED_TOLERANCE: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Pending,
    Active,
    Degraded,
    Failed,
}

/// Watches one hop of a real-time session for reservation continuity.
#[derive(Debug, Clone)]
pub struct SessionMonitor {
    mode: ServiceMode,
    tolerance: u32,
    state: SessionState,
    gap: u32,
}

impl SessionMonitor {
    pub fn new(mode: ServiceMode, tolerance: u32) -> Self {
        Self {
            mode,
            tolerance,
            state: SessionState::Pending,
            gap: 0,
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// Feeds one frame of the session's life. Returns the new state when it
    /// changes. `exhausted` reports a request that ran out of retries.
    pub fn observe(&mut self, reserved: bool, exhausted: bool) -> Option<SessionState> {
        if self.state == SessionState::Failed {
            return None;
        }
        let before = self.state;
        let established = self.state != SessionState::Pending;
        if reserved {
            self.gap = 0;
            self.state = SessionState::Active;
        } else {
            if established {
                self.gap += 1;
            }
            match self.mode {
                ServiceMode::Bonded if established || exhausted => self.state = SessionState::Failed,
                ServiceMode::SemiBonded if self.gap > self.tolerance || exhausted => {
                    self.state = SessionState::Degraded
                }
                _ => {}
            }
        }
        (self.state != before).then_some(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bonded_fails_on_first_gap() {
        let mut m = SessionMonitor::new(ServiceMode::Bonded, 2);
        assert_eq!(m.observe(false, false), None);
        assert_eq!(m.observe(true, false), Some(SessionState::Active));
        assert_eq!(m.observe(true, false), None);
        assert_eq!(m.observe(false, false), Some(SessionState::Failed));
        assert_eq!(m.observe(true, false), None);
        assert_eq!(m.state(), SessionState::Failed);
    }

    #[test]
    fn bonded_fails_when_never_granted() {
        let mut m = SessionMonitor::new(ServiceMode::Bonded, 2);
        assert_eq!(m.observe(false, true), Some(SessionState::Failed));
    }

    #[test]
    fn semi_bonded_tolerates_short_gaps() {
        let mut m = SessionMonitor::new(ServiceMode::SemiBonded, 2);
        m.observe(true, false);
        assert_eq!(m.observe(false, false), None);
        assert_eq!(m.observe(false, false), None);
        assert_eq!(m.observe(true, false), None);
        m.observe(false, false);
        m.observe(false, false);
        assert_eq!(m.observe(false, false), Some(SessionState::Degraded));
        assert_eq!(m.observe(true, false), Some(SessionState::Active));
    }

    #[test]
    fn best_effort_never_flags() {
        let mut m = SessionMonitor::new(ServiceMode::None, 0);
        m.observe(true, false);
        for _ in 0..10 {
            assert_eq!(m.observe(false, true), None);
        }
    }
}
