//! Frame-by-frame simulation, trace emission and trace audits.
//!
//! A run discovers a route for every flow, then steps through frames: the
//! reservation period executes control handshakes three messages per slot,
//! the contention-free period moves one data packet per reserved slot, and
//! frame boundaries expire datagram reservations and meter energy. Every
//! decision lands in the [`Trace`]; the [`SimReport`] and the audits are
//! computed from the trace alone.

mod audit;
mod channel;
mod energy;
mod report;
mod sim;
mod trace;

pub use audit::{
    audit_lemmas, audit_reservation_lifetimes, audit_rt_consistency, AuditError, Counterexample, LemmaVerdicts,
    Verdict,
};
pub use channel::{Channel, Outcome, Reception};
pub use energy::{EnergyMeter, SlotAction, SlotCounts};
pub use report::{FlowReport, SimReport, StationReport};
pub use trace::{
    BackoffCause, EnergyCosts, Event, FlowQueued, LossReason, Phase, Procedure, RemoveReason, Slotting, Trace,
    TraceError, TraceEvent,
};

use crate::mac::{BackoffPolicy, ControlKind, FrameLayout};
use crate::routing::RoutingOptions;
use crate::topology::{Network, StationId, TopologyError};
use crate::traffic::{Flow, FlowId, TrafficError, DEFAULT_SEMI_BONDED_TOLERANCE};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultAction {
    #[default]
    Drop,
}

/// Suppresses every reception of one control message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub kind: ControlKind,
    pub frame: u64,
    pub sender: StationId,
    #[serde(default)]
    pub action: FaultAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub horizon_frames: u64,
    pub layout: FrameLayout,
    pub slotting: Slotting,
    pub interference_multiplier: f64,
    /// Carrier-sense offsets are drawn from `0..sense_window`.
    pub sense_window: u32,
    pub backoff: BackoffPolicy,
    pub energy: EnergyCosts,
    /// Packets per flow queue at one station.
    pub queue_capacity: usize,
    pub semi_bonded_tolerance: u32,
    pub routing: RoutingOptions,
    pub faults: Vec<Fault>,
}

pub const DEFAULT_HORIZON_FRAMES: u64 = 200;
pub const DEFAULT_SENSE_WINDOW: u32 = 4;
pub const DEFAULT_QUEUE_CAPACITY: usize = 256;

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon_frames: DEFAULT_HORIZON_FRAMES,
            layout: FrameLayout::default(),
            slotting: Slotting::Grid,
            interference_multiplier: 1.0,
            sense_window: DEFAULT_SENSE_WINDOW,
            backoff: BackoffPolicy::default(),
            energy: EnergyCosts::default(),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            semi_bonded_tolerance: DEFAULT_SEMI_BONDED_TOLERANCE,
            routing: RoutingOptions::default(),
            faults: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error("frame has {frame} reservation slots but the grid modulus is {grid}")]
    RpSlotMismatch { frame: u32, grid: u32 },
    #[error("duplicate flow id {0}")]
    DuplicateFlow(FlowId),
    #[error("interference multiplier must be at least 1, got {0}")]
    BadMultiplier(f64),
    #[error("sense window must be positive")]
    ZeroSenseWindow,
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: SimReport,
    pub trace: Trace,
}

/// Runs `flows` over `net` and audits the resulting trace.
pub fn run(net: &Network, flows: &[Flow], cfg: &SimConfig) -> Result<SimOutput, EngineError> {
    let trace = sim::simulate(net, flows, cfg)?;
    let mut report = SimReport::from_trace(&trace)?;
    report.lemmas = Some(audit_lemmas(&trace, net)?);
    Ok(SimOutput { report, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use crate::topology::StationSpec;
    use crate::traffic::ClassName;
    use std::f64::consts::FRAC_PI_2;

    /// Three cluster heads in a row, spaced one cell apart, and a remote sink.
    fn line() -> Network {
        let mut specs: Vec<StationSpec> = (0..3)
            .map(|i| StationSpec::cluster_head(i + 1, 5.0 + 10.0 * i as f64, 5.0, 0.0, FRAC_PI_2, 10.0, 10.0))
            .collect();
        specs.push(StationSpec::base_station(100, 500.0, 500.0, 10.0));
        Network::new(specs, GridSpec::square(10.0).unwrap()).unwrap()
    }

    fn voice() -> Flow {
        Flow::new(1, StationId(1), StationId(3), ClassName::Cbr, 64_000, 1_000)
    }

    #[test]
    fn empty_scenario_sleeps() {
        let cfg = SimConfig {
            horizon_frames: 10,
            ..SimConfig::default()
        };
        let out = run(&line(), &[], &cfg).unwrap();
        for s in &out.report.stations {
            assert_eq!(s.sleep_slots, 200);
            assert_eq!(s.tx_slots + s.rx_slots, 0);
        }
        assert!(out.report.flows.is_empty());
        assert!(out.report.lemmas.unwrap().all_passed());
    }

    #[test]
    fn two_hop_voice_is_delivered() {
        let out = run(&line(), &[voice()], &SimConfig::default()).unwrap();
        let f = &out.report.flows[0];
        assert_eq!(f.path.as_deref(), Some(&[StationId(1), StationId(2), StationId(3)][..]));
        assert!(f.generated > 150);
        assert_eq!(f.dropped_deadline + f.dropped_collision + f.dropped_overflow, 0);
        assert_eq!(f.generated, f.delivered + f.queued_at_end);
        assert_eq!(out.report.control_collisions, 0);
        assert_eq!(out.report.data_collisions, 0);
        assert!(out.report.lemmas.unwrap().all_passed());
    }

    #[test]
    fn datagram_shares_a_hop_with_voice() {
        let data = Flow::new(2, StationId(1), StationId(3), ClassName::Abr, 1_000_000, 8_000);
        let out = run(&line(), &[voice(), data], &SimConfig::default()).unwrap();
        let f = &out.report.flows[1];
        assert!(f.delivered > 300, "{f:?}");
        assert_eq!(f.dropped(), 0);
        assert_eq!(f.generated, f.delivered + f.queued_at_end);
        assert!(audit_reservation_lifetimes(&out.trace).unwrap().passed);
        assert!(out.report.lemmas.unwrap().all_passed());
    }

    #[test]
    fn identical_inputs_identical_traces() {
        let cfg = SimConfig::default();
        let a = run(&line(), &[voice()], &cfg).unwrap();
        let b = run(&line(), &[voice()], &cfg).unwrap();
        assert_eq!(a.trace.digest(), b.trace.digest());
        assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SimConfig {
            interference_multiplier: 0.5,
            ..SimConfig::default()
        };
        assert!(matches!(run(&line(), &[], &cfg), Err(EngineError::BadMultiplier(_))));
        let cfg = SimConfig {
            layout: FrameLayout {
                rp_slots: 9,
                ..FrameLayout::default()
            },
            ..SimConfig::default()
        };
        assert!(matches!(run(&line(), &[], &cfg), Err(EngineError::RpSlotMismatch { .. })));
        assert!(matches!(
            run(&line(), &[voice(), voice()], &SimConfig::default()),
            Err(EngineError::DuplicateFlow(_))
        ));
    }
}
