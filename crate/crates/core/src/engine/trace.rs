//! Event trace: one JSON object per line, in total event order.

use crate::mac::{CfSlot, ControlKind, ControlMessage, Micros, ReservationKind};
use crate::topology::StationId;
use crate::traffic::{ClassName, DropReason, FlowId, SessionState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Before the first frame.
    #[serde(rename = "SETUP")]
    Setup,
    #[serde(rename = "RP")]
    Rp,
    #[serde(rename = "CFP")]
    Cfp,
    /// Frame boundary bookkeeping.
    #[serde(rename = "END")]
    End,
}

/// How stations pick their reservation-period slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slotting {
    /// Slot of the station's grid cell.
    #[default]
    Grid,
    /// Every station uses slot 0.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReason {
    /// Another transmitter covered the receiver.
    Collision,
    /// The receiver was transmitting itself.
    HalfDuplex,
    /// The receiver was not listening in this slot.
    ReceiverAsleep,
    /// Removed by an injected fault.
    Fault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackoffCause {
    CarrierBusy,
    NoReply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    Establish,
    Cancel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemoveReason {
    Cancelled,
    FrameEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCosts {
    pub tx: f64,
    pub rx: f64,
    pub idle: f64,
    pub sleep: f64,
}

impl Default for EnergyCosts {
    fn default() -> Self {
        Self {
            tx: 1.0,
            rx: 0.8,
            idle: 0.5,
            sleep: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowQueued {
    pub flow: FlowId,
    pub queued: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "detail", rename_all = "snake_case")]
pub enum Event {
    RunStart {
        seed: u64,
        horizon_frames: u64,
        rp_slots: u32,
        cf_slots: u16,
        slotting: Slotting,
        interference_multiplier: f64,
        energy: EnergyCosts,
        stations: Vec<StationId>,
    },
    Route {
        flow: FlowId,
        class: ClassName,
        src: StationId,
        dst: StationId,
        path: Option<Vec<StationId>>,
        d_path: Option<f64>,
        paths_found: usize,
        error: Option<String>,
    },
    CtrlTx {
        sub_slot: u8,
        message: ControlMessage,
    },
    CtrlRx {
        sub_slot: u8,
        kind: ControlKind,
        from: StationId,
        to: StationId,
    },
    CtrlLost {
        sub_slot: u8,
        kind: ControlKind,
        from: StationId,
        to: StationId,
        reason: LossReason,
        interferers: Vec<StationId>,
    },
    Backoff {
        cause: BackoffCause,
        until: u64,
        window: Option<u32>,
        exhausted: bool,
    },
    RtInsert {
        cf_slot: CfSlot,
        tx: StationId,
        rx: StationId,
        kind: ReservationKind,
    },
    RtRemove {
        cf_slot: CfSlot,
        tx: StationId,
        rx: StationId,
        kind: ReservationKind,
        reason: RemoveReason,
    },
    HandshakeDone {
        procedure: Procedure,
        tx: StationId,
        rx: StationId,
        kind: ReservationKind,
        slots: Vec<CfSlot>,
    },
    MacError {
        message: String,
    },
    PktGen {
        flow: FlowId,
        seq: u64,
        created: Micros,
        deadline: Option<Micros>,
    },
    PktDeliver {
        flow: FlowId,
        seq: u64,
        created: Micros,
        delivered: Micros,
    },
    PktDrop {
        flow: FlowId,
        seq: u64,
        reason: DropReason,
    },
    DataTx {
        flow: FlowId,
        seq: u64,
        to: StationId,
        kind: ReservationKind,
    },
    DataRx {
        flow: FlowId,
        seq: u64,
        from: StationId,
    },
    DataLost {
        flow: FlowId,
        seq: u64,
        from: StationId,
        to: StationId,
        reason: LossReason,
        interferers: Vec<StationId>,
    },
    Session {
        flow: FlowId,
        state: SessionState,
    },
    Energy {
        tx: u64,
        rx: u64,
        idle: u64,
        sleep: u64,
    },
    RunEnd {
        frames: u64,
        queued: Vec<FlowQueued>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub frame: u64,
    pub slot: u32,
    pub phase: Phase,
    pub station: Option<StationId>,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("trace is empty or lacks a run_start event")]
    MissingStart,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, frame: u64, slot: u32, phase: Phase, station: Option<StationId>, event: Event) {
        self.events.push(TraceEvent {
            frame,
            slot,
            phase,
            station,
            event,
        });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let line = serde_json::to_string(e).expect("trace events serialize");
            let _ = writeln!(out, "{line}");
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEvent = serde_json::from_str(line).map_err(|err| TraceError::Malformed {
                line: i + 1,
                message: err.to_string(),
            })?;
            events.push(e);
        }
        Ok(Self { events })
    }

    /// Hex SHA-256 of the JSONL rendering.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }
}
