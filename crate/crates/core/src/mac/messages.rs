use super::table::{CfSlot, ReservationKind, SlotBitmap};
use crate::topology::StationId;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControlKind {
    #[serde(rename = "CR")]
    Cr,
    #[serde(rename = "CA")]
    Ca,
    #[serde(rename = "SRB")]
    Srb,
    #[serde(rename = "CC")]
    Cc,
    #[serde(rename = "CC_ACK")]
    CcAck,
}

impl ControlKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Cr => "CR",
            Self::Ca => "CA",
            Self::Srb => "SRB",
            Self::Cc => "CC",
            Self::CcAck => "CC_ACK",
        }
    }

    /// Position of the message inside its reservation slot.
    pub fn sub_slot(&self) -> u8 {
        match self {
            Self::Cr | Self::Cc => 0,
            Self::Ca | Self::CcAck => 1,
            Self::Srb => 2,
        }
    }
}

impl fmt::Display for ControlKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    /// Connection request for a real-time session.
    RealTimeRequest {
        packet_length: u32,
        free_slots: SlotBitmap,
        deadline_us: Option<u64>,
        slots_wanted: u16,
    },
    /// Connection request for a buffered datagram burst.
    DatagramRequest {
        packet_length: u32,
        free_slots: SlotBitmap,
        buffered_packets: u32,
    },
    Grant {
        kind: ReservationKind,
        slots: Vec<CfSlot>,
    },
    Broadcast {
        tx: StationId,
        rx: StationId,
        kind: ReservationKind,
        slots: Vec<CfSlot>,
    },
    Cancel {
        slots: Vec<CfSlot>,
    },
    CancelAck {
        slots: Vec<CfSlot>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMessage {
    pub kind: ControlKind,
    pub from: StationId,
    /// Addressee; the reservation broadcast is heard by everyone in range.
    pub to: StationId,
    pub payload: Payload,
}

impl ControlMessage {
    pub fn request_kind(&self) -> Option<ReservationKind> {
        match self.payload {
            Payload::RealTimeRequest { .. } => Some(ReservationKind::RealTime),
            Payload::DatagramRequest { .. } => Some(ReservationKind::Datagram),
            Payload::Grant { kind, .. } | Payload::Broadcast { kind, .. } => Some(kind),
            _ => None,
        }
    }
}
