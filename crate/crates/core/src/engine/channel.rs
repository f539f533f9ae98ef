//! Protocol interference model over the shared radio channel.
//!
//! A receiver decodes a sender when it lies inside the sender's radio range,
//! is not transmitting itself, and no other transmitter's interference disk
//! covers it. There is no capture.

use super::trace::LossReason;
use crate::topology::{Network, StationId};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reception {
    Decoded,
    Lost { reason: LossReason, interferers: Vec<StationId> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub sender: StationId,
    pub receiver: StationId,
    pub reception: Reception,
}

/// Geometry of the radio channel among cluster heads.
#[derive(Debug, Clone)]
pub struct Channel {
    heads: Vec<StationId>,
    reach: BTreeMap<(StationId, StationId), bool>,
    cover: BTreeMap<(StationId, StationId), bool>,
}

impl Channel {
    pub fn new(net: &Network, interference_multiplier: f64) -> Self {
        let heads: Vec<StationId> = net.cluster_heads().map(|s| s.id).collect();
        let mut reach = BTreeMap::new();
        let mut cover = BTreeMap::new();
        for a in net.cluster_heads() {
            for b in net.cluster_heads() {
                if a.id == b.id {
                    continue;
                }
                let d = a.position.distance(&b.position);
                reach.insert((a.id, b.id), d <= a.rf_range);
                cover.insert((a.id, b.id), d <= a.rf_range * interference_multiplier);
            }
        }
        Self { heads, reach, cover }
    }

    pub fn heads(&self) -> &[StationId] {
        &self.heads
    }

    /// `to` is inside `from`'s radio range.
    pub fn reaches(&self, from: StationId, to: StationId) -> bool {
        self.reach.get(&(from, to)).copied().unwrap_or(false)
    }

    /// `from`'s transmissions interfere at `at`.
    pub fn covers(&self, from: StationId, at: StationId) -> bool {
        self.cover.get(&(from, at)).copied().unwrap_or(false)
    }

    /// Cluster heads that can decode `from` when the channel is otherwise quiet.
    pub fn audience(&self, from: StationId) -> impl Iterator<Item = StationId> + '_ {
        self.heads.iter().copied().filter(move |&r| self.reaches(from, r))
    }

    /// Outcome at `receiver` of `sender`'s transmission given every
    /// concurrent sender this slot.
    pub fn receive(&self, senders: &[StationId], sender: StationId, receiver: StationId) -> Reception {
        if senders.contains(&receiver) {
            return Reception::Lost {
                reason: LossReason::HalfDuplex,
                interferers: vec![receiver],
            };
        }
        let interferers: Vec<StationId> = senders
            .iter()
            .copied()
            .filter(|&t| t != sender && self.covers(t, receiver))
            .collect();
        if interferers.is_empty() {
            Reception::Decoded
        } else {
            Reception::Lost {
                reason: LossReason::Collision,
                interferers,
            }
        }
    }

    /// Outcomes at every cluster head in range of every sender.
    pub fn resolve_slot(&self, senders: &[StationId]) -> Vec<Outcome> {
        let mut out = Vec::new();
        for &s in senders {
            for r in self.audience(s) {
                out.push(Outcome {
                    sender: s,
                    receiver: r,
                    reception: self.receive(senders, s, r),
                });
            }
        }
        out
    }
}
