use super::trace::EnergyCosts;
use crate::topology::StationId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotAction {
    Tx,
    Rx,
    /// Awake without receiving anything.
    Idle,
    Sleep,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotCounts {
    pub tx: u64,
    pub rx: u64,
    pub idle: u64,
    pub sleep: u64,
}

impl SlotCounts {
    pub fn total(&self) -> u64 {
        self.tx + self.rx + self.idle + self.sleep
    }

    /// Fraction of slots spent awake.
    pub fn duty_cycle(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => (self.tx + self.rx + self.idle) as f64 / t as f64,
        }
    }

    pub fn energy(&self, c: &EnergyCosts) -> f64 {
        self.tx as f64 * c.tx + self.rx as f64 * c.rx + self.idle as f64 * c.idle + self.sleep as f64 * c.sleep
    }

    pub fn add(&mut self, other: &SlotCounts) {
        self.tx += other.tx;
        self.rx += other.rx;
        self.idle += other.idle;
        self.sleep += other.sleep;
    }
}

/// Per-station slot-state counters.
#[derive(Debug, Clone, Default)]
pub struct EnergyMeter {
    counts: BTreeMap<StationId, SlotCounts>,
}

impl EnergyMeter {
    pub fn new(stations: impl IntoIterator<Item = StationId>) -> Self {
        Self {
            counts: stations.into_iter().map(|s| (s, SlotCounts::default())).collect(),
        }
    }

    /// Exactly one counter moves per call.
    pub fn account(&mut self, station: StationId, action: SlotAction) {
        let c = self.counts.entry(station).or_default();
        match action {
            SlotAction::Tx => c.tx += 1,
            SlotAction::Rx => c.rx += 1,
            SlotAction::Idle => c.idle += 1,
            SlotAction::Sleep => c.sleep += 1,
        }
    }

    pub fn counts(&self, station: StationId) -> SlotCounts {
        self.counts.get(&station).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StationId, SlotCounts)> + '_ {
        self.counts.iter().map(|(s, c)| (*s, *c))
    }

    /// Hands back the counts and starts over.
    pub fn take(&mut self) -> BTreeMap<StationId, SlotCounts> {
        let fresh = self.counts.keys().map(|s| (*s, SlotCounts::default())).collect();
        std::mem::replace(&mut self.counts, fresh)
    }
}
