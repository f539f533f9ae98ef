//! Stations, the two-tier network and link-feasibility predicates.

use crate::geometry::{grid_of, rp_slot_of, sector_contains, GeometryError, GridCell, GridSpec, Point, Sector};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub u32);

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationKind {
    ClusterHead,
    SensorNode,
    BaseStation,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("unknown station {0}")]
    UnknownStation(StationId),
    #[error("station {0} is not a cluster head")]
    NotClusterHead(StationId),
    #[error("duplicate station id {0}")]
    DuplicateId(StationId),
    #[error("expected exactly one base station, found {0}")]
    BaseStationCount(usize),
    #[error("cluster head {0} has no transmission sector")]
    MissingSector(StationId),
    #[error("station {0} has a non-positive or non-finite RF range")]
    BadRfRange(StationId),
    #[error("station {id}: {source}")]
    Geometry {
        id: StationId,
        #[source]
        source: GeometryError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: StationId,
    pub kind: StationKind,
    pub position: Point,
    /// Laser cone; only cluster heads carry one.
    pub sector: Option<Sector>,
    pub rf_range: f64,
    pub grid: GridCell,
}

impl Station {
    pub fn is_cluster_head(&self) -> bool {
        self.kind == StationKind::ClusterHead
    }
}

/// Builder-side description of a station before the grid is known.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSpec {
    pub id: StationId,
    pub kind: StationKind,
    pub position: Point,
    /// `(theta, alpha, fso_range)` for cluster heads.
    pub beam: Option<(f64, f64, f64)>,
    pub rf_range: f64,
}

impl StationSpec {
    pub fn cluster_head(id: u32, x: f64, y: f64, theta: f64, alpha: f64, fso_range: f64, rf_range: f64) -> Self {
        Self {
            id: StationId(id),
            kind: StationKind::ClusterHead,
            position: Point::new(x, y),
            beam: Some((theta, alpha, fso_range)),
            rf_range,
        }
    }

    pub fn base_station(id: u32, x: f64, y: f64, rf_range: f64) -> Self {
        Self {
            id: StationId(id),
            kind: StationKind::BaseStation,
            position: Point::new(x, y),
            beam: None,
            rf_range,
        }
    }

    pub fn sensor(id: u32, x: f64, y: f64, rf_range: f64) -> Self {
        Self {
            id: StationId(id),
            kind: StationKind::SensorNode,
            position: Point::new(x, y),
            beam: None,
            rf_range,
        }
    }
}

/// Reachability of one station, as an omniscient stand-in for neighbourhood discovery.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NeighborTable {
    pub fso: BTreeSet<StationId>,
    pub rf: BTreeSet<StationId>,
}

/// Immutable network. Stations are kept sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    stations: Vec<Station>,
    index: BTreeMap<StationId, usize>,
    sink: StationId,
    grid_spec: GridSpec,
}

impl Network {
    pub fn new(specs: Vec<StationSpec>, grid_spec: GridSpec) -> Result<Self, TopologyError> {
        let mut stations = Vec::with_capacity(specs.len());
        let mut seen = BTreeSet::new();
        for s in specs {
            if !seen.insert(s.id) {
                return Err(TopologyError::DuplicateId(s.id));
            }
            if !s.position.is_finite() {
                return Err(TopologyError::Geometry {
                    id: s.id,
                    source: GeometryError::NonFinite("station position"),
                });
            }
            if !(s.rf_range.is_finite() && s.rf_range > 0.0) {
                return Err(TopologyError::BadRfRange(s.id));
            }
            let sector = match (s.kind, s.beam) {
                (StationKind::ClusterHead, None) => return Err(TopologyError::MissingSector(s.id)),
                (StationKind::ClusterHead, Some((theta, alpha, range))) => Some(
                    Sector::new(s.position, theta, alpha, range)
                        .map_err(|source| TopologyError::Geometry { id: s.id, source })?,
                ),
                _ => None,
            };
            stations.push(Station {
                id: s.id,
                kind: s.kind,
                position: s.position,
                sector,
                rf_range: s.rf_range,
                grid: grid_of(&s.position, &grid_spec),
            });
        }
        stations.sort_by_key(|s| s.id);
        let bases: Vec<StationId> = stations
            .iter()
            .filter(|s| s.kind == StationKind::BaseStation)
            .map(|s| s.id)
            .collect();
        if bases.len() != 1 {
            return Err(TopologyError::BaseStationCount(bases.len()));
        }
        let index = stations.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        Ok(Self {
            stations,
            index,
            sink: bases[0],
            grid_spec,
        })
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    /// Total number of stations.
    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn sink(&self) -> StationId {
        self.sink
    }

    pub fn grid_spec(&self) -> &GridSpec {
        &self.grid_spec
    }

    pub fn station(&self, id: StationId) -> Result<&Station, TopologyError> {
        self.index
            .get(&id)
            .map(|&i| &self.stations[i])
            .ok_or(TopologyError::UnknownStation(id))
    }

    pub fn contains(&self, id: StationId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn cluster_heads(&self) -> impl Iterator<Item = &Station> {
        self.stations.iter().filter(|s| s.is_cluster_head())
    }

    pub fn distance(&self, a: StationId, b: StationId) -> Result<f64, TopologyError> {
        Ok(self.station(a)?.position.distance(&self.station(b)?.position))
    }

    pub fn rp_slot(&self, id: StationId) -> Result<u32, TopologyError> {
        Ok(rp_slot_of(self.station(id)?.grid, &self.grid_spec))
    }

    /// Cluster head a sensor node hands its traffic to: the nearest cluster
    /// head inside the sensor's radio range, lowest id on ties.
    pub fn attachment(&self, sensor: StationId) -> Result<Option<StationId>, TopologyError> {
        let s = self.station(sensor)?;
        if s.kind != StationKind::SensorNode {
            return Ok(Some(sensor));
        }
        let best = self
            .cluster_heads()
            .map(|ch| (ch.position.distance(&s.position), ch.id))
            .filter(|(d, _)| *d <= s.rf_range)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(best.map(|(_, id)| id))
    }

    /// The set R(x): every other station within `x`'s radio range.
    pub fn rf_neighbors(&self, x: StationId) -> Result<BTreeSet<StationId>, TopologyError> {
        let sx = self.station(x)?;
        Ok(self
            .stations
            .iter()
            .filter(|y| y.id != x && sx.position.distance(&y.position) <= sx.rf_range)
            .map(|y| y.id)
            .collect())
    }

    /// R(x, y) = R(x) ∩ R(y).
    pub fn common_range(&self, x: StationId, y: StationId) -> Result<BTreeSet<StationId>, TopologyError> {
        let rx = self.rf_neighbors(x)?;
        let ry = self.rf_neighbors(y)?;
        Ok(rx.intersection(&ry).copied().collect())
    }

    /// Directional FSO feasibility: `to` within reach and inside the sender's cone.
    pub fn fso_can_transmit(&self, from: StationId, to: StationId) -> Result<bool, TopologyError> {
        let sf = self.station(from)?;
        let st = self.station(to)?;
        let sector = match (sf.kind, &sf.sector) {
            (StationKind::ClusterHead, Some(sec)) => sec,
            _ => return Err(TopologyError::NotClusterHead(from)),
        };
        Ok(from != to && sector_contains(sector, &st.position))
    }

    pub fn discover_neighbors(&self, x: StationId) -> Result<NeighborTable, TopologyError> {
        let sx = self.station(x)?;
        let rf = self.rf_neighbors(x)?;
        let fso = if sx.is_cluster_head() {
            let mut out = BTreeSet::new();
            for y in &self.stations {
                if self.fso_can_transmit(x, y.id)? {
                    out.insert(y.id);
                }
            }
            out
        } else {
            BTreeSet::new()
        };
        Ok(NeighborTable { fso, rf })
    }

    /// Breadth-first radio hop counts from `from` over cluster heads and the
    /// base station. Unreachable stations are absent.
    pub fn rf_hop_distances(&self, from: StationId) -> Result<BTreeMap<StationId, u32>, TopologyError> {
        self.station(from)?;
        let mut dist = BTreeMap::new();
        dist.insert(from, 0u32);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            for v in self.rf_neighbors(u)? {
                if self.station(v)?.kind == StationKind::SensorNode {
                    continue;
                }
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(du + 1);
                    queue.push_back(v);
                }
            }
        }
        Ok(dist)
    }
}
