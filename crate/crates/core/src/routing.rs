//! Directional geographic multipath discovery.
//!
//! A source cluster head floods a probe ([`CombMessage`]) to every feasible
//! next hop that makes progress towards the sink; each holder repeats the
//! procedure until the sink is reached. Every probe that arrives at the sink
//! yields one [`Path`]. Paths are then scored by the mean perpendicular offset
//! of their intermediate hops from the straight source-sink reference line and
//! the least deviating one is selected.

use crate::geometry::{angle_diff, point_to_line_distance, GeometryError, Point};
use crate::topology::{Network, StationId, StationKind, TopologyError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use thiserror::Error;

/// Two scores closer than this are treated as tied.
pub const SCORE_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid route endpoints {source_id} -> {sink}: {reason}")]
    InvalidEndpoint {
        source_id: StationId,
        sink: StationId,
        reason: &'static str,
    },
    #[error("hop budget must be at least 1")]
    ZeroHopBudget,
    #[error("source and sink are co-located; the reference line is undefined")]
    Degenerate(#[source] GeometryError),
    #[error("cannot select from an empty set of paths")]
    NoPaths,
}

/// What a candidate's sink distance is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgressMode {
    /// Strictly closer to the sink than the current holder.
    #[default]
    Greedy,
    /// Closer to the sink than the original source.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingOptions {
    pub progress: ProgressMode,
    /// Probe TTL; `None` means the station count.
    pub hop_budget: Option<u32>,
    pub max_paths: usize,
    /// Restrict candidates to bearings within the probe's deviation angle of
    /// the source-to-sink bearing.
    pub deviation_filter: bool,
    pub deviation_angle: f64,
    /// Upper bound on probe copies processed in one discovery.
    pub max_combs: usize,
}

impl Default for RoutingOptions {
    fn default() -> Self {
        Self {
            progress: ProgressMode::Greedy,
            hop_budget: None,
            max_paths: 16,
            deviation_filter: false,
            deviation_angle: std::f64::consts::PI,
            max_combs: 200_000,
        }
    }
}

impl RoutingOptions {
    pub fn budget_for(&self, net: &Network) -> u32 {
        self.hop_budget.unwrap_or(net.len() as u32)
    }
}

/// Route discovery probe. The first four fields are fixed by the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombMessage {
    source: StationId,
    sink: StationId,
    deviation_angle: f64,
    src_to_sink_hop_count: u32,
    pub hop_count: u32,
    pub previous_hop: StationId,
    pub position: Point,
    /// Full traversal record carried alongside the on-air fields.
    pub path: Vec<StationId>,
}

impl CombMessage {
    pub fn source(&self) -> StationId {
        self.source
    }

    pub fn sink(&self) -> StationId {
        self.sink
    }

    pub fn deviation_angle(&self) -> f64 {
        self.deviation_angle
    }

    pub fn src_to_sink_hop_count(&self) -> u32 {
        self.src_to_sink_hop_count
    }

    /// Copy re-broadcast by `next`, with the variable attributes rewritten.
    pub fn forwarded(&self, net: &Network, next: StationId) -> Result<Self, RoutingError> {
        let pos = net.station(next)?.position;
        let mut path = self.path.clone();
        path.push(next);
        Ok(Self {
            hop_count: self.hop_count + 1,
            previous_hop: next,
            position: pos,
            path,
            ..self.clone()
        })
    }
}

pub fn make_comb(
    net: &Network,
    source: StationId,
    sink: StationId,
    deviation_angle: f64,
    hop_budget: u32,
) -> Result<CombMessage, RoutingError> {
    if hop_budget == 0 {
        return Err(RoutingError::ZeroHopBudget);
    }
    let src = net.station(source)?;
    net.station(sink)?;
    if !src.is_cluster_head() {
        return Err(RoutingError::InvalidEndpoint {
            source_id: source,
            sink,
            reason: "source is not a cluster head",
        });
    }
    if source == sink {
        return Err(RoutingError::InvalidEndpoint {
            source_id: source,
            sink,
            reason: "source equals sink",
        });
    }
    Ok(CombMessage {
        source,
        sink,
        deviation_angle,
        src_to_sink_hop_count: hop_budget,
        hop_count: 0,
        previous_hop: source,
        position: src.position,
        path: vec![source],
    })
}

/// Stations the holder would forward `comb` to, in ascending id order.
pub fn next_hop_candidates(
    net: &Network,
    holder: StationId,
    comb: &CombMessage,
    opts: &RoutingOptions,
) -> Result<BTreeSet<StationId>, RoutingError> {
    let h = net.station(holder)?;
    if !h.is_cluster_head() {
        return Err(TopologyError::NotClusterHead(holder).into());
    }
    if comb.hop_count >= comb.src_to_sink_hop_count {
        return Ok(BTreeSet::new());
    }
    let sink_pos = net.station(comb.sink)?.position;
    let reference = match opts.progress {
        ProgressMode::Greedy => h.position.distance(&sink_pos),
        ProgressMode::Literal => net.station(comb.source)?.position.distance(&sink_pos),
    };
    let heading = net.station(comb.source)?.position.bearing_to(&sink_pos);
    let mut out = BTreeSet::new();
    for c in net.stations() {
        if !(c.kind == StationKind::ClusterHead || c.id == comb.sink) {
            continue;
        }
        if comb.path.contains(&c.id) || !net.fso_can_transmit(holder, c.id)? {
            continue;
        }
        if c.position.distance(&sink_pos) >= reference {
            continue;
        }
        if opts.deviation_filter
            && angle_diff(h.position.bearing_to(&c.position), heading).abs() > comb.deviation_angle
        {
            continue;
        }
        out.insert(c.id);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Path {
    hops: Vec<StationId>,
}

impl Path {
    /// Builds a path, rejecting fewer than two stations or a revisit.
    pub fn new(hops: Vec<StationId>) -> Option<Self> {
        if hops.len() < 2 {
            return None;
        }
        let unique: BTreeSet<_> = hops.iter().collect();
        (unique.len() == hops.len()).then_some(Self { hops })
    }

    pub fn hops(&self) -> &[StationId] {
        &self.hops
    }

    pub fn hop_count(&self) -> usize {
        self.hops.len() - 1
    }

    pub fn source(&self) -> StationId {
        self.hops[0]
    }

    pub fn sink(&self) -> StationId {
        *self.hops.last().expect("path has at least two hops")
    }

    pub fn intermediates(&self) -> &[StationId] {
        &self.hops[1..self.hops.len() - 1]
    }

    /// Consecutive (from, to) pairs.
    pub fn links(&self) -> impl Iterator<Item = (StationId, StationId)> + '_ {
        self.hops.windows(2).map(|w| (w[0], w[1]))
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.hops.iter().map(|h| h.to_string()).collect();
        write!(f, "{}", parts.join(" -> "))
    }
}

/// Breadth-first probe expansion. Paths come back in discovery order:
/// by hop count, then lexicographically by station ids.
pub fn collect_paths(
    net: &Network,
    source: StationId,
    sink: StationId,
    opts: &RoutingOptions,
) -> Result<Vec<Path>, RoutingError> {
    let budget = opts.budget_for(net).max(1);
    let first = make_comb(net, source, sink, opts.deviation_angle, budget)?;
    let mut found = Vec::new();
    if opts.max_paths == 0 {
        return Ok(found);
    }
    let mut queue = VecDeque::from([first]);
    let mut processed = 0usize;
    while let Some(comb) = queue.pop_front() {
        processed += 1;
        if processed > opts.max_combs {
            break;
        }
        let holder = comb.previous_hop;
        for next in next_hop_candidates(net, holder, &comb, opts)? {
            let fwd = comb.forwarded(net, next)?;
            if next == sink {
                found.push(Path { hops: fwd.path });
                if found.len() >= opts.max_paths {
                    return Ok(found);
                }
            } else {
                queue.push_back(fwd);
            }
        }
    }
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathScore {
    pub path: Path,
    pub d_path: f64,
    pub intermediate_distances: Vec<f64>,
}

/// Mean offset of the intermediate hops from the source-sink line, divided
/// by `hop_count - 1`. Direct paths score zero.
pub fn score_path(net: &Network, p: &Path) -> Result<PathScore, RoutingError> {
    let a = net.station(p.source())?.position;
    let b = net.station(p.sink())?.position;
    if a == b {
        return Err(RoutingError::Degenerate(GeometryError::DegenerateLine(a.x, a.y)));
    }
    let mut ds = Vec::with_capacity(p.intermediates().len());
    for &h in p.intermediates() {
        let pos = net.station(h)?.position;
        ds.push(point_to_line_distance(&pos, &a, &b).map_err(RoutingError::Degenerate)?);
    }
    let d_path = if p.hop_count() >= 2 {
        ds.iter().sum::<f64>() / (p.hop_count() - 1) as f64
    } else {
        0.0
    };
    Ok(PathScore {
        path: p.clone(),
        d_path,
        intermediate_distances: ds,
    })
}

/// Smallest score wins; ties go to fewer hops, then the lexicographically
/// smaller station sequence.
pub fn select_best_path(scores: &[PathScore]) -> Result<&Path, RoutingError> {
    let mut best: Option<&PathScore> = None;
    for s in scores {
        best = match best {
            None => Some(s),
            Some(b) if better(s, b) => Some(s),
            keep => keep,
        };
    }
    best.map(|s| &s.path).ok_or(RoutingError::NoPaths)
}

fn better(a: &PathScore, b: &PathScore) -> bool {
    if (a.d_path - b.d_path).abs() > SCORE_TIE_EPS {
        return a.d_path < b.d_path;
    }
    (a.path.hop_count(), &a.path.hops) < (b.path.hop_count(), &b.path.hops)
}

/// Discovery plus scoring in one call; `None` when no path exists.
pub fn best_route(
    net: &Network,
    source: StationId,
    sink: StationId,
    opts: &RoutingOptions,
) -> Result<(Vec<PathScore>, Option<Path>), RoutingError> {
    let paths = collect_paths(net, source, sink, opts)?;
    let scores = paths
        .iter()
        .map(|p| score_path(net, p))
        .collect::<Result<Vec<_>, _>>()?;
    let best = select_best_path(&scores).ok().cloned();
    Ok((scores, best))
}
