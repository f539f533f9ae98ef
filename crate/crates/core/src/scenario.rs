//! Scenario files.
//!
//! A scenario is one TOML document: stations, grid, frame layout, flows,
//! faults and engine knobs. Unknown keys are rejected. Validation reports
//! every problem it finds, each tagged with a stable code.

use crate::engine::{self, EnergyCosts, EngineError, Fault, SimConfig, SimOutput, Slotting};
use crate::geometry::{GridSpec, Point, Sector, MIN_RP_MODULUS};
use crate::mac::{BackoffPolicy, FrameLayout, Micros};
use crate::routing::{ProgressMode, RoutingOptions};
use crate::topology::{Network, StationId, StationKind, StationSpec};
use crate::traffic::{ClassName, Flow, FlowId, ServiceMode, TrafficError, DEFAULT_BURST_LENGTH};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationDef {
    pub id: u32,
    pub kind: StationKind,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fso_range: Option<f64>,
    pub rf_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridDef {
    pub cell_width: f64,
    pub cell_height: f64,
    pub origin: [f64; 2],
    pub rp_modulus: u32,
}

impl Default for GridDef {
    fn default() -> Self {
        Self {
            cell_width: 10.0,
            cell_height: 10.0,
            origin: [0.0, 0.0],
            rp_modulus: MIN_RP_MODULUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameDef {
    pub cf_slots: u16,
    pub rp_slot_len_us: Micros,
    pub cf_slot_len_us: Micros,
}

impl Default for FrameDef {
    fn default() -> Self {
        let l = FrameLayout::default();
        Self {
            cf_slots: l.cf_slots,
            rp_slot_len_us: l.rp_slot_len,
            cf_slot_len_us: l.cf_slot_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowDef {
    pub id: u32,
    pub src: u32,
    pub dst: u32,
    pub class: ClassName,
    #[serde(default)]
    pub service_mode: ServiceMode,
    /// bits per second
    pub rate: u64,
    /// bits
    pub packet_size: u32,
    #[serde(default = "default_burst")]
    pub burst_length: u32,
    #[serde(default)]
    pub start: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_bound_ms: Option<u32>,
}

fn default_burst() -> u32 {
    DEFAULT_BURST_LENGTH
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationMode {
    #[default]
    Off,
    Filter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingDef {
    pub progress_mode: ProgressMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hop_budget: Option<u32>,
    pub max_paths: usize,
    pub deviation_mode: DeviationMode,
    pub deviation_angle: f64,
}

impl Default for RoutingDef {
    fn default() -> Self {
        let o = RoutingOptions::default();
        Self {
            progress_mode: o.progress,
            hop_budget: o.hop_budget,
            max_paths: o.max_paths,
            deviation_mode: DeviationMode::Off,
            deviation_angle: o.deviation_angle,
        }
    }
}

impl RoutingDef {
    pub fn options(&self) -> RoutingOptions {
        RoutingOptions {
            progress: self.progress_mode,
            hop_budget: self.hop_budget,
            max_paths: self.max_paths,
            deviation_filter: self.deviation_mode == DeviationMode::Filter,
            deviation_angle: self.deviation_angle,
            ..RoutingOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacDef {
    pub slotting: Slotting,
    pub sense_window: u32,
    pub interference_multiplier: f64,
    pub queue_capacity: usize,
    pub semi_bonded_tolerance: u32,
    pub backoff: BackoffPolicy,
}

impl Default for MacDef {
    fn default() -> Self {
        let c = SimConfig::default();
        Self {
            slotting: c.slotting,
            sense_window: c.sense_window,
            interference_multiplier: c.interference_multiplier,
            queue_capacity: c.queue_capacity,
            semi_bonded_tolerance: c.semi_bonded_tolerance,
            backoff: c.backoff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_horizon")]
    pub horizon_frames: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridDef,
    #[serde(default)]
    pub frame: FrameDef,
    #[serde(default)]
    pub mac: MacDef,
    #[serde(default)]
    pub energy: EnergyCosts,
    #[serde(default)]
    pub routing: RoutingDef,
    #[serde(default)]
    pub stations: Vec<StationDef>,
    #[serde(default)]
    pub flows: Vec<FlowDef>,
    #[serde(default)]
    pub faults: Vec<Fault>,
}

fn default_horizon() -> u64 {
    engine::DEFAULT_HORIZON_FRAMES
}

/// Faults kept in a separate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultFile {
    #[serde(default)]
    pub faults: Vec<Fault>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub code: &'static str,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{} validation error(s):\n{}", .0.len(), render(.0))]
    Invalid(Vec<Issue>),
}

fn render(issues: &[Issue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

impl ScenarioError {
    pub fn codes(&self) -> Vec<&'static str> {
        match self {
            Self::Parse { .. } => vec!["E_PARSE"],
            Self::Invalid(v) => v.iter().map(|i| i.code).collect(),
        }
    }
}

fn parse_error(text: &str, err: toml::de::Error) -> ScenarioError {
    let (line, column) = match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            (line, column)
        }
        None => (0, 0),
    };
    ScenarioError::Parse {
        line,
        column,
        message: err.message().to_string(),
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let s: Scenario = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    let issues = s.validate();
    if issues.is_empty() {
        Ok(s)
    } else {
        Err(ScenarioError::Invalid(issues))
    }
}

pub fn parse_faults(text: &str) -> Result<Vec<Fault>, ScenarioError> {
    let f: FaultFile = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    Ok(f.faults)
}

impl Scenario {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Every semantic problem, in document order.
    pub fn validate(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        let mut push = |code: &'static str, message: String| out.push(Issue { code, message });

        if self.grid.rp_modulus < MIN_RP_MODULUS {
            push(
                "E_RP_MODULUS",
                format!("rp_modulus {} is below {MIN_RP_MODULUS}", self.grid.rp_modulus),
            );
        }
        let g = &self.grid;
        if !(g.cell_width.is_finite() && g.cell_height.is_finite() && g.cell_width > 0.0 && g.cell_height > 0.0)
            || !(g.origin[0].is_finite() && g.origin[1].is_finite())
        {
            push("E_GRID", "grid cells must have positive finite size and a finite origin".into());
        }
        if self.frame.cf_slots == 0 || self.frame.rp_slot_len_us == 0 || self.frame.cf_slot_len_us == 0 {
            push("E_FRAME", "cf_slots and slot lengths must be positive".into());
        }
        if self.horizon_frames == 0 {
            push("E_HORIZON", "horizon_frames must be positive".into());
        }
        let m = &self.mac;
        if !(m.interference_multiplier.is_finite() && m.interference_multiplier >= 1.0) {
            push(
                "E_MAC",
                format!("interference_multiplier must be at least 1, got {}", m.interference_multiplier),
            );
        }
        if m.sense_window == 0 || m.queue_capacity == 0 {
            push("E_MAC", "sense_window and queue_capacity must be positive".into());
        }
        if m.backoff.base_window == 0 || m.backoff.max_window < m.backoff.base_window {
            push("E_MAC", "backoff windows must satisfy 0 < base_window <= max_window".into());
        }
        let e = &self.energy;
        if [e.tx, e.rx, e.idle, e.sleep].iter().any(|c| !c.is_finite() || *c < 0.0) {
            push("E_ENERGY", "energy costs must be finite and non-negative".into());
        }
        let r = &self.routing;
        if r.max_paths == 0 || r.hop_budget == Some(0) {
            push("E_ROUTING", "max_paths and hop_budget must be positive".into());
        }
        if !(r.deviation_angle.is_finite() && r.deviation_angle >= 0.0) {
            push("E_ROUTING", "deviation_angle must be finite and non-negative".into());
        }

        let mut kinds: BTreeMap<u32, StationKind> = BTreeMap::new();
        for st in &self.stations {
            if kinds.insert(st.id, st.kind).is_some() {
                push("E_DUPLICATE_STATION", format!("station {} is defined twice", st.id));
            }
            if !(st.x.is_finite() && st.y.is_finite()) {
                push("E_GEOMETRY", format!("station {}: non-finite position", st.id));
            }
            if !(st.rf_range.is_finite() && st.rf_range > 0.0) {
                push("E_GEOMETRY", format!("station {}: rf_range must be positive", st.id));
            }
            match (st.kind, st.theta, st.alpha, st.fso_range) {
                (StationKind::ClusterHead, Some(t), Some(a), Some(f)) => {
                    if let Err(err) = Sector::new(Point::new(st.x, st.y), t, a, f) {
                        push("E_GEOMETRY", format!("station {}: {err}", st.id));
                    }
                }
                (StationKind::ClusterHead, ..) => push(
                    "E_MISSING_FIELD",
                    format!("cluster head {} needs theta, alpha and fso_range", st.id),
                ),
                (_, None, None, None) => {}
                _ => push(
                    "E_UNEXPECTED_FIELD",
                    format!("station {}: only cluster heads carry theta, alpha and fso_range", st.id),
                ),
            }
        }
        let bases = kinds.values().filter(|k| **k == StationKind::BaseStation).count();
        if bases != 1 {
            push(
                "E_BASE_STATION",
                format!("exactly one base station is required, found {bases}"),
            );
        }

        let mut flow_ids = BTreeSet::new();
        for f in &self.flows {
            if !flow_ids.insert(f.id) {
                push("E_DUPLICATE_FLOW", format!("flow {} is defined twice", f.id));
            }
            for (role, id) in [("src", f.src), ("dst", f.dst)] {
                if !kinds.contains_key(&id) {
                    push("E_UNKNOWN_STATION", format!("flow {} {role} references station {id}", f.id));
                }
            }
            if kinds.get(&f.dst) == Some(&StationKind::SensorNode) {
                push(
                    "E_BAD_DESTINATION",
                    format!("flow {} ends at sensor {}", f.id, f.dst),
                );
            }
            if kinds.get(&f.src) == Some(&StationKind::BaseStation) {
                push("E_BAD_SOURCE", format!("flow {} starts at the base station", f.id));
            }
            if let Err(err) = self.flow(f).validate() {
                let code = match err {
                    TrafficError::RateOutOfClass { .. } => "E_RATE_OUT_OF_CLASS",
                    TrafficError::DelayOutOfClass { .. } => "E_DELAY_OUT_OF_CLASS",
                    TrafficError::ServiceModeOnDatagram(_) => "E_SERVICE_MODE",
                    TrafficError::LoopFlow(_) => "E_LOOP_FLOW",
                    TrafficError::BadWindow(_) => "E_FLOW_WINDOW",
                    _ => "E_FLOW",
                };
                push(code, err.to_string());
            }
        }
        for (i, fault) in self.faults.iter().enumerate() {
            if !kinds.contains_key(&fault.sender.0) {
                push(
                    "E_UNKNOWN_STATION",
                    format!("fault {} references station {}", i + 1, fault.sender),
                );
            }
        }
        out
    }

    fn flow(&self, f: &FlowDef) -> Flow {
        let mut flow = Flow::new(f.id, StationId(f.src), StationId(f.dst), f.class, f.rate, f.packet_size)
            .with_mode(f.service_mode)
            .active_between(f.start, f.stop.unwrap_or(u64::MAX));
        flow.burst_length = f.burst_length;
        flow.delay_bound_ms = f.delay_bound_ms;
        flow
    }

    pub fn flows(&self) -> Vec<Flow> {
        self.flows.iter().map(|f| self.flow(f)).collect()
    }

    pub fn network(&self) -> Result<Network, ScenarioError> {
        let invalid = |code: &'static str, message: String| ScenarioError::Invalid(vec![Issue { code, message }]);
        let g = &self.grid;
        let grid = GridSpec::new(g.cell_width, g.cell_height, Point::new(g.origin[0], g.origin[1]), g.rp_modulus)
            .map_err(|e| invalid("E_GRID", e.to_string()))?;
        let specs = self
            .stations
            .iter()
            .map(|s| match s.kind {
                StationKind::ClusterHead => StationSpec::cluster_head(
                    s.id,
                    s.x,
                    s.y,
                    s.theta.unwrap_or(0.0),
                    s.alpha.unwrap_or(0.0),
                    s.fso_range.unwrap_or(0.0),
                    s.rf_range,
                ),
                StationKind::BaseStation => StationSpec::base_station(s.id, s.x, s.y, s.rf_range),
                StationKind::SensorNode => StationSpec::sensor(s.id, s.x, s.y, s.rf_range),
            })
            .collect();
        Network::new(specs, grid).map_err(|e| invalid("E_TOPOLOGY", e.to_string()))
    }

    pub fn config(&self, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            horizon_frames: self.horizon_frames,
            layout: FrameLayout {
                rp_slots: self.grid.rp_modulus,
                cf_slots: self.frame.cf_slots,
                rp_slot_len: self.frame.rp_slot_len_us,
                cf_slot_len: self.frame.cf_slot_len_us,
            },
            slotting: self.mac.slotting,
            interference_multiplier: self.mac.interference_multiplier,
            sense_window: self.mac.sense_window,
            backoff: self.mac.backoff,
            energy: self.energy,
            queue_capacity: self.mac.queue_capacity,
            semi_bonded_tolerance: self.mac.semi_bonded_tolerance,
            routing: self.routing.options(),
            faults: self.faults.clone(),
        }
    }

    pub fn flow_ids(&self) -> Vec<FlowId> {
        self.flows.iter().map(|f| FlowId(f.id)).collect()
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Builds and runs a validated scenario with the given seed.
pub fn run_scenario(s: &Scenario, seed: u64) -> Result<(Network, SimOutput), RunError> {
    let issues = s.validate();
    if !issues.is_empty() {
        return Err(ScenarioError::Invalid(issues).into());
    }
    let net = s.network()?;
    let out = engine::run(&net, &s.flows(), &s.config(seed))?;
    Ok((net, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[stations]]
id = 1
kind = "cluster_head"
x = 5.0
y = 5.0
theta = 0.0
alpha = 1.0
fso_range = 20.0
rf_range = 10.0

[[stations]]
id = 2
kind = "base_station"
x = 15.0
y = 5.0
rf_range = 10.0
"#;

    #[test]
    fn minimal_scenario_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.horizon_frames, 200);
        assert_eq!(s.seed, 0);
        assert_eq!(s.frame.cf_slots, 20);
        assert_eq!(s.energy, EnergyCosts::default());
        assert_eq!(s.grid.rp_modulus, 11);
        assert!(s.network().is_ok());
    }

    #[test]
    fn unknown_station_reference() {
        let text = format!(
            "{MINIMAL}\n[[flows]]\nid = 1\nsrc = 1\ndst = 99\nclass = \"CBR\"\nrate = 64000\npacket_size = 1000\n"
        );
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.codes(), vec!["E_UNKNOWN_STATION"]);
    }

    #[test]
    fn voice_rate_above_class_cap() {
        let text = format!(
            "{MINIMAL}\n[[flows]]\nid = 1\nsrc = 1\ndst = 2\nclass = \"CBR\"\nrate = 5000000\npacket_size = 1000\n"
        );
        assert_eq!(parse_scenario(&text).unwrap_err().codes(), vec!["E_RATE_OUT_OF_CLASS"]);
    }

    #[test]
    fn all_errors_are_collected() {
        let text = format!(
            "{MINIMAL}\n[grid]\nrp_modulus = 10\n\n[[flows]]\nid = 1\nsrc = 7\ndst = 2\nclass = \"CBR\"\nrate = 5000000\npacket_size = 1000\n"
        );
        let codes = parse_scenario(&text).unwrap_err().codes();
        assert_eq!(codes, vec!["E_RP_MODULUS", "E_UNKNOWN_STATION", "E_RATE_OUT_OF_CLASS"]);
    }

    #[test]
    fn unknown_keys_and_syntax_errors_carry_lines() {
        let err = parse_scenario("horizon_frames = 10\nhorizon_frame = 3\n").unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
        let err = parse_scenario("seed = 1\n[grid\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 2, .. }));
    }

    #[test]
    fn cluster_head_needs_a_beam() {
        let text = MINIMAL.replace("theta = 0.0\n", "");
        assert_eq!(parse_scenario(&text).unwrap_err().codes(), vec!["E_MISSING_FIELD"]);
    }

    #[test]
    fn round_trip() {
        let text = format!(
            "{MINIMAL}\n[[flows]]\nid = 4\nsrc = 1\ndst = 2\nclass = \"rtVBR\"\nservice_mode = \"semi_bonded\"\nrate = 256000\npacket_size = 4000\nstop = 50\n\n[[faults]]\nkind = \"SRB\"\nframe = 3\nsender = 1\n"
        );
        let s = parse_scenario(&text).unwrap();
        let again = parse_scenario(&s.to_toml()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn fault_file() {
        let f = parse_faults("[[faults]]\nkind = \"CA\"\nframe = 2\nsender = 5\naction = \"drop\"\n").unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].sender, StationId(5));
        assert!(parse_faults("[[faults]]\nkind = \"XX\"\nframe = 2\nsender = 5\n").is_err());
    }
}
