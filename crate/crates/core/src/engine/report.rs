use super::audit::LemmaVerdicts;
use super::energy::SlotCounts;
use super::trace::{EnergyCosts, Event, LossReason, Trace, TraceError};
use crate::topology::StationId;
use crate::traffic::{ClassName, DropReason, FlowId, SessionState};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowReport {
    pub flow_id: FlowId,
    pub class: ClassName,
    pub src: StationId,
    pub dst: StationId,
    pub path: Option<Vec<StationId>>,
    pub d_path: Option<f64>,
    pub route_error: Option<String>,
    pub generated: u64,
    pub delivered: u64,
    pub dropped_collision: u64,
    pub dropped_deadline: u64,
    pub dropped_overflow: u64,
    pub queued_at_end: u64,
    pub delivery_ratio: f64,
    pub mean_delay_ms: f64,
    pub max_delay_ms: f64,
    pub deadline_miss_rate: f64,
    pub loss_rate: f64,
    pub session_failures: u64,
    pub session_degradations: u64,
}

impl FlowReport {
    pub fn routed(&self) -> bool {
        self.path.is_some()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped_collision + self.dropped_deadline + self.dropped_overflow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationReport {
    pub station_id: StationId,
    pub tx_slots: u64,
    pub rx_slots: u64,
    pub idle_slots: u64,
    pub sleep_slots: u64,
    pub duty_cycle: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub frames: u64,
    pub flows: Vec<FlowReport>,
    pub stations: Vec<StationReport>,
    /// Data transmissions per contention-free slot.
    pub slot_utilization: f64,
    pub control_messages: u64,
    pub control_collisions: u64,
    pub control_faults: u64,
    pub data_transmissions: u64,
    pub data_collisions: u64,
    /// Data sent to a receiver that was not listening.
    pub data_unheard: u64,
    pub backoffs: u64,
    pub handshakes: u64,
    pub mac_errors: u64,
    pub lemmas: Option<LemmaVerdicts>,
}

type RouteRow = (FlowId, ClassName, StationId, StationId, Option<Vec<StationId>>, Option<f64>, Option<String>);

#[derive(Default)]
struct FlowAcc {
    generated: u64,
    delivered: u64,
    delay_sum: u128,
    delay_max: u64,
    drops: BTreeMap<&'static str, u64>,
    queued: u64,
    failures: u64,
    degradations: u64,
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

impl SimReport {
    /// Aggregates a complete trace.
    pub fn from_trace(trace: &Trace) -> Result<Self, TraceError> {
        let mut start = None;
        let mut routes: Vec<RouteRow> = Vec::new();
        let mut acc: BTreeMap<FlowId, FlowAcc> = BTreeMap::new();
        let mut energy: BTreeMap<StationId, SlotCounts> = BTreeMap::new();
        let mut costs = EnergyCosts::default();
        let mut r = SimReport {
            seed: 0,
            frames: 0,
            flows: Vec::new(),
            stations: Vec::new(),
            slot_utilization: 0.0,
            control_messages: 0,
            control_collisions: 0,
            control_faults: 0,
            data_transmissions: 0,
            data_collisions: 0,
            data_unheard: 0,
            backoffs: 0,
            handshakes: 0,
            mac_errors: 0,
            lemmas: None,
        };
        let mut cf_slots = 0u64;
        for ev in &trace.events {
            match &ev.event {
                Event::RunStart {
                    seed,
                    horizon_frames,
                    cf_slots: cf,
                    energy: e,
                    stations,
                    ..
                } => {
                    start = Some(());
                    r.seed = *seed;
                    r.frames = *horizon_frames;
                    cf_slots = *cf as u64;
                    costs = *e;
                    for s in stations {
                        energy.insert(*s, SlotCounts::default());
                    }
                }
                Event::Route {
                    flow,
                    class,
                    src,
                    dst,
                    path,
                    d_path,
                    error,
                    ..
                } => {
                    routes.push((*flow, *class, *src, *dst, path.clone(), *d_path, error.clone()));
                    acc.entry(*flow).or_default();
                }
                Event::PktGen { flow, .. } => acc.entry(*flow).or_default().generated += 1,
                Event::PktDeliver {
                    flow,
                    created,
                    delivered,
                    ..
                } => {
                    let a = acc.entry(*flow).or_default();
                    let d = delivered.saturating_sub(*created);
                    a.delivered += 1;
                    a.delay_sum += d as u128;
                    a.delay_max = a.delay_max.max(d);
                }
                Event::PktDrop { flow, reason, .. } => {
                    *acc.entry(*flow).or_default().drops.entry(reason.as_str()).or_default() += 1;
                }
                Event::RunEnd { queued, .. } => {
                    for q in queued {
                        acc.entry(q.flow).or_default().queued = q.queued;
                    }
                }
                Event::Session { flow, state } => {
                    let a = acc.entry(*flow).or_default();
                    match state {
                        SessionState::Failed => a.failures += 1,
                        SessionState::Degraded => a.degradations += 1,
                        _ => {}
                    }
                }
                Event::CtrlTx { .. } => r.control_messages += 1,
                Event::CtrlLost { reason, .. } => match reason {
                    LossReason::Collision | LossReason::HalfDuplex => r.control_collisions += 1,
                    LossReason::Fault => r.control_faults += 1,
                    LossReason::ReceiverAsleep => {}
                },
                Event::DataTx { .. } => r.data_transmissions += 1,
                Event::DataLost { reason, .. } => match reason {
                    LossReason::Collision | LossReason::HalfDuplex => r.data_collisions += 1,
                    _ => r.data_unheard += 1,
                },
                Event::Backoff { .. } => r.backoffs += 1,
                Event::HandshakeDone { .. } => r.handshakes += 1,
                Event::MacError { .. } => r.mac_errors += 1,
                Event::Energy { tx, rx, idle, sleep } => {
                    let st = ev.station.ok_or(TraceError::Malformed {
                        line: 0,
                        message: "energy event without station".into(),
                    })?;
                    energy.entry(st).or_default().add(&SlotCounts {
                        tx: *tx,
                        rx: *rx,
                        idle: *idle,
                        sleep: *sleep,
                    });
                }
                _ => {}
            }
        }
        start.ok_or(TraceError::MissingStart)?;
        for (flow, class, src, dst, path, d_path, route_error) in routes {
            let a = acc.remove(&flow).unwrap_or_default();
            let dc = a.drops.get(DropReason::Collision.as_str()).copied().unwrap_or(0);
            let dd = a.drops.get(DropReason::DeadlineMiss.as_str()).copied().unwrap_or(0);
            let dof = a.drops.get(DropReason::Overflow.as_str()).copied().unwrap_or(0);
            r.flows.push(FlowReport {
                flow_id: flow,
                class,
                src,
                dst,
                path,
                d_path,
                route_error,
                generated: a.generated,
                delivered: a.delivered,
                dropped_collision: dc,
                dropped_deadline: dd,
                dropped_overflow: dof,
                queued_at_end: a.queued,
                delivery_ratio: ratio(a.delivered, a.generated),
                mean_delay_ms: if a.delivered == 0 {
                    0.0
                } else {
                    a.delay_sum as f64 / a.delivered as f64 / 1_000.0
                },
                max_delay_ms: a.delay_max as f64 / 1_000.0,
                deadline_miss_rate: ratio(dd, a.generated),
                loss_rate: ratio(dc + dd + dof, a.generated),
                session_failures: a.failures,
                session_degradations: a.degradations,
            });
        }
        r.stations = energy
            .into_iter()
            .map(|(s, c)| StationReport {
                station_id: s,
                tx_slots: c.tx,
                rx_slots: c.rx,
                idle_slots: c.idle,
                sleep_slots: c.sleep,
                duty_cycle: c.duty_cycle(),
                energy: c.energy(&costs),
            })
            .collect();
        r.slot_utilization = ratio(r.data_transmissions, r.frames * cf_slots);
        Ok(r)
    }
}

impl fmt::Display for SimReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed {} | {} frames", self.seed, self.frames)?;
        for fl in &self.flows {
            match &fl.path {
                None => writeln!(
                    f,
                    "flow {} {} {} -> {}: UNROUTED ({})",
                    fl.flow_id,
                    fl.class,
                    fl.src,
                    fl.dst,
                    fl.route_error.as_deref().unwrap_or("no path")
                )?,
                Some(p) => writeln!(
                    f,
                    "flow {} {} via {}: generated {} delivered {} ({:.4}) delay mean {:.2} ms max {:.2} ms, \
                     drops collision {} deadline {} overflow {}, queued {}",
                    fl.flow_id,
                    fl.class,
                    p.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("->"),
                    fl.generated,
                    fl.delivered,
                    fl.delivery_ratio,
                    fl.mean_delay_ms,
                    fl.max_delay_ms,
                    fl.dropped_collision,
                    fl.dropped_deadline,
                    fl.dropped_overflow,
                    fl.queued_at_end
                )?,
            }
        }
        writeln!(
            f,
            "control messages {} (collisions {}, faults {}), handshakes {}, backoffs {}",
            self.control_messages, self.control_collisions, self.control_faults, self.handshakes, self.backoffs
        )?;
        writeln!(
            f,
            "data transmissions {} (collisions {}, unheard {}), slot utilization {:.4}",
            self.data_transmissions, self.data_collisions, self.data_unheard, self.slot_utilization
        )?;
        if let Some(l) = &self.lemmas {
            write!(f, "{l}")?;
        }
        Ok(())
    }
}
