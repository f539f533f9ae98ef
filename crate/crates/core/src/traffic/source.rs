//! Seeded packet sources for the service classes.
//!
//! Constant bit rate traffic is an evenly spaced fluid source. Variable bit
//! rate traffic alternates per frame between the flow's rate and the class
//! floor (two-state on/off chain). Available and unspecified bit rate traffic
//! arrives as a Poisson process with the flow's mean rate.

use super::class::ClassName;
use super::flow::Flow;
use crate::mac::{FrameLayout, Micros};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

/// Probability of toggling the on/off state at a frame boundary.
pub const VBR_SWITCH_PROBABILITY: f64 = 0.2;

#[derive(Debug, Clone)]
enum Model {
    Fluid,
    OnOff { on: bool },
    Poisson { next: Option<Micros>, exp: Exp<f64> },
}

#[derive(Debug, Clone)]
pub struct TrafficSource {
    model: Model,
    /// Accumulated `rate * time` in bit-microseconds per second.
    credit: u128,
    rng: ChaCha8Rng,
}

impl TrafficSource {
    /// Each flow draws from its own stream of the run seed.
    pub fn new(flow: &Flow, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + flow.id.0 as u64);
        let model = match flow.class.name {
            ClassName::Cbr => Model::Fluid,
            ClassName::RtVbr | ClassName::NrtVbr => Model::OnOff { on: true },
            ClassName::Abr | ClassName::Ubr => {
                let per_us = flow.rate as f64 / (flow.packet_size as f64 * 1e6);
                Model::Poisson {
                    next: None,
                    exp: Exp::new(per_us).expect("positive arrival rate"),
                }
            }
        };
        Self {
            model,
            credit: packet_cost(flow),
            rng,
        }
    }

    /// Creation instants of the packets emitted during `frame`, ascending.
    pub fn generate(&mut self, flow: &Flow, frame: u64, layout: &FrameLayout) -> Vec<Micros> {
        if !flow.is_active(frame) {
            return Vec::new();
        }
        let start = layout.frame_start(frame);
        let len = layout.frame_len();
        match &mut self.model {
            Model::Fluid => fluid(&mut self.credit, flow.rate, packet_cost(flow), start, len),
            Model::OnOff { on } => {
                if frame > flow.start_frame && self.rng.random_bool(VBR_SWITCH_PROBABILITY) {
                    *on = !*on;
                }
                let rate = if *on { flow.rate } else { flow.class.bandwidth_min.min(flow.rate) };
                fluid(&mut self.credit, rate, packet_cost(flow), start, len)
            }
            Model::Poisson { next, exp } => {
                let mut t = next.unwrap_or(start);
                if next.is_none() {
                    t += exp.sample(&mut self.rng).round() as Micros;
                }
                let mut out = Vec::new();
                while t < start + len {
                    out.push(t.max(start));
                    t += exp.sample(&mut self.rng).round() as Micros;
                }
                *next = Some(t);
                out
            }
        }
    }
}

fn packet_cost(flow: &Flow) -> u128 {
    flow.packet_size as u128 * 1_000_000
}

/// Emits a packet each time the accumulated credit crosses one packet cost.
fn fluid(credit: &mut u128, rate: u64, cost: u128, start: Micros, len: Micros) -> Vec<Micros> {
    let rate = rate as u128;
    let mut out = Vec::new();
    let mut k: u128 = 1;
    loop {
        let need = k * cost;
        let t = if need <= *credit { 0 } else { (need - *credit).div_ceil(rate) };
        if t >= len as u128 {
            break;
        }
        out.push(start + t as Micros);
        k += 1;
    }
    let emitted = out.len() as u128 * cost;
    *credit = *credit + rate * len as u128 - emitted;
    out
}
