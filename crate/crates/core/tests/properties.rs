use proptest::prelude::*;
use std::f64::consts::FRAC_PI_2;
use wmsn_core::engine::{audit_reservation_lifetimes, audit_rt_consistency, run, Event, SimConfig, SimReport, Trace};
use wmsn_core::geometry::GridSpec;
use wmsn_core::scenario::{parse_scenario, FlowDef, Scenario, StationDef};
use wmsn_core::topology::{Network, StationId, StationKind, StationSpec};
use wmsn_core::traffic::{ClassName, Flow, ServiceMode};

/// At most one cluster head per 10 m cell of a 4x4 block, each jittered
/// inside its cell, all with a 10 m radio range.
fn layout() -> impl Strategy<Value = Vec<(u32, f64, f64)>> {
    prop::collection::btree_set((0u32..4, 0u32..4), 3..=8).prop_flat_map(|cells| {
        let cells: Vec<(u32, u32)> = cells.into_iter().collect();
        let n = cells.len();
        prop::collection::vec((0.5f64..9.5, 0.5f64..9.5), n).prop_map(move |jitter| {
            cells
                .iter()
                .zip(jitter)
                .enumerate()
                .map(|(k, (&(i, j), (dx, dy)))| (k as u32 + 1, 10.0 * i as f64 + dx, 10.0 * j as f64 + dy))
                .collect()
        })
    })
}

fn network(heads: &[(u32, f64, f64)]) -> Network {
    let mut specs: Vec<StationSpec> = heads
        .iter()
        .map(|&(id, x, y)| StationSpec::cluster_head(id, x, y, 0.0, FRAC_PI_2, 14.0, 10.0))
        .collect();
    specs.push(StationSpec::base_station(100, 1000.0, 1000.0, 10.0));
    Network::new(specs, GridSpec::square(10.0).unwrap()).unwrap()
}

fn flow_for(id: u32, src: u32, dst: u32, pick: u8) -> Flow {
    let (s, d) = (StationId(src), StationId(dst));
    match pick % 4 {
        0 => Flow::new(id, s, d, ClassName::Cbr, 64_000, 1_000),
        1 => Flow::new(id, s, d, ClassName::RtVbr, 256_000, 4_000).with_mode(ServiceMode::SemiBonded),
        2 => Flow::new(id, s, d, ClassName::Abr, 1_000_000, 8_000),
        _ => Flow::new(id, s, d, ClassName::Cbr, 96_000, 1_500).active_between(3, 15),
    }
}

type Case = (Vec<(u32, f64, f64)>, Vec<(usize, usize, u8)>, u64);

fn scenario_case() -> impl Strategy<Value = Case> {
    (layout(), prop::collection::vec((0usize..8, 0usize..8, any::<u8>()), 1..4), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn compliant_runs_keep_every_invariant((heads, picks, seed) in scenario_case()) {
        let net = network(&heads);
        let n = heads.len();
        let flows: Vec<Flow> = picks
            .iter()
            .enumerate()
            .filter(|(_, (a, b, _))| a % n != b % n)
            .map(|(k, &(a, b, p))| flow_for(k as u32 + 1, heads[a % n].0, heads[b % n].0, p))
            .collect();
        let cfg = SimConfig { seed, horizon_frames: 30, ..SimConfig::default() };
        let out = run(&net, &flows, &cfg).unwrap();
        let r = &out.report;

        prop_assert_eq!(r.control_collisions, 0);
        prop_assert!(r.lemmas.as_ref().unwrap().all_passed(), "{}", r);
        prop_assert!(audit_rt_consistency(&out.trace, &net).unwrap().passed);
        prop_assert!(audit_reservation_lifetimes(&out.trace).unwrap().passed);
        prop_assert_eq!(r.data_collisions, 0);

        let per_frame = (cfg.layout.rp_slots + cfg.layout.cf_slots as u32) as u64;
        for s in &r.stations {
            prop_assert_eq!(s.tx_slots + s.rx_slots + s.idle_slots + s.sleep_slots, per_frame * 30);
        }
        for f in &r.flows {
            prop_assert!(f.delivered + f.dropped() + f.queued_at_end <= f.generated);
        }
        let bound_us: Vec<(u32, u64)> = flows
            .iter()
            .filter_map(|f| f.delay_budget_ms().map(|ms| (f.id.0, ms as u64 * 1000)))
            .collect();
        for e in &out.trace.events {
            if let Event::PktDeliver { flow, created, delivered, .. } = &e.event {
                if let Some((_, b)) = bound_us.iter().find(|(id, _)| *id == flow.0) {
                    prop_assert!(delivered - created <= *b);
                }
            }
        }

        let text = out.trace.to_jsonl();
        let back = Trace::from_jsonl(&text).unwrap();
        prop_assert_eq!(back.digest(), out.trace.digest());
        let mut again = SimReport::from_trace(&back).unwrap();
        again.lemmas = r.lemmas.clone();
        prop_assert_eq!(&again, r);
    }

    #[test]
    fn same_inputs_same_digest((heads, picks, seed) in scenario_case()) {
        let net = network(&heads);
        let n = heads.len();
        let flows: Vec<Flow> = picks
            .iter()
            .enumerate()
            .filter(|(_, (a, b, _))| a % n != b % n)
            .map(|(k, &(a, b, p))| flow_for(k as u32 + 1, heads[a % n].0, heads[b % n].0, p))
            .collect();
        let cfg = SimConfig { seed, horizon_frames: 15, ..SimConfig::default() };
        let a = run(&net, &flows, &cfg).unwrap();
        let b = run(&net, &flows, &cfg).unwrap();
        prop_assert_eq!(a.trace.digest(), b.trace.digest());
    }

    #[test]
    fn scenario_round_trips(heads in layout(), seed in any::<u64>(), horizon in 1u64..500, rate in 32_000u64..2_000_000) {
        let mut s: Scenario = parse_scenario("[[stations]]\nid = 100\nkind = \"base_station\"\nx = 0.0\ny = 0.0\nrf_range = 5.0\n").unwrap();
        s.seed = seed;
        s.horizon_frames = horizon;
        for &(id, x, y) in &heads {
            s.stations.push(StationDef {
                id,
                kind: StationKind::ClusterHead,
                x,
                y,
                theta: Some(x / 7.0),
                alpha: Some(1.25),
                fso_range: Some(y + 1.0),
                rf_range: 10.0,
            });
        }
        s.flows.push(FlowDef {
            id: 1,
            src: heads[0].0,
            dst: 100,
            class: ClassName::Cbr,
            service_mode: ServiceMode::Bonded,
            rate,
            packet_size: 1_000,
            burst_length: 4,
            start: 0,
            stop: Some(horizon),
            delay_bound_ms: Some(45),
        });
        let again = parse_scenario(&s.to_toml()).unwrap();
        prop_assert_eq!(again, s);
    }
}
