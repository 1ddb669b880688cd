use cellbench::aal::LinkRate;
use cellbench::metrics::latency::{latency_stats, mimo_from_events, mimo_from_monitor, nfot, Latency};
use cellbench::metrics::throughput::{throughput_levels, FlowTemplate, Measurement, SearchParams, System};
use cellbench::metrics::{
    average_flr, fairness_index, fairness_index_exact, frame_outcome, frame_outcomes, geometric_ladder, mean_of_ratios,
    measure_call, mfbs, LatencySystem,
};
use cellbench::sim::{linear_path, simulate, MonitorModel, Network, PortRef, RoutingTable, SwitchModel, TrafficSpec};
use cellbench::topology;
use cellbench::Tick;
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

const OC3: u64 = 155_520_000;

fn rate(bps: u64) -> LinkRate {
    LinkRate::new(bps).unwrap()
}

/// Foreground VC 1 from port 0 to port 1, background VC 2 from port 2 to port 1.
fn shared_output(r_in: u64, r_out: u64, buffer: Option<u32>) -> (Network, RoutingTable) {
    let mut sw = SwitchModel::uniform(3, rate(OC3), 400, buffer);
    sw.port_rates[0] = rate(r_in);
    sw.port_rates[1] = rate(r_out);
    let mut routes = RoutingTable::new();
    routes.insert(PortRef::new(0, 0), 1, vec![(1, 1)]).unwrap();
    routes.insert(PortRef::new(0, 2), 2, vec![(1, 2)]).unwrap();
    (Network::single(sw), routes)
}

fn ratios() -> impl Strategy<Value = Vec<(u32, u32)>> {
    prop::collection::vec((0u32..1000, 1u32..1000), 1..24)
}

proptest! {
    #[test]
    fn fairness_lies_between_one_over_n_and_one(pairs in ratios(), scale in 0.001f64..1000.0) {
        prop_assume!(pairs.iter().any(|p| p.0 > 0));
        let measured: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let ideal: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        let f = fairness_index(&measured, &ideal).unwrap();
        let n = pairs.len() as f64;
        prop_assert!(f >= 1.0 / n - 1e-12 && f <= 1.0 + 1e-12, "{f}");
        let scaled: Vec<f64> = measured.iter().map(|m| m * scale).collect();
        let g = fairness_index(&scaled, &ideal).unwrap();
        prop_assert!((f - g).abs() <= 1e-12, "{f} vs {g}");
    }

    #[test]
    fn fairness_is_one_exactly_when_shares_are_proportional(pairs in ratios()) {
        prop_assume!(pairs.iter().any(|p| p.0 > 0));
        let q = |n: u32, d: u32| BigRational::new(BigInt::from(n), BigInt::from(d));
        let measured: Vec<BigRational> = pairs.iter().map(|p| q(p.0, 1)).collect();
        let ideal: Vec<BigRational> = pairs.iter().map(|p| q(p.1, 1)).collect();
        let x: Vec<BigRational> = pairs.iter().map(|p| q(p.0, p.1)).collect();
        let equal = x.iter().all(|v| *v == x[0]);
        let f = fairness_index_exact(&measured, &ideal).unwrap();
        prop_assert_eq!(f == q(1, 1), equal);
    }

    #[test]
    fn pooled_loss_matches_ratio_mean_for_equal_runs(input in 1u32..10_000, outs in prop::collection::vec(0u32..10_000, 1..8)) {
        let runs: Vec<(f64, f64)> = outs.iter().map(|&o| (f64::from(input), f64::from(o.min(input)))).collect();
        let a = average_flr(&runs).unwrap();
        let b = mean_of_ratios(&runs).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn interval_is_centered_on_the_mean(xs in prop::collection::vec(0u64..1_000_000, 2..200), alpha in 0.001f64..0.2) {
        let samples: Vec<Latency> = xs.iter().map(|&t| Latency::Finite(t)).collect();
        let stats = latency_stats(&samples, alpha).unwrap();
        let s = stats.summary.unwrap();
        prop_assert!(s.ci_low <= s.mean && s.mean <= s.ci_high);
        let half = stats.z * s.stderr;
        prop_assert!(((s.ci_high - s.ci_low) - 2.0 * half).abs() <= 1e-6 * (1.0 + half));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn monitor_rebuilds_event_latency(
        r_in in prop::sample::select(vec![50_000_000u64, OC3, 2 * OC3, 622_080_000]),
        r_out in prop::sample::select(vec![50_000_000u64, OC3, 2 * OC3, 622_080_000]),
        size in prop::sample::select(vec![40u32, 64, 576, 1518, 9188]),
        bg_size in prop::sample::select(vec![40u32, 1518]),
        fg_load in 0.05f64..0.5,
        bg_load in 0.0f64..0.45,
        phase in 0u64..20_000,
        overhead in 0u64..5_000,
        propagation in 0u64..5_000,
    ) {
        let (net, routes) = shared_output(r_in, r_out, None);
        let fg = fg_load * rate(r_in).payload_capacity(size).min(rate(r_out).payload_capacity(size));
        let mut traffic = vec![TrafficSpec::ubr(1, size, fg).starting_at(phase)];
        let bg = bg_load * rate(r_out).payload_capacity(bg_size).min(rate(OC3).payload_capacity(bg_size));
        if bg > 0.0 {
            traffic.push(TrafficSpec::ubr(2, bg_size, bg));
        }
        let trace = simulate(&net, &routes, &traffic, 1_500_000).unwrap();
        let monitor = MonitorModel::new(overhead, propagation);
        let bare = MonitorModel::default();
        for frame in trace.frames().filter(|f| f.flow.vc_id == 1) {
            let by_events = mimo_from_events(&frame_outcome(&frame).unwrap().events).unwrap();
            // the analyzer's bias cancels out of the reconstruction
            prop_assert_eq!(mimo_from_monitor(&frame, &monitor).unwrap(), by_events);
            prop_assert_eq!(mimo_from_monitor(&frame, &bare).unwrap(), by_events);
        }
    }
}

#[test]
fn both_branches_agree_at_equal_rates() {
    let (net, routes) = shared_output(OC3, OC3, None);
    let traffic = [
        TrafficSpec::ubr(1, 1518, 0.3 * rate(OC3).payload_capacity(1518)),
        TrafficSpec::ubr(2, 64, 0.5 * rate(OC3).payload_capacity(64)).starting_at(333),
    ];
    let trace = simulate(&net, &routes, &traffic, 10_000_000).unwrap();
    let mut seen = 0;
    for f in frame_outcomes(&trace).unwrap().iter().filter(|f| f.vc_id == 1) {
        let e = f.events;
        let t3 = e.t3.unwrap();
        assert_eq!(nfot(e.fit(), e.input_rate, e.output_rate), e.fit());
        assert_eq!(t3 - e.t2, t3 - e.t1 - e.fit());
        seen += 1;
    }
    assert!(seen > 10);
}

#[test]
fn slow_input_takes_lilo_and_fast_input_filo_branch() {
    for (r_in, r_out) in [(OC3, 4 * OC3), (4 * OC3, OC3)] {
        let (net, routes) = shared_output(r_in, r_out, None);
        let spec = TrafficSpec::ubr(1, 9188, rate(r_in.min(r_out)).payload_capacity(9188) * 0.5);
        let trace = simulate(&net, &routes, &[spec], 2_000_000).unwrap();
        for f in frame_outcomes(&trace).unwrap() {
            let e = f.events;
            let t3 = e.t3.unwrap();
            let (lilo, filo_branch) = (t3 - e.t2, t3 - e.t1 - nfot(e.fit(), e.input_rate, e.output_rate));
            let want = if r_in <= r_out { lilo } else { filo_branch };
            assert_eq!(mimo_from_events(&e).unwrap(), Latency::Finite(lilo.min(filo_branch)));
            assert_eq!(lilo.min(filo_branch), want, "{r_in} -> {r_out}");
        }
    }
}

fn straight_system(size: u32) -> System {
    let r = rate(OC3);
    let net = Network::single(SwitchModel::uniform(4, r, 900, Some(64)));
    let config = topology::build_straight(4).unwrap();
    let routes = RoutingTable::from_config(0, &config, &net).unwrap();
    let foreground = config
        .vcs
        .iter()
        .map(|vc| FlowTemplate {
            phase: 1_000 * Tick::from(vc.vc_id),
            ..FlowTemplate::ubr(vc.vc_id, size, r.payload_capacity(size))
        })
        .collect();
    System {
        network: net,
        routes,
        foreground,
        background: Vec::new(),
        measurement: Measurement::new(200_000, 2_000_000).unwrap(),
    }
}

#[test]
fn straight_throughput_reaches_the_link() {
    let system = straight_system(1518);
    let result = throughput_levels(&system, &SearchParams::default()).unwrap();
    let cap = 4.0 * rate(OC3).payload_capacity(1518);
    let lossless = result.lossless_bps().unwrap();
    assert!(lossless <= result.peak.throughput_bps * (1.0 + 1e-12));
    assert!(result.peak.throughput_bps <= cap * (1.0 + 1e-9));
    assert!(lossless > 0.95 * cap, "{lossless} of {cap}");
    assert_eq!(result.full_load.flr, Some(0.0));
    assert!((result.full_load.fairness.unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn unlimited_buffers_never_bound_a_burst() {
    let mut system = straight_system(64);
    system.network = Network::single(SwitchModel::uniform(4, rate(OC3), 900, None));
    let result = mfbs(&system, rate(OC3).payload_capacity(64), 64).unwrap();
    assert_eq!(result.frames, None);
    assert_eq!(result.octets(), None);
    // at the link rate a straight switch never queues, so doubling reaches the ceiling
    assert_eq!(
        result.probes.iter().map(|p| p.frames).collect::<Vec<_>>(),
        [1, 2, 4, 8, 16, 32, 64]
    );
}

#[test]
fn latency_ladder_stops_at_first_loss() {
    let r = rate(OC3);
    // a 1518-octet frame is 32 back-to-back cells; 64 cells absorb one burst
    let (net, routes) = shared_output(OC3, OC3, Some(64));
    let system = LatencySystem {
        network: net,
        routes,
        foreground: FlowTemplate {
            phase: 77,
            ..FlowTemplate::ubr(1, 1518, r.payload_capacity(1518))
        },
        background: vec![TrafficSpec::cbr(2, 0.6 * r.cell_payload_capacity())],
        warmup: 100_000,
        p: 40,
        alpha: 0.05,
        monitor: MonitorModel::new(200, 50),
    };
    let fractions = [0.05, 0.1, 0.2, 0.3, 0.6, 0.8, 1.0];
    let points = system.ladder(&fractions).unwrap();
    let last = points.last().unwrap();
    assert!(
        last.stats.is_unbounded(),
        "foreground plus background exceed the output"
    );
    assert!(points.len() < fractions.len());
    assert!(points[..points.len() - 1].iter().all(|p| !p.stats.is_unbounded()));
    assert!(points.iter().all(|p| p.samples.len() == 40 && p.stats.p == 40));
    assert_eq!(points[0].stats.lost_in_window, 0);
    assert!(last.stats.lost_in_window > 0);
    let means: Vec<f64> = points[..points.len() - 1]
        .iter()
        .map(|p| p.stats.summary.unwrap().mean)
        .collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1] + 1.0), "{means:?}");
}

#[test]
fn ladder_rejects_out_of_range_fractions() {
    let (net, routes) = shared_output(OC3, OC3, None);
    let system = LatencySystem {
        network: net,
        routes,
        foreground: FlowTemplate::ubr(1, 64, rate(OC3).payload_capacity(64)),
        background: Vec::new(),
        warmup: 0,
        p: 2,
        alpha: 0.05,
        monitor: MonitorModel::default(),
    };
    assert!(system.measure(0.0).is_err());
    assert!(system.measure(1.5).is_err());
    assert_eq!(geometric_ladder(0.25, 2.0).unwrap(), [0.25, 0.5, 1.0]);
}

#[test]
fn call_latency_grows_with_the_chain() {
    let r = rate(OC3);
    let setup = TrafficSpec::signaling(1, 128, r.payload_capacity(128));
    let connect = TrafficSpec::signaling(2, 64, r.payload_capacity(64));
    let mut last = 0;
    for switches in 1..=4u32 {
        let net = Network::linear_chain(switches, r, 1_000, None, 500);
        let report = measure_call(&net, &linear_path(switches), &setup, &connect, 10_000, 2).unwrap();
        let t = report.latency.finite().unwrap();
        assert_eq!(
            Some(t),
            report.setup.finite().zip(report.connect.finite()).map(|(a, b)| a + b)
        );
        assert_eq!(report.switches, switches);
        assert_eq!(report.hierarchy_levels, 2);
        assert!(t > last);
        last = t;
    }
}

#[test]
fn single_cell_messages_have_closed_form_latency() {
    let r = rate(OC3);
    let net = Network::linear_chain(2, r, 100, None, 0);
    let report = measure_call(
        &net,
        &linear_path(2),
        &TrafficSpec::signaling(5, 40, r.payload_capacity(40)),
        &TrafficSpec::signaling(6, 40, r.payload_capacity(40)),
        0,
        1,
    )
    .unwrap();
    // one cell per message: each hop costs one cell time plus the latency,
    // the first input link one more
    let one_way = 2 * (r.cell_time() + 100) + r.cell_time();
    assert_eq!(report.setup, Latency::Finite(one_way - r.cell_time()));
    assert_eq!(report.connect, report.setup);
}
