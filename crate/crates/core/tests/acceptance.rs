//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the verdicts are always printed.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cellbench::aal::{cells_per_frame, LinkRate};
use cellbench::harness::{parse_spec, run_suite, write_csv, write_jsonl};
use cellbench::metrics::latency::{latency_stats, mimo_from_events, mimo_from_monitor, z_quantile, Latency};
use cellbench::metrics::throughput::{throughput_levels, FlowTemplate, Measurement, SearchParams, System};
use cellbench::metrics::{
    average_flr, burst, fairness_index, fairness_index_exact, frame_outcome, mean_of_ratios, measure_call, mfbs,
};
use cellbench::sim::{
    calibrate_monitor_overhead, linear_path, simulate, MonitorModel, Network, PortRef, RoutingTable, SwitchModel,
    TrafficSpec,
};
use cellbench::topology::{self, max_min_allocation, max_min_allocation_exact, ConnectionKind};
use cellbench::Tick;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OC3: u64 = 155_520_000;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn rate(bps: u64) -> LinkRate {
    LinkRate::new(bps).unwrap()
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// 1: fairness of k equal shares among n flows is exactly k/n.
fn fairness_k_of_n() -> Check {
    let share = ratio(37, 10);
    let mut cases = 0;
    for n in 1..=64usize {
        let ideal = vec![share.clone(); n];
        let ideal_f = vec![3.7e6; n];
        for k in 1..=n {
            let mut measured = vec![BigRational::zero(); n];
            let mut measured_f = vec![0.0; n];
            for i in 0..k {
                measured[i] = share.clone();
                measured_f[i] = 3.7e6;
            }
            let exact = fairness_index_exact(&measured, &ideal).map_err(|e| e.to_string())?;
            let want = ratio(k as i64, n as i64);
            ensure!(exact == want, "n={n} k={k}: exact index {exact}, want {want}");
            let f = fairness_index(&measured_f, &ideal_f).map_err(|e| e.to_string())?;
            let err = (f - k as f64 / n as f64).abs();
            ensure!(err <= 1e-12, "n={n} k={k}: float index {f} off by {err:e}");
            cases += 1;
        }
    }
    Ok(format!("{cases} (n, k) pairs with n <= 64, exact and within 1e-12"))
}

/// Foreground 0 -> 1 plus background 2 -> 1 and 3 -> 1, no buffer limit.
fn mixed_rate_frames(r_in: u64, r_out: u64, size: u32, bg_size: u32, monitor: &MonitorModel) -> Result<usize, String> {
    let mut sw = SwitchModel::uniform(4, rate(OC3), 700, None);
    sw.port_rates[0] = rate(r_in);
    sw.port_rates[1] = rate(r_out);
    let net = Network::single(sw);
    let mut routes = RoutingTable::new();
    for (input, vc) in [(0, 10), (2, 20), (3, 30)] {
        routes.insert(PortRef::new(0, input), vc, vec![(1, vc)]).unwrap();
    }
    let out_cap = rate(r_out).payload_capacity(size);
    let fg = 0.45 * rate(r_in).payload_capacity(size).min(out_cap);
    let bg = 0.2
        * rate(r_out)
            .payload_capacity(bg_size)
            .min(rate(OC3).payload_capacity(bg_size));
    let traffic = [
        TrafficSpec::ubr(10, size, fg),
        TrafficSpec::ubr(20, bg_size, bg).starting_at(1_111),
        TrafficSpec::ubr(30, bg_size, bg).starting_at(2_345),
    ];
    let trace = simulate(&net, &routes, &traffic, 4_000_000).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for frame in trace.frames().filter(|f| f.flow.vc_id == 10) {
        let events = mimo_from_events(&frame_outcome(&frame).map_err(|e| e.to_string())?.events);
        let cells = mimo_from_monitor(&frame, monitor);
        let (events, cells) = (events.map_err(|e| e.to_string())?, cells.map_err(|e| e.to_string())?);
        ensure!(
            events == cells && events != Latency::Unbounded,
            "{r_in}->{r_out} bps, {size} octets, frame {}: {events:?} from events, {cells:?} from cells",
            frame.frame_id()
        );
        compared += 1;
    }
    Ok(compared)
}

/// 2: both latency routes agree to the tick under mixed rates and background.
fn cross_path_equivalence() -> Check {
    let started = Instant::now();
    let raw = MonitorModel::new(1_234, 56);
    let overhead = calibrate_monitor_overhead(&raw, rate(OC3));
    ensure!(
        overhead == raw.overhead,
        "calibration returned {overhead}, analyzer adds {}",
        raw.overhead
    );
    let monitor = MonitorModel::new(overhead, raw.propagation);
    let mut frames = 0;
    for (r_in, r_out) in [
        (OC3, 2 * OC3),
        (OC3, OC3),
        (2 * OC3, OC3),
        (4 * OC3, OC3),
        (100_000_000, OC3),
    ] {
        for (size, bg) in [(64, 1518), (1518, 64), (9188, 576)] {
            frames += mixed_rate_frames(r_in, r_out, size, bg, &monitor)?;
        }
    }
    let took = started.elapsed();
    ensure!(frames >= 1000, "only {frames} frames compared");
    ensure!(took < Duration::from_secs(10), "took {took:?}");
    Ok(format!(
        "{frames} frames, 0 ticks difference, {:.2} s",
        took.as_secs_f64()
    ))
}

/// 3: an unloaded switch adds its latency plus one output cell time.
fn analytic_oracle() -> Check {
    let latency: Tick = 2_500;
    let monitor = MonitorModel::new(300, 20);
    let mut lines = Vec::new();
    for bps in [OC3, 4 * OC3] {
        let r = rate(bps);
        let net = Network::single(SwitchModel::uniform(2, r, latency, Some(256)));
        let mut routes = RoutingTable::new();
        routes.insert(PortRef::new(0, 0), 1, vec![(1, 1)]).unwrap();
        for f in [1u32, 2, 32, 192] {
            let size = 48 * f - 8;
            ensure!(
                cells_per_frame(u64::from(size)) == u64::from(f),
                "{size} octets is not {f} cells"
            );
            let spec =
                TrafficSpec::ubr(1, size, r.payload_capacity(size)).limited(cellbench::sim::FrameLimit::Count(1));
            let trace = simulate(&net, &routes, &[spec], Tick::MAX).map_err(|e| e.to_string())?;
            let frame = trace.frames().next().ok_or("no frame")?;
            let want = Latency::Finite(latency + r.cell_time());
            let by_events = mimo_from_events(&frame_outcome(&frame).map_err(|e| e.to_string())?.events)
                .map_err(|e| e.to_string())?;
            let by_cells = mimo_from_monitor(&frame, &monitor).map_err(|e| e.to_string())?;
            ensure!(
                by_events == want,
                "{bps} bps f={f}: events give {by_events:?}, want {want:?}"
            );
            ensure!(
                by_cells == want,
                "{bps} bps f={f}: cells give {by_cells:?}, want {want:?}"
            );
        }
        lines.push(format!("{} ticks at {bps} bps", latency + r.cell_time()));
    }
    Ok(format!("f in {{1, 2, 32, 192}}: {}", lines.join(", ")))
}

fn k_to_1_system(size: u32, buffer: u32) -> System {
    let r = rate(OC3);
    let net = Network::single(SwitchModel::uniform(3, r, 1_000, Some(buffer)));
    let config = topology::build_k_to_1(2, 0, 3).unwrap();
    let routes = RoutingTable::from_config(0, &config, &net).unwrap();
    let foreground = config
        .vcs
        .iter()
        .enumerate()
        .map(|(i, vc)| FlowTemplate {
            phase: 977 * i as Tick,
            ..FlowTemplate::ubr(vc.vc_id, size, r.payload_capacity(size))
        })
        .collect();
    System {
        network: net,
        routes,
        foreground,
        background: Vec::new(),
        measurement: Measurement::new(300_000, 3_000_000).unwrap(),
    }
}

/// 4: two inputs into one output with finite buffers.
fn k_to_1_ordering() -> Check {
    let started = Instant::now();
    let size = 64;
    let system = k_to_1_system(size, 64);
    let result = throughput_levels(&system, &SearchParams::default()).map_err(|e| e.to_string())?;
    let cap = rate(OC3).payload_capacity(size);
    let lossless = result.lossless_bps().ok_or("no lossless level found")?;
    let (peak, full) = (result.peak.throughput_bps, result.full_load.throughput_bps);
    ensure!(lossless <= peak, "lossless {lossless} above peak {peak}");
    ensure!(peak <= cap * (1.0 + 1e-9), "peak {peak} above output capacity {cap}");
    let flr = result.full_load.flr.ok_or("empty full-load window")?;
    ensure!((flr - 0.5).abs() <= 0.02, "full-load frame loss ratio {flr}");

    let trace = system.run(1.0).map_err(|e| e.to_string())?;
    let totals = trace.stats.totals();
    let lost = trace.records.iter().filter(|r| r.is_lost()).count() as u64;
    let delivered = trace.records.len() as u64 - lost;
    ensure!(
        totals.injected_cells == totals.delivered + totals.dropped,
        "counters: {} injected, {} delivered, {} dropped",
        totals.injected_cells,
        totals.delivered,
        totals.dropped
    );
    ensure!(
        delivered == totals.delivered && lost == totals.dropped,
        "records show {delivered} delivered and {lost} lost, counters {} and {}",
        totals.delivered,
        totals.dropped
    );
    let took = started.elapsed();
    ensure!(took < Duration::from_secs(30), "took {took:?}");
    Ok(format!(
        "lossless {lossless:.0} <= peak {peak:.0} <= capacity {cap:.0} bps, full load {full:.0} bps, flr {flr:.4}, \
         {} cells conserved, {:.2} s",
        totals.injected_cells,
        took.as_secs_f64()
    ))
}

/// 5: the average frame loss ratio pools frames instead of averaging ratios.
fn average_flr_witness() -> Check {
    let runs = [(100.0, 90.0), (300.0, 240.0)];
    let pooled = average_flr(&runs).map_err(|e| e.to_string())?;
    let naive = mean_of_ratios(&runs).map_err(|e| e.to_string())?;
    ensure!((pooled - 0.175).abs() <= 1e-12, "pooled ratio {pooled}");
    ensure!((naive - 0.15).abs() <= 1e-12, "mean of ratios {naive}");
    Ok(format!("pooled {pooled}, mean of ratios {naive:.3}"))
}

fn alternating(p: usize) -> Vec<Latency> {
    (0..p)
        .map(|i| Latency::Finite(if i % 2 == 0 { 10_000 } else { 10_040 }))
        .collect()
}

/// 6: z for alpha = 0.001 and the 1/sqrt(p) standard error.
fn confidence_interval() -> Check {
    let z = z_quantile(0.001).map_err(|e| e.to_string())?;
    ensure!((z - 3.291).abs() <= 0.001, "z = {z}");
    let small = latency_stats(&alternating(1_000), 0.001).map_err(|e| e.to_string())?;
    let large = latency_stats(&alternating(4_000), 0.001).map_err(|e| e.to_string())?;
    ensure!(small.z == z, "stats use z = {}", small.z);
    let (a, b) = (small.summary.ok_or("unbounded")?, large.summary.ok_or("unbounded")?);
    let halving = a.stderr / b.stderr;
    ensure!((halving - 2.0).abs() <= 0.02, "stderr ratio {halving}");
    let width = (a.ci_high - a.ci_low) / (b.ci_high - b.ci_low);
    ensure!((width - 2.0).abs() <= 0.02, "interval width ratio {width}");
    Ok(format!("z = {z:.4}, stderr ratio {halving:.5} for p = 1000 vs 4000"))
}

/// 7: burst-size boundary and the buffer occupancy model.
fn mfbs_model() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..10 {
        let frames_buffered: u32 = rng.random_range(2..=40);
        let size = [40u32, 64, 576, 1518][rng.random_range(0..4)];
        let r_in: u64 = rng.random_range(100_000_000..=622_080_000);
        let r_out = (r_in as f64 * rng.random_range(0.3..0.9)) as u64;
        let f = cells_per_frame(u64::from(size)) as u32;

        let mut sw = SwitchModel::uniform(2, rate(r_in), 800, Some(frames_buffered * f));
        sw.port_rates[1] = rate(r_out);
        let net = Network::single(sw);
        let mut routes = RoutingTable::new();
        routes.insert(PortRef::new(0, 0), 1, vec![(1, 1)]).unwrap();
        let peak = rate(r_in).payload_capacity(size);
        let system = System {
            network: net,
            routes,
            foreground: vec![FlowTemplate::ubr(1, size, peak)],
            background: Vec::new(),
            measurement: Measurement::new(5_000, 10_000).unwrap(),
        };
        let (c_in, c_out) = (rate(r_in).cell_time() as f64, rate(r_out).cell_time() as f64);
        let predicted = f64::from(frames_buffered) * (1.0 / c_in) / (1.0 / c_in - 1.0 / c_out);
        let result = mfbs(&system, peak, 4 * predicted as u64 + 16).map_err(|e| e.to_string())?;
        let got = result
            .frames
            .ok_or_else(|| format!("case {case}: no loss up to the ceiling"))?;
        let at = burst(&system, peak, got).map_err(|e| e.to_string())?;
        let over = burst(&system, peak, got + 1).map_err(|e| e.to_string())?;
        ensure!(
            at.lossless() && !over.lossless(),
            "case {case}: {got} frames is not the boundary"
        );
        let diff = (got as f64 - predicted).abs();
        ensure!(
            diff <= 1.0,
            "case {case}: B={frames_buffered} frames of {size} octets, {r_in} -> {r_out} bps: {got} frames, model {predicted:.2}"
        );
        worst = worst.max(diff);
    }
    Ok(format!(
        "10 random instances on the boundary, worst distance to the model {worst:.2} frames"
    ))
}

/// 8: the destination's hold time never shows up in call latency.
fn hold_invariance() -> Check {
    let r = rate(OC3);
    let mut seen = Vec::new();
    for switches in [1u32, 3] {
        let net = Network::linear_chain(switches, r, 1_500, Some(64), 2_000);
        let path = linear_path(switches);
        let setup = TrafficSpec::signaling(1, 128, r.payload_capacity(128));
        let connect = TrafficSpec::signaling(2, 64, r.payload_capacity(64));
        let quick = measure_call(&net, &path, &setup, &connect, 0, 1).map_err(|e| e.to_string())?;
        let slow = measure_call(&net, &path, &setup, &connect, 1_000_000, 1).map_err(|e| e.to_string())?;
        ensure!(
            quick.latency == slow.latency,
            "{switches} switches: {:?} vs {:?}",
            quick.latency,
            slow.latency
        );
        let t = quick.latency.finite().ok_or("call never completed")?;
        seen.push(format!("{t} ticks over {switches}"));
    }
    Ok(format!("hold 0 and 1e6 agree: {}", seen.join(", ")))
}

const REPORT_SPEC: &str = "\
seed = 2024
metrics = throughput, latency, mfbs, call, goodput
configs = straight, k_to_1(2)
frame_sizes = 64, 1518
repetitions = 2
duration = 2000000
p = 16
latency_start = 0.25
mfbs_ceiling = 32
goodput_sizes = 64
goodput_fps = 4000
system {
    ports = 4
    rate = 155520000
    cell_latency = 800
    buffer = 32
}
background {
    config = straight
    class = ubr
    rate = 10000000
    frame_size = 576
}
";

fn report_bytes(threads: usize) -> Result<(Vec<u8>, Vec<u8>), String> {
    let spec = parse_spec(REPORT_SPEC).map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    let report = pool.install(|| run_suite(&spec)).map_err(|e| e.to_string())?;
    let (mut jsonl, mut csv) = (Vec::new(), Vec::new());
    write_jsonl(&report, &mut jsonl).map_err(|e| e.to_string())?;
    write_csv(&report, &mut csv).map_err(|e| e.to_string())?;
    Ok((jsonl, csv))
}

/// 9: a fixed seed reproduces reports byte for byte.
fn byte_identical_reports() -> Check {
    let a = report_bytes(1)?;
    let b = report_bytes(4)?;
    let c = report_bytes(4)?;
    ensure!(a == b && b == c, "reports differ between runs");
    Ok(format!(
        "{} bytes of jsonl and {} of csv identical over 3 runs",
        a.0.len(),
        a.1.len()
    ))
}

/// 10: VC counts of every configuration.
fn vc_counts() -> Check {
    let mut checked = 0;
    for n in 2..=16u32 {
        let mut want = vec![
            (ConnectionKind::Straight, n),
            (ConnectionKind::FullCross, n * (n - 1)),
            (ConnectionKind::Multicast, 1),
        ];
        want.extend((1..n).map(|m| (ConnectionKind::PartialCross(m), n * m)));
        want.extend((2..n).map(|k| (ConnectionKind::KTo1(k), k)));
        for (kind, count) in want {
            let config = topology::build(kind, n).map_err(|e| format!("{kind} on {n} ports: {e}"))?;
            ensure!(
                config.vcs.len() as u32 == count,
                "{kind} on {n} ports has {} VCs",
                config.vcs.len()
            );
            checked += 1;
        }
    }
    let lb = topology::build_loopback_throughput(8, 2, &[0, 0, 0, 0, 1, 1, 1, 1]).map_err(|e| e.to_string())?;
    ensure!(
        lb.config.vcs.len() == 16,
        "loopback emulation of 8x2 has {} VCs",
        lb.config.vcs.len()
    );
    Ok(format!(
        "{checked} configurations with n <= 16, loopback 8 ports m = 2 emulates 16 VCs"
    ))
}

struct Instance {
    demands: Vec<Option<BigRational>>,
    capacities: Vec<BigRational>,
    routes: Vec<Vec<usize>>,
}

fn corpus() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..100)
        .map(|_| {
            let links = rng.random_range(1..=4usize);
            let flows = rng.random_range(1..=6usize);
            let capacities = (0..links)
                .map(|_| ratio(rng.random_range(1..=60), rng.random_range(1..=6)))
                .collect();
            let routes = (0..flows)
                .map(|_| {
                    let mut r: Vec<usize> = (0..links).filter(|_| rng.random_bool(0.5)).collect();
                    if r.is_empty() {
                        r.push(rng.random_range(0..links));
                    }
                    r
                })
                .collect();
            let demands = (0..flows)
                .map(|_| {
                    rng.random_bool(0.4)
                        .then(|| ratio(rng.random_range(0..=40), rng.random_range(1..=4)))
                })
                .collect();
            Instance {
                demands,
                capacities,
                routes,
            }
        })
        .collect()
}

/// Bottleneck characterization: feasible, and every flow either gets its
/// demand or crosses a saturated link on which no flow gets more.
fn is_max_min(inst: &Instance, alloc: &[BigRational]) -> Result<(), String> {
    let n = inst.routes.len();
    let load: Vec<BigRational> = (0..inst.capacities.len())
        .map(|l| {
            (0..n)
                .filter(|&i| inst.routes[i].contains(&l))
                .map(|i| alloc[i].clone())
                .sum()
        })
        .collect();
    for (l, c) in inst.capacities.iter().enumerate() {
        ensure!(load[l] <= *c, "link {l} carries {} over capacity {c}", load[l]);
    }
    for i in 0..n {
        ensure!(alloc[i] >= BigRational::zero(), "flow {i} negative");
        if let Some(d) = &inst.demands[i] {
            ensure!(alloc[i] <= *d, "flow {i} gets {} above demand {d}", alloc[i]);
            if alloc[i] == *d {
                continue;
            }
        }
        let bottleneck = inst.routes[i].iter().any(|&l| {
            load[l] == inst.capacities[l]
                && (0..n)
                    .filter(|&j| inst.routes[j].contains(&l))
                    .all(|j| alloc[j] <= alloc[i])
        });
        ensure!(bottleneck, "flow {i} with {} has no bottleneck", alloc[i]);
    }
    Ok(())
}

/// 11: max-min shares against the bottleneck characterization.
fn max_min_corpus() -> Check {
    let corpus = corpus();
    for (k, inst) in corpus.iter().enumerate() {
        let alloc =
            max_min_allocation_exact(&inst.demands, &inst.capacities, &inst.routes).map_err(|e| e.to_string())?;
        is_max_min(inst, &alloc).map_err(|e| format!("case {k}: {e}"))?;
        let to_f = |x: &BigRational| x.to_f64().unwrap();
        let demands: Vec<f64> = inst
            .demands
            .iter()
            .map(|d| d.as_ref().map_or(f64::INFINITY, to_f))
            .collect();
        let caps: Vec<f64> = inst.capacities.iter().map(to_f).collect();
        let approx = max_min_allocation(&demands, &caps, &inst.routes).map_err(|e| e.to_string())?;
        for (a, b) in approx.iter().zip(&alloc) {
            ensure!(
                (a - to_f(b)).abs() <= 1e-9 * to_f(b).max(1.0),
                "case {k}: float share {a}, exact {b}"
            );
        }
    }
    Ok(format!("{} instances, exact match", corpus.len()))
}

type Criterion = (&'static str, fn() -> Check);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("fairness index k/n", fairness_k_of_n),
        ("latency cross-path equivalence", cross_path_equivalence),
        ("latency analytic oracle", analytic_oracle),
        ("k-to-1 throughput ordering", k_to_1_ordering),
        ("average frame loss ratio", average_flr_witness),
        ("confidence interval", confidence_interval),
        ("burst size boundary and model", mfbs_model),
        ("call latency hold invariance", hold_invariance),
        ("deterministic reports", byte_identical_reports),
        ("VC counts", vc_counts),
        ("max-min oracle", max_min_corpus),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
