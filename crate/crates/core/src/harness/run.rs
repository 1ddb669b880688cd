use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::report::{write_csv, write_jsonl, write_table, MetricReport, RunRow};
use super::spec::{Format, LoadLadder, Suite, TestSpec};
use crate::aal::{LinkRate, ServiceClass};
use crate::error::{Error, Result};
use crate::metrics::{
    default_grid, frame_loss_ratio, frame_outcomes, geometric_ladder, goodput_counts, measure_call, mfbs,
    throughput_levels, FlowTemplate, LatencySystem, Measurement, SearchParams, System,
};
use crate::sim::{
    calibrate_monitor_overhead, linear_path, simulate, MonitorModel, Network, RoutingTable, SwitchModel, TrafficSpec,
};
use crate::topology::{build, build_latency_background, ConnectionConfig, ConnectionKind};
use crate::{Tick, TICKS_PER_SEC};

/// One independent unit of the run matrix. A unit may produce several rows.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Job {
    Throughput {
        kind: ConnectionKind,
        size: u32,
        rep: u32,
    },
    Latency {
        size: u32,
        rep: u32,
    },
    Mfbs {
        kind: ConnectionKind,
        size: u32,
        rep: u32,
    },
    Call {
        rep: u32,
    },
    Goodput {
        kind: ConnectionKind,
        size: u32,
        fps: f64,
        rep: u32,
    },
}

impl Job {
    fn describe(&self) -> String {
        match self {
            Job::Throughput { kind, size, rep } => format!("throughput {kind} {size} octets rep {rep}"),
            Job::Latency { size, rep } => format!("latency {size} octets rep {rep}"),
            Job::Mfbs { kind, size, rep } => format!("mfbs {kind} {size} octets rep {rep}"),
            Job::Call { rep } => format!("call rep {rep}"),
            Job::Goodput { kind, size, fps, rep } => format!("goodput {kind} {size} octets {fps} fps rep {rep}"),
        }
    }
}

fn plan(spec: &TestSpec) -> Vec<Job> {
    let mut jobs = Vec::new();
    let reps = 0..spec.repetitions;
    for &suite in &spec.suites {
        match suite {
            Suite::Throughput | Suite::Mfbs => {
                for &kind in &spec.configs {
                    for &size in &spec.frame_sizes {
                        for rep in reps.clone() {
                            jobs.push(if suite == Suite::Throughput {
                                Job::Throughput { kind, size, rep }
                            } else {
                                Job::Mfbs { kind, size, rep }
                            });
                        }
                    }
                }
            }
            Suite::Latency => {
                for &size in &spec.frame_sizes {
                    for rep in reps.clone() {
                        jobs.push(Job::Latency { size, rep });
                    }
                }
            }
            Suite::Call => jobs.extend(reps.clone().map(|rep| Job::Call { rep })),
            Suite::Goodput => {
                for &kind in &spec.configs {
                    for &size in &spec.goodput_sizes {
                        for &fps in &spec.goodput_fps {
                            for rep in reps.clone() {
                                jobs.push(Job::Goodput { kind, size, fps, rep });
                            }
                        }
                    }
                }
            }
        }
    }
    jobs
}

/// Source start offsets for one repetition, each uniform over one frame
/// interval. Repetition `r` draws from stream `r` of the seed.
fn phases(seed: u64, rep: u32, intervals_s: &[f64]) -> Vec<Tick> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(rep));
    intervals_s
        .iter()
        .map(|&i| (rng.random::<f64>() * i * TICKS_PER_SEC as f64).floor() as Tick)
        .collect()
}

fn switch_model(spec: &TestSpec, rates: &[LinkRate]) -> SwitchModel {
    let sys = &spec.system;
    let mut sw = SwitchModel::uniform(sys.ports, rates[0], sys.cell_latency, sys.buffer_cells);
    sw.port_rates = rates.to_vec();
    sw
}

/// Single switch carrying `kind`; each VC gets an equal share of its input
/// link at full load.
pub fn throughput_system(spec: &TestSpec, kind: ConnectionKind, size: u32, rep: u32) -> Result<System> {
    let rates = spec.link_rates()?;
    let network = Network::single(switch_model(spec, &rates));
    let config = build(kind, spec.system.ports)?;
    let routes = RoutingTable::from_config(0, &config, &network)?;
    let by_input = config.by_input_port();
    let mut foreground: Vec<FlowTemplate> = config
        .vcs
        .iter()
        .map(|vc| {
            let share = by_input[&vc.input_port].len() as f64;
            FlowTemplate::ubr(
                vc.vc_id,
                size,
                rates[vc.input_port as usize].payload_capacity(size) / share,
            )
        })
        .collect();
    let intervals: Vec<f64> = foreground.iter().map(|f| 8.0 * f64::from(size) / f.full_bps).collect();
    for (f, ph) in foreground.iter_mut().zip(phases(spec.seed, rep, &intervals)) {
        f.phase = ph;
    }
    Ok(System {
        network,
        routes,
        foreground,
        background: Vec::new(),
        measurement: Measurement::new(spec.warmup(), spec.duration)?,
    })
}

/// Foreground VC across the two network modules plus the configured
/// background, looped through every other port.
pub fn latency_system(spec: &TestSpec, size: u32, rep: u32) -> Result<LatencySystem> {
    let rates = spec.link_rates()?;
    let kind = spec.background.as_ref().map_or(ConnectionKind::Straight, |b| b.config);
    let layout = build_latency_background(kind, &rates)?;
    let mut sw = switch_model(spec, &rates);
    sw.loopback = layout.loopback_ports.clone();
    let network = Network::single(sw);
    let mut routes = RoutingTable::from_config(0, &layout.background, &network)?;
    let fg = ConnectionConfig {
        kind: ConnectionKind::Straight,
        vcs: vec![layout.foreground.clone()],
        n_ports: spec.system.ports,
    };
    routes.add_config(0, &fg, &network)?;

    let mut background = Vec::new();
    if let Some(bg) = &spec.background {
        for &vc in &layout.background_ingress {
            background.push(match bg.class {
                ServiceClass::Cbr => TrafficSpec::cbr(vc, bg.rate_bps),
                _ => TrafficSpec::ubr(vc, bg.frame_size.unwrap_or(size), bg.rate_bps),
            });
        }
    }
    let ffl = LinkRate::new(layout.budget.ffl_bps)?;
    let mut foreground = FlowTemplate::ubr(layout.foreground.vc_id, size, ffl.payload_capacity(size));
    foreground.phase = phases(spec.seed, rep, &[8.0 * f64::from(size) / foreground.full_bps])[0];

    let sys = &spec.system;
    let raw = MonitorModel::new(sys.monitor_overhead, sys.monitor_propagation);
    let overhead = calibrate_monitor_overhead(&raw, rates[layout.foreground.input_port as usize]);
    Ok(LatencySystem {
        network,
        routes,
        foreground,
        background,
        warmup: spec.warmup(),
        p: spec.p,
        alpha: spec.alpha,
        monitor: MonitorModel::new(overhead, sys.monitor_propagation),
    })
}

fn throughput_rows(spec: &TestSpec, kind: ConnectionKind, size: u32, rep: u32) -> Result<Vec<RunRow>> {
    let system = throughput_system(spec, kind, size, rep)?;
    let points = match &spec.load_ladder {
        LoadLadder::Search => {
            let params = SearchParams {
                epsilon_bps: spec.epsilon_bps,
                grid: default_grid(),
                golden_iterations: spec.golden_iterations,
            };
            throughput_levels(&system, &params)?.probes
        }
        LoadLadder::Fixed(loads) => loads.iter().map(|&l| system.measure(l)).collect::<Result<_>>()?,
    };
    Ok(points
        .into_iter()
        .enumerate()
        .map(|(i, p)| RunRow {
            load: p.load,
            offered_bps: p.offered_bps,
            delivered_bps: Some(p.throughput_bps),
            in_frames: p.in_frames,
            out_frames: p.out_frames,
            lossless: p.lossless(),
            flr: p.flr,
            fairness: p.fairness,
            ..RunRow::blank(Suite::Throughput, kind.to_string(), size, rep, i as u32)
        })
        .collect())
}

fn latency_rows(spec: &TestSpec, size: u32, rep: u32) -> Result<Vec<RunRow>> {
    let system = latency_system(spec, size, rep)?;
    let config = spec
        .background
        .as_ref()
        .map_or("none".to_string(), |b| b.config.to_string());
    let ladder = geometric_ladder(spec.latency_start, spec.latency_factor)?;
    Ok(system
        .ladder(&ladder)?
        .into_iter()
        .enumerate()
        .map(|(i, pt)| {
            let lost = pt.stats.lost_in_window as u64;
            let p = pt.stats.p as u64;
            let s = pt.stats.summary;
            RunRow {
                load: pt.fraction,
                offered_bps: pt.rate_bps,
                in_frames: p,
                out_frames: p - lost,
                lossless: lost == 0,
                flr: frame_loss_ratio(p, p - lost).ok(),
                latency_mean: s.map(|s| s.mean),
                latency_stddev: s.map(|s| s.stddev),
                latency_ci_low: s.map(|s| s.ci_low),
                latency_ci_high: s.map(|s| s.ci_high),
                ..RunRow::blank(Suite::Latency, config.clone(), size, rep, i as u32)
            }
        })
        .collect())
}

fn mfbs_rows(spec: &TestSpec, kind: ConnectionKind, size: u32, rep: u32) -> Result<Vec<RunRow>> {
    let system = throughput_system(spec, kind, size, rep)?;
    let peak = system
        .foreground
        .iter()
        .map(|f| f.full_bps)
        .fold(f64::INFINITY, f64::min);
    let result = mfbs(&system, peak, spec.mfbs_ceiling)?;
    let flows = system.foreground.len() as f64;
    Ok(result
        .probes
        .iter()
        .enumerate()
        .map(|(i, b)| RunRow {
            burst_frames: Some(b.frames),
            offered_bps: peak * flows,
            in_frames: b.sent,
            out_frames: b.delivered,
            lossless: b.lossless(),
            flr: frame_loss_ratio(b.sent, b.delivered).ok(),
            ..RunRow::blank(Suite::Mfbs, kind.to_string(), size, rep, i as u32)
        })
        .collect())
}

fn call_rows(spec: &TestSpec, rep: u32) -> Result<Vec<RunRow>> {
    let c = &spec.call;
    let rate = spec.link_rates()?[0];
    let sys = &spec.system;
    let network = Network::linear_chain(c.switches, rate, sys.cell_latency, sys.buffer_cells, c.propagation);
    let path = linear_path(c.switches);
    let setup = TrafficSpec::signaling(1, c.setup_size, rate.payload_capacity(c.setup_size));
    let connect = TrafficSpec::signaling(2, c.connect_size, rate.payload_capacity(c.connect_size));
    let report = measure_call(&network, &path, &setup, &connect, c.hold, c.hierarchy_levels)?;
    let setup_ok = report.setup.finite().is_some();
    let sent = 1 + u64::from(setup_ok);
    let delivered = u64::from(setup_ok) + u64::from(report.connect.finite().is_some());
    Ok(vec![RunRow {
        offered_bps: setup.effective_bps,
        in_frames: sent,
        out_frames: delivered,
        lossless: sent == delivered,
        latency_ticks: report.latency.finite(),
        setup_ticks: report.setup.finite(),
        connect_ticks: report.connect.finite(),
        ..RunRow::blank(Suite::Call, format!("chain({})", c.switches), c.setup_size, rep, 0)
    }])
}

/// Each flow sends `fps` frames per second, or its full rate if that is lower.
fn goodput_rows(spec: &TestSpec, kind: ConnectionKind, size: u32, fps: f64, rep: u32) -> Result<Vec<RunRow>> {
    let system = throughput_system(spec, kind, size, rep)?;
    let wanted = fps * 8.0 * f64::from(size);
    let traffic: Vec<TrafficSpec> = system
        .foreground
        .iter()
        .map(|f| f.at_rate(wanted.min(f.full_bps)).starting_at(f.phase))
        .collect();
    let offered: f64 = traffic.iter().map(|t| t.effective_bps).sum();
    let full: f64 = system.foreground.iter().map(|f| f.full_bps).sum();
    let trace = simulate(&system.network, &system.routes, &traffic, spec.duration)?;
    let outcomes = frame_outcomes(&trace)?;
    let (tx, rx) = goodput_counts(&outcomes, spec.warmup(), spec.duration);
    let window = (spec.duration - spec.warmup()) as f64 / TICKS_PER_SEC as f64;
    Ok(vec![RunRow {
        load: offered / full,
        frame_rate: Some(fps),
        offered_bps: offered,
        delivered_bps: Some(rx as f64 * 8.0 * f64::from(size) / window),
        in_frames: tx,
        out_frames: rx,
        lossless: tx == rx,
        flr: frame_loss_ratio(tx, rx).ok(),
        ..RunRow::blank(Suite::Goodput, kind.to_string(), size, rep, 0)
    }])
}

fn run_job(spec: &TestSpec, job: Job) -> Result<Vec<RunRow>> {
    match job {
        Job::Throughput { kind, size, rep } => throughput_rows(spec, kind, size, rep),
        Job::Latency { size, rep } => latency_rows(spec, size, rep),
        Job::Mfbs { kind, size, rep } => mfbs_rows(spec, kind, size, rep),
        Job::Call { rep } => call_rows(spec, rep),
        Job::Goodput { kind, size, fps, rep } => goodput_rows(spec, kind, size, fps, rep),
    }
}

/// Runs the whole matrix. Units run in parallel; rows are numbered in plan
/// order, so the report does not depend on scheduling.
pub fn run_suite(spec: &TestSpec) -> Result<MetricReport> {
    let jobs = plan(spec);
    let results: Vec<Result<Vec<RunRow>>> = jobs
        .par_iter()
        .map(|&job| {
            run_job(spec, job).map_err(|e| Error::Run {
                run: job.describe(),
                source: Box::new(e),
            })
        })
        .collect();
    let mut runs = Vec::new();
    for rows in results {
        for mut row in rows? {
            row.run = runs.len() as u64;
            runs.push(row);
        }
    }
    MetricReport::new(spec.clone(), runs)
}

/// Writes `report.<ext>` into `dir` for each format.
pub fn emit_report(report: &MetricReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &f in formats {
        let path = dir.join(format!("report.{}", f.extension()));
        let out = BufWriter::new(fs::File::create(&path)?);
        match f {
            Format::Table => write_table(report, out)?,
            Format::Csv => write_csv(report, out)?,
            Format::Jsonl => write_jsonl(report, out)?,
        }
        written.push(path);
    }
    Ok(written)
}
