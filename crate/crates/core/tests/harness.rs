use std::io::Cursor;

use cellbench::harness::{
    derive_aggregates, emit_report, parse_spec, read_csv, read_jsonl, run_suite, write_csv, write_jsonl, write_table,
    Format, MetricReport, Suite,
};
use cellbench::Error;

const SPEC: &str = "\
seed = 11
metrics = throughput, latency, mfbs, call, goodput
configs = straight, k_to_1(2)
frame_sizes = 64, 1518
repetitions = 2
duration = 3000000
p = 20
latency_start = 0.25
mfbs_ceiling = 64
goodput_sizes = 64
goodput_fps = 2000, 10000
system {
    ports = 4
    rate = 155520000
    cell_latency = 500
    buffer = 32
}
background {
    config = straight
    class = cbr
    rate = 20000000
}
";

fn jsonl(report: &MetricReport) -> Vec<u8> {
    let mut v = Vec::new();
    write_jsonl(report, &mut v).unwrap();
    v
}

fn csv(report: &MetricReport) -> Vec<u8> {
    let mut v = Vec::new();
    write_csv(report, &mut v).unwrap();
    v
}

#[test]
fn same_seed_gives_identical_bytes() {
    let spec = parse_spec(SPEC).unwrap();
    let a = run_suite(&spec).unwrap();
    let b = run_suite(&spec).unwrap();
    assert_eq!(jsonl(&a), jsonl(&b));
    assert_eq!(csv(&a), csv(&b));

    let mut other = spec.clone();
    other.seed = 12;
    other.suites = vec![Suite::Throughput];
    let c = run_suite(&other).unwrap();
    let mut same = spec.clone();
    same.suites = vec![Suite::Throughput];
    assert_ne!(jsonl(&c).len(), 0);
    assert_ne!(
        run_suite(&same).unwrap().runs,
        c.runs,
        "phases should depend on the seed"
    );
}

#[test]
fn reports_round_trip_and_rederive() {
    let spec = parse_spec(SPEC).unwrap();
    let report = run_suite(&spec).unwrap();
    assert!(!report.aggregates.is_empty());

    let back = read_jsonl(Cursor::new(jsonl(&report))).unwrap();
    assert_eq!(back, report);
    assert_eq!(derive_aggregates(&back.runs).unwrap(), report.aggregates);

    let back = read_csv(Cursor::new(csv(&report))).unwrap();
    assert_eq!(back, report);
    assert_eq!(derive_aggregates(&back.runs).unwrap(), report.aggregates);

    let mut table = Vec::new();
    write_table(&report, &mut table).unwrap();
    let table = String::from_utf8(table).unwrap();
    assert!(table.contains("effective payload bits/sec"));
    assert!(table.contains("== aggregates =="));
    assert!(table.ends_with(&spec.to_text()));
}

#[test]
fn suites_produce_their_rows() {
    let spec = parse_spec(SPEC).unwrap();
    let report = run_suite(&spec).unwrap();
    let count = |s: Suite| report.runs.iter().filter(|r| r.suite == s).count();
    assert_eq!(count(Suite::Call), 2);
    assert_eq!(count(Suite::Goodput), 2 * 2 * 2);
    assert!(count(Suite::Throughput) > 2 * 2 * 2);
    assert!(count(Suite::Latency) >= 2 * 2);
    assert!(report.runs.iter().enumerate().all(|(i, r)| r.run == i as u64));

    // both repetitions of a call see the same deterministic latency
    let calls: Vec<_> = report.runs.iter().filter(|r| r.suite == Suite::Call).collect();
    assert!(calls[0].latency_ticks.is_some());
    assert_eq!(calls[0].latency_ticks, calls[1].latency_ticks);

    let agg = |metric: &str, config: &str, size: u32| {
        report
            .aggregates
            .iter()
            .find(|a| a.metric == metric && a.config == config && a.frame_size == size)
            .unwrap_or_else(|| panic!("no {metric} for {config} {size}"))
            .value
    };
    // two inputs at full rate into one output lose about half the frames
    let flr = agg("flr", "k_to_1(2)", 64).unwrap();
    assert!((flr - 0.5).abs() < 0.05, "flr {flr}");
    assert_eq!(agg("flr", "straight", 64), Some(0.0));
    let (lossless, peak) = (
        agg("lossless_bps", "k_to_1(2)", 1518).unwrap(),
        agg("peak_bps", "k_to_1(2)", 1518).unwrap(),
    );
    assert!(lossless <= peak);
    // bursts into a 32-cell buffer from two full-rate inputs must be bounded
    assert!(agg("mfbs_octets", "k_to_1(2)", 64).is_some());
    assert_eq!(agg("goodput", "straight", 64), Some(1.0));
}

#[test]
fn fixed_ladder_matrix_has_expected_cardinality() {
    let text = "seed = 3\nmetrics = throughput\nconfigs = partial_cross(2)\nload_ladder = 0.25, 0.5, 1\n\
                duration = 1000000\nsystem {\nports = 8\nrate = 155520000\n}\n";
    let spec = parse_spec(text).unwrap();
    assert_eq!(spec.throughput_runs(), Some(4 * 3));
    let report = run_suite(&spec).unwrap();
    assert_eq!(report.runs.len(), 4 * 3);
    let sizes: Vec<u32> = report.runs.iter().map(|r| r.frame_size).collect();
    assert_eq!(
        sizes,
        [64, 64, 64, 1518, 1518, 1518, 9188, 9188, 9188, 65536, 65536, 65536]
    );
}

#[test]
fn repetitions_feed_mean_fairness() {
    let text = "seed = 5\nmetrics = fairness\nconfigs = k_to_1(3)\nframe_sizes = 64\nload_ladder = 1\n\
                repetitions = 3\nduration = 2000000\nsystem {\nports = 4\nrate = 155520000\nbuffer = 16\n}\n";
    let report = run_suite(&parse_spec(text).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 3);
    let fs: Vec<f64> = report.runs.iter().map(|r| r.fairness.unwrap()).collect();
    let mean = report.aggregates.iter().find(|a| a.metric == "mean_fairness").unwrap();
    assert_eq!(mean.value, Some(fs.iter().sum::<f64>() / 3.0));
    assert_eq!(mean.runs, 3);
}

#[test]
fn empty_selection_echoes_the_spec_only() {
    let spec = parse_spec("seed = 1\nsystem {\nports = 2\nrate = 1000000\n}\n").unwrap();
    let report = run_suite(&spec).unwrap();
    assert!(report.runs.is_empty() && report.aggregates.is_empty());
    let text = String::from_utf8(jsonl(&report)).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("{\"record\":\"spec\""));
    assert_eq!(read_csv(Cursor::new(csv(&report))).unwrap(), report);
}

#[test]
fn expected_bounds_are_checked() {
    let text = "seed = 5\nmetrics = flr\nconfigs = k_to_1(2)\nframe_sizes = 64\nload_ladder = 1\nduration = 1000000\n\
                system {\nports = 3\nrate = 155520000\nbuffer = 8\n}\nexpect {\nflr <= 0.01\nfull_load_bps >= 1\n}\n";
    let report = run_suite(&parse_spec(text).unwrap()).unwrap();
    let v = report.violations();
    assert_eq!(v.len(), 1, "{v:?}");
    assert!(v[0].starts_with("flr k_to_1(2)"));
}

#[test]
fn errors_carry_run_coordinates() {
    // background faster than its link
    let text = "seed = 1\nmetrics = latency\nframe_sizes = 64\np = 4\nsystem {\nports = 4\nrate = 155520000\n}\n\
                background {\nconfig = straight\nclass = cbr\nrate = 400000000\n}\n";
    match run_suite(&parse_spec(text).unwrap()) {
        Err(Error::Run { run, source }) => {
            assert_eq!(run, "latency 64 octets rep 0");
            assert!(matches!(*source, Error::InvalidSpec(_)), "{source}");
        }
        other => panic!("expected a run error, got {other:?}"),
    }
}

#[test]
fn emit_writes_one_file_per_format() {
    let dir = tempfile::tempdir().unwrap();
    let spec = parse_spec("seed = 1\nmetrics = call\nsystem {\nports = 2\nrate = 1000000\n}\n").unwrap();
    let report = run_suite(&spec).unwrap();
    let files = emit_report(&report, dir.path(), &[Format::Csv, Format::Jsonl, Format::Table]).unwrap();
    let names: Vec<_> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["report.csv", "report.jsonl", "report.txt"]);
    let back = read_jsonl(std::io::BufReader::new(std::fs::File::open(&files[1]).unwrap())).unwrap();
    assert_eq!(back, report);
}
