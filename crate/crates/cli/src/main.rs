use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use cellbench::harness::{
    derive_aggregates, emit_report, parse_spec, read_csv, read_jsonl, run_suite, throughput_system, write_csv,
    write_jsonl, write_table, Format, MetricReport, TestSpec,
};
use cellbench::{ConnectionKind, Error};
use clap::{Parser, Subcommand};

const EXIT_SPEC: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_BOUNDS: u8 = 3;

#[derive(Parser)]
#[command(
    name = "cellbench",
    version,
    about = "Frame-level benchmarks on a simulated cell switch"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every suite in a spec and write the reports.
    Run {
        #[arg(short, long)]
        spec: PathBuf,
        /// Report directory; defaults to the spec's `output`.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma separated: table, csv, jsonl.
        #[arg(short, long, value_delimiter = ',')]
        format: Vec<Format>,
        #[arg(short, long)]
        repetitions: Option<u32>,
    },
    /// Check a spec and print it with every default filled in.
    Validate {
        #[arg(short, long)]
        spec: PathBuf,
    },
    /// Recompute the aggregates of a report (.jsonl or .csv) from its run rows.
    Derive {
        report: PathBuf,
        #[arg(short, long, default_value = "table")]
        format: Format,
    },
    /// Write the cell trace of one throughput probe.
    Trace {
        #[arg(short, long)]
        spec: PathBuf,
        /// Connection configuration; defaults to the spec's first.
        #[arg(short, long)]
        config: Option<ConnectionKind>,
        /// Frame size in octets; defaults to the spec's first.
        #[arg(long)]
        size: Option<u32>,
        #[arg(short, long, default_value_t = 1.0)]
        load: f64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

/// Failure with the exit code it maps to.
struct Failure(u8, anyhow::Error);

fn spec_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure(EXIT_SPEC, e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure(EXIT_RUNTIME, e.into())
}

fn load_spec(path: &Path) -> Result<TestSpec, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(spec_err)?;
    parse_spec(&text)
        .with_context(|| format!("in {}", path.display()))
        .map_err(spec_err)
}

fn write_report(report: &MetricReport, format: Format, out: impl Write) -> cellbench::Result<()> {
    match format {
        Format::Table => write_table(report, out),
        Format::Csv => write_csv(report, out),
        Format::Jsonl => write_jsonl(report, out),
    }
}

fn run(
    spec: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    format: Vec<Format>,
    repetitions: Option<u32>,
) -> Result<u8, Failure> {
    let mut spec = load_spec(spec)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(r) = repetitions {
        if r == 0 {
            return Err(spec_err(anyhow::anyhow!("--repetitions must be at least 1")));
        }
        spec.repetitions = r;
    }
    if !format.is_empty() {
        spec.formats = format;
    }
    let dir = out.unwrap_or_else(|| PathBuf::from(&spec.output));
    let report = run_suite(&spec).map_err(runtime)?;
    let written = emit_report(&report, &dir, &spec.formats)
        .with_context(|| format!("writing reports to {}", dir.display()))
        .map_err(runtime)?;
    for p in written {
        println!("{}", p.display());
    }
    let violations = report.violations();
    for v in &violations {
        eprintln!("expectation failed: {v}");
    }
    Ok(if violations.is_empty() { 0 } else { EXIT_BOUNDS })
}

fn derive(path: &Path, format: Format) -> Result<u8, Failure> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(runtime)?;
    let input = BufReader::new(file);
    let report = match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => read_jsonl(input),
        Some("csv") => read_csv(input),
        _ => {
            return Err(runtime(anyhow::anyhow!(
                "{}: expected a .jsonl or .csv report",
                path.display()
            )))
        }
    }
    .with_context(|| format!("reading {}", path.display()))
    .map_err(runtime)?;
    let aggregates = derive_aggregates(&report.runs).map_err(runtime)?;
    let matches = aggregates == report.aggregates;
    let derived = MetricReport { aggregates, ..report };
    write_report(&derived, format, io::stdout().lock()).map_err(runtime)?;
    if !matches {
        return Err(runtime(anyhow::anyhow!(
            "recomputed aggregates differ from the ones shipped in {}",
            path.display()
        )));
    }
    Ok(0)
}

fn trace(
    spec: &Path,
    config: Option<ConnectionKind>,
    size: Option<u32>,
    load: f64,
    out: Option<PathBuf>,
) -> Result<u8, Failure> {
    let spec = load_spec(spec)?;
    let kind = config.unwrap_or(spec.configs[0]);
    let size = size.unwrap_or(spec.frame_sizes[0]);
    let system = throughput_system(&spec, kind, size, 0).map_err(spec_err)?;
    let trace = system.run(load).map_err(runtime)?;
    let result = match out {
        Some(p) => fs::File::create(&p)
            .map_err(Error::from)
            .and_then(|f| trace.write_records(io::BufWriter::new(f))),
        None => trace.write_records(io::stdout().lock()),
    };
    result.map_err(runtime)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors count as spec errors; help and version are not errors
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_SPEC } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run {
            spec,
            out,
            seed,
            format,
            repetitions,
        } => run(&spec, out, seed, format, repetitions),
        Command::Validate { spec } => load_spec(&spec).map(|s| {
            print!("{}", s.to_text());
            0
        }),
        Command::Derive { report, format } => derive(&report, format),
        Command::Trace {
            spec,
            config,
            size,
            load,
            out,
        } => trace(&spec, config, size, load, out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
