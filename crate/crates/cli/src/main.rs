use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accelsim::report::{buffer_json, report_json};
use accelsim::scheduler::schedule;
use accelsim::trace::chrome_trace_json;
use accelsim::{simulate, validate_against_serial, EnergyTarget, Scenario};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

/// Simulates range-mapped task programs on an accelerator cluster.
#[derive(Parser)]
#[command(name = "accelsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write report.json, trace.json and buf_<name>.json.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        nodes: Option<usize>,
        /// MAX_PERF, MIN_ENERGY, MIN_EDP or MIN_ED2P.
        #[arg(long, value_parser = parse_target)]
        target: Option<EnergyTarget>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Print the task or command graph as DOT.
    Graph {
        scenario: PathBuf,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long, value_enum, default_value_t = GraphKind::Task)]
        kind: GraphKind,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a distributed run against a single-node run.
    Validate {
        scenario: PathBuf,
        #[arg(long)]
        nodes: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphKind {
    Task,
    Command,
}

fn parse_target(s: &str) -> Result<EnergyTarget, String> {
    s.parse::<EnergyTarget>().map_err(|e| e.to_string())
}

const FAILED: u8 = 2;

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn run(scenario: &Path, nodes: Option<usize>, target: Option<EnergyTarget>, out: &Path) -> Result<ExitCode> {
    let sc = Scenario::load(scenario)?;
    let cluster = sc.cluster(nodes)?;
    let target = target.unwrap_or(sc.queue_target);
    let sim = simulate(&sc.graph, &cluster, target)?;

    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write(&out.join("report.json"), &report_json(&sc.graph, &sim, target))?;
    write(&out.join("trace.json"), &chrome_trace_json(&sim.output.trace))?;
    for b in sc.graph.buffers() {
        let path = out.join(format!("buf_{}.json", b.name));
        write(&path, &buffer_json(b, &sim.output.buffers[b.id.0]))?;
    }

    let (count, bytes) = sim.commands.transfer_stats();
    println!(
        "{} nodes: makespan {} s, {count} transfers ({bytes} bytes), device energy {} J",
        cluster.node_count(),
        sim.output.makespan_s,
        sim.energy.total_device_energy_j
    );
    if let Some(m) = sc.check_expectations(&sim.output.buffers) {
        eprintln!("expectation failed: {m}");
        return Ok(ExitCode::from(FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

fn graph(scenario: &Path, nodes: Option<usize>, kind: GraphKind, out: Option<&Path>) -> Result<ExitCode> {
    let sc = Scenario::load(scenario)?;
    let dot = match kind {
        GraphKind::Task => sc.graph.to_dot(),
        GraphKind::Command => {
            let cluster = sc.cluster(nodes)?;
            schedule(&sc.graph, &cluster, sc.queue_target)?.to_dot(&sc.graph)
        }
    };
    match out {
        Some(path) => write(path, &dot)?,
        None => print!("{dot}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(scenario: &Path, nodes: Option<usize>) -> Result<ExitCode> {
    let sc = Scenario::load(scenario)?;
    let cluster = sc.cluster(nodes)?;
    match validate_against_serial(&sc.graph, &cluster, sc.queue_target)? {
        None => {
            println!("ok: {}-node run matches the single-node run", cluster.node_count());
            Ok(ExitCode::SUCCESS)
        }
        Some(m) => {
            eprintln!("mismatch: {m}");
            Ok(ExitCode::from(FAILED))
        }
    }
}

/// Usage and I/O problems exit with 1, rejected programs with 2.
fn exit_code(err: &anyhow::Error) -> ExitCode {
    match err.downcast_ref::<accelsim::Error>() {
        Some(e) if !e.is_usage() => ExitCode::from(FAILED),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run { scenario, nodes, target, out } => run(scenario, *nodes, *target, out),
        Command::Graph { scenario, nodes, kind, out } => graph(scenario, *nodes, *kind, out.as_deref()),
        Command::Validate { scenario, nodes } => validate(scenario, *nodes),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        exit_code(&e)
    })
}
