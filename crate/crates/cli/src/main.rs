//! Command-line driver: run scenarios, sweep load points, check the
//! signalling protocol, and produce the policy-swap demonstration.

use clap::{Parser, Subcommand};
use muxio_sim::bench::{self, LoadSpec, LoadTarget};
use muxio_sim::checker::{self, Protocol, ProtocolModel, Topology, Verdict};
use muxio_sim::scenario::{self, Scenario, WorkloadSpec};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "muxio", version, about = "Shared-queue I/O pipeline simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and emit a per-sample-window CSV report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a load sweep over an echo scenario: one row per rate point.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Applied rates in Mb/s as start:end:step, e.g. 100:1000:100.
        #[arg(long)]
        rates: String,
        /// Frame size in bytes.
        #[arg(long, default_value_t = 1518)]
        frame: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Simulated duration per rate point, ms.
        #[arg(long, default_value_t = 400)]
        duration_ms: u64,
        /// Warm-up excluded from statistics, ms.
        #[arg(long, default_value_t = 100)]
        warmup_ms: u64,
        /// Client index receiving the load.
        #[arg(long, default_value_t = 0)]
        client: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustively verify a signalling protocol variant.
    Check {
        /// pessimistic | optimised | bug-1 | bug-2 | bug-3
        #[arg(long)]
        protocol: String,
        #[arg(long, default_value_t = 2)]
        capacity: u8,
        /// single | pair
        #[arg(long, default_value = "single")]
        topology: String,
        /// Print the counterexample trace on deadlock.
        #[arg(long)]
        dump_trace: bool,
    },
    /// Run the threshold-triggered policy swap demonstration.
    SwapDemo {
        /// Scenario override; the built-in swap scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 3000)]
        duration_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { scenario, out } => {
            let s = load_scenario(&scenario)?;
            let csv = match s.workload {
                WorkloadSpec::Storage => {
                    let (_, row) = bench::run_storage(&s)?;
                    bench::sweep_to_csv(&bench::SweepReport { cores: s.sim.cores, rows: vec![row] })
                }
                _ => {
                    let report = bench::run_scenario(&s)?;
                    bench::run_csv(&s, &report)
                }
            };
            write_out(out.as_deref(), &csv)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            scenario,
            rates,
            frame,
            seed,
            duration_ms,
            warmup_ms,
            client,
            out,
        } => {
            let template = load_scenario(&scenario)?;
            let load = LoadSpec {
                rates_mbps_milli: parse_rates(&rates)?,
                frame_bytes: frame,
                duration_ms,
                warmup_ms,
                seed,
                target: LoadTarget::Client(client),
                jitter_ppm: 0,
            };
            let report = bench::run_sweep(&template, &load)?;
            write_out(out.as_deref(), &bench::sweep_to_csv(&report))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { protocol, capacity, topology, dump_trace } => {
            let protocol = parse_protocol(&protocol)?;
            let topology = match topology.as_str() {
                "single" => Topology::Single,
                "pair" => Topology::Pair,
                other => return Err(format!("unknown topology {other}").into()),
            };
            let model = ProtocolModel::new(protocol, topology, capacity)?;
            let result = checker::explore(&model);
            println!("{}", checker::format_result(&model, &result));
            match result.verdict {
                Verdict::DeadlockFree => Ok(ExitCode::SUCCESS),
                Verdict::Deadlock { trace } => {
                    if dump_trace {
                        for (i, a) in trace.iter().enumerate() {
                            println!("  {i:>3}: {a}");
                        }
                        let end = checker::replay(&model, &trace)?;
                        println!("  stuck state: {end:?}");
                    }
                    Ok(ExitCode::from(2))
                }
                Verdict::Inconclusive => Ok(ExitCode::from(3)),
            }
        }
        Command::SwapDemo { scenario, seed, duration_ms, out } => {
            let s = match scenario {
                Some(path) => load_scenario(&path)?,
                None => muxio_sim::scenario::swap_scenario(seed, duration_ms),
            };
            let report = bench::run_scenario(&s)?;
            write_out(out.as_deref(), &bench::swap_demo_csv(&report))?;
            for ev in &report.swap_events {
                eprintln!(
                    "swap fired at {:.3}s, applied in {}us, {} packets in flight",
                    ev.fired_ns as f64 / 1e9,
                    ev.duration_ns / 1000,
                    ev.packets_in_flight
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_scenario(path: &std::path::Path) -> Result<Scenario, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    Ok(scenario::Scenario::from_toml(&text)?)
}

/// `start:end:step` in Mb/s, inclusive on both ends.
fn parse_rates(spec: &str) -> Result<Vec<u64>, Box<dyn std::error::Error>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err("rates must be start:end:step in Mb/s".into());
    }
    let start: u64 = parts[0].parse()?;
    let end: u64 = parts[1].parse()?;
    let step: u64 = parts[2].parse()?;
    if step == 0 || end < start {
        return Err("rates must ascend with a nonzero step".into());
    }
    Ok((start..=end).step_by(step as usize).map(|r| r * 1000).collect())
}

fn parse_protocol(name: &str) -> Result<Protocol, Box<dyn std::error::Error>> {
    Ok(match name {
        "pessimistic" => Protocol::Pessimistic,
        "optimised" | "optimized" => Protocol::Optimised,
        other => match other.strip_prefix("bug-") {
            Some(n) => Protocol::Bug(n.parse()?),
            None => return Err(format!("unknown protocol {other}").into()),
        },
    })
}

fn write_out(path: Option<&std::path::Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
