//! Load sweeps, percentile statistics and CSV reports.
//!
//! A sweep runs one simulation per rate point, gathers statistics after
//! warm-up only, lets the pipeline drain after the load stops (so the
//! frame ledger closes exactly) and emits one CSV row per point. All
//! numbers are carried in integer milli/ppm units and formatted with fixed
//! precision, so identical (scenario, seed) pairs produce byte-identical
//! files.

use crate::net::NicConfig;
use crate::runtime::SimulationReport;
use crate::scenario::{self, ClientLoad, Scenario, WorkloadSpec};
use crate::net::RateProgram;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Build(#[from] scenario::BuildError),
    #[error(transparent)]
    Run(#[from] crate::runtime::RunError),
    #[error("load spec: {0}")]
    BadLoad(String),
    #[error("buffer conservation audit failed: {0}")]
    Audit(String),
    #[error("frame ledger does not close: injected {injected} != echoed {echoed} + dropped {dropped} + consumed {consumed} + residual {residual}")]
    Ledger { injected: u64, echoed: u64, dropped: u64, consumed: u64, residual: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which clients an applied load targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadTarget {
    /// All load on one client.
    Client(usize),
    /// Split evenly across all clients of the scenario.
    Spread(usize),
}

/// A load sweep: applied rates (ascending), frame size, per-point duration
/// and warm-up, and the seed shared by every point.
#[derive(Debug, Clone)]
pub struct LoadSpec {
    pub rates_mbps_milli: Vec<u64>,
    pub frame_bytes: u32,
    pub duration_ms: u64,
    pub warmup_ms: u64,
    pub seed: u64,
    pub target: LoadTarget,
    pub jitter_ppm: u32,
}

impl LoadSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.rates_mbps_milli.windows(2).any(|w| w[0] > w[1]) {
            return Err(BenchError::BadLoad("rates must be sorted ascending".into()));
        }
        if self.duration_ms <= self.warmup_ms {
            return Err(BenchError::BadLoad("duration must exceed warm-up".into()));
        }
        Ok(())
    }
}

/// One sweep row; integer units (milli-Mb/s, ppm, ns) until formatting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepRow {
    pub applied_mbps_milli: u64,
    pub achieved_mbps_milli: u64,
    pub achieved_pps_milli: u64,
    pub utils_ppm: Vec<u64>,
    pub rtt_p50_ns: Option<u64>,
    pub rtt_p99_ns: Option<u64>,
    /// Set when fewer than the minimum RTT samples were collected.
    pub rtt_flagged: bool,
    pub drops: u64,
    pub invalid_descriptors: u64,
    pub avg_batch_milli: u64,
    /// Extra columns for storage runs.
    pub iops_milli: Option<u64>,
    pub mb_per_s_milli: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub cores: usize,
    pub rows: Vec<SweepRow>,
}

/// Minimum RTT samples for percentile reporting.
pub const MIN_RTT_SAMPLES: usize = 100;

/// Nearest-rank percentiles in nanoseconds. Absent (and flagged by the
/// caller) under `MIN_RTT_SAMPLES` samples.
pub fn rtt_percentiles(samples: &[u64]) -> Option<(u64, u64)> {
    if samples.len() < MIN_RTT_SAMPLES {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let rank = |p: usize| sorted[(sorted.len() * p).div_ceil(100).max(1) - 1];
    Some((rank(50), rank(99)))
}

/// Run one simulation to completion: the workload window, then a drain
/// phase with the generator stopped, then the conservation audit and the
/// frame ledger check.
pub fn run_scenario(scenario: &Scenario) -> Result<SimulationReport, BenchError> {
    let t_end = scenario.sim.duration_ms * 1_000_000;
    let mut rt = scenario::build(scenario)?;
    rt.run_until(t_end)?;
    // Drain: no new arrivals occur past t_end; everything in flight either
    // echoes or is dropped within the cap.
    rt.run_to_quiescence(t_end + 2_000_000_000)?;
    rt.audit_now();
    if let Some(failure) = rt.audit_failures().first() {
        return Err(BenchError::Audit(failure.clone()));
    }
    let report = rt.into_report();
    if matches!(scenario.workload, WorkloadSpec::Echo { .. }) {
        check_frame_ledger(&report)?;
    }
    Ok(report)
}

/// Injected frames must be fully attributed: echoed, dropped at a named
/// stage, or consumed without echo (broadcast fan-outs, responder traffic).
pub fn check_frame_ledger(report: &SimulationReport) -> Result<(), BenchError> {
    let s = &report.stats;
    let consumed = s.consumed_frames + s.broadcast_fanouts + s.broadcast_undeliverable;
    let accounted = s.echoed_frames + s.total_drops() + consumed + s.residual_frames;
    if s.injected_frames != accounted {
        return Err(BenchError::Ledger {
            injected: s.injected_frames,
            echoed: s.echoed_frames,
            dropped: s.total_drops(),
            consumed,
            residual: s.residual_frames,
        });
    }
    Ok(())
}

fn row_from_report(report: &SimulationReport, applied_mbps_milli: u64) -> SweepRow {
    let s = &report.stats;
    let window = report.window_ns.max(1);
    let achieved_mbps_milli = ((s.win_echoed_bytes as u128 * 8 * 1_000_000) / window as u128) as u64;
    let achieved_pps_milli =
        ((s.win_echoed_frames as u128 * 1_000_000_000_000) / window as u128) as u64;
    let percentiles = rtt_percentiles(&s.rtt_ns);
    SweepRow {
        applied_mbps_milli,
        achieved_mbps_milli,
        achieved_pps_milli,
        utils_ppm: (0..report.cores.len()).map(|c| report.util_ppm(c)).collect(),
        rtt_p50_ns: percentiles.map(|p| p.0),
        rtt_p99_ns: percentiles.map(|p| p.1),
        rtt_flagged: percentiles.is_none(),
        drops: s.total_drops(),
        invalid_descriptors: s.sanitize_drops,
        avg_batch_milli: report.avg_batch_milli("driver"),
        iops_milli: None,
        mb_per_s_milli: None,
    }
}

/// One simulation per rate point; deterministic per seed.
pub fn run_sweep(template: &Scenario, load: &LoadSpec) -> Result<SweepReport, BenchError> {
    load.validate()?;
    let mut rows = Vec::with_capacity(load.rates_mbps_milli.len());
    let mut cores = template.sim.cores;
    for &rate in &load.rates_mbps_milli {
        let report = run_point(template, load, rate)?;
        cores = report.cores.len();
        rows.push(row_from_report(&report, rate));
    }
    Ok(SweepReport { cores, rows })
}

/// Build and run a single rate point of a sweep.
pub fn run_point(
    template: &Scenario,
    load: &LoadSpec,
    rate_mbps_milli: u64,
) -> Result<SimulationReport, BenchError> {
    let mut s = template.clone();
    s.sim.seed = load.seed;
    s.sim.duration_ms = load.duration_ms;
    s.sim.warmup_ms = load.warmup_ms;
    let programs = match load.target {
        LoadTarget::Client(i) => vec![ClientLoad {
            client: i,
            program: RateProgram::Constant { mbps_milli: rate_mbps_milli },
        }],
        LoadTarget::Spread(n) => (0..n)
            .map(|i| ClientLoad {
                client: i,
                program: RateProgram::Constant { mbps_milli: rate_mbps_milli / n as u64 },
            })
            .collect(),
    };
    s.workload = WorkloadSpec::Echo {
        frame_bytes: load.frame_bytes,
        programs,
        jitter_ppm: load.jitter_ppm,
        arp_probes: vec![],
        broadcasts: vec![],
        unknown_unicasts: vec![],
    };
    run_scenario(&s)
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

fn fmt_milli(buf: &mut String, v: u64) {
    let _ = write!(buf, "{}.{:03}", v / 1000, v % 1000);
}

fn fmt_ppm(buf: &mut String, v: u64) {
    let _ = write!(buf, "{}.{:06}", v / 1_000_000, v % 1_000_000);
}

fn fmt_us_from_ns(buf: &mut String, v: Option<u64>) {
    if let Some(ns) = v {
        let _ = write!(buf, "{}.{:03}", ns / 1000, ns % 1000);
    }
}

pub fn sweep_csv_header(cores: usize, storage: bool) -> String {
    let mut h = String::from("applied_mbps,achieved_mbps");
    for c in 0..cores {
        let _ = write!(h, ",util_core{c}");
    }
    h.push_str(",rtt_p50_us,rtt_p99_us,drops,invalid_descriptors,avg_batch");
    if storage {
        h.push_str(",iops,mb_per_s");
    }
    h
}

/// Header plus one row per rate point, stable column order.
pub fn sweep_to_csv(report: &SweepReport) -> String {
    let storage = report.rows.iter().any(|r| r.iops_milli.is_some());
    let mut out = sweep_csv_header(report.cores, storage);
    out.push('\n');
    for row in &report.rows {
        fmt_milli(&mut out, row.applied_mbps_milli);
        out.push(',');
        fmt_milli(&mut out, row.achieved_mbps_milli);
        for &u in &row.utils_ppm {
            out.push(',');
            fmt_ppm(&mut out, u);
        }
        out.push(',');
        fmt_us_from_ns(&mut out, row.rtt_p50_ns);
        out.push(',');
        fmt_us_from_ns(&mut out, row.rtt_p99_ns);
        let _ = write!(out, ",{},{},", row.drops, row.invalid_descriptors);
        fmt_milli(&mut out, row.avg_batch_milli);
        if storage {
            out.push(',');
            fmt_milli(&mut out, row.iops_milli.unwrap_or(0));
            out.push(',');
            fmt_milli(&mut out, row.mb_per_s_milli.unwrap_or(0));
        }
        out.push('\n');
    }
    out
}

pub fn emit_csv(report: &SweepReport, path: &std::path::Path) -> Result<(), BenchError> {
    std::fs::write(path, sweep_to_csv(report))?;
    Ok(())
}

/// Parse a sweep CSV back into rows (round-trip oracle for the emitter).
pub fn parse_sweep_csv(text: &str) -> Result<SweepReport, BenchError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| BenchError::BadLoad("empty csv".into()))?;
    let cores = header.split(',').filter(|c| c.starts_with("util_core")).count();
    let storage = header.ends_with("mb_per_s");
    let parse_milli = |s: &str| -> u64 {
        let (a, b) = s.split_once('.').unwrap_or((s, "0"));
        a.parse::<u64>().unwrap_or(0) * 1000 + format!("{b:0<3}")[..3].parse::<u64>().unwrap_or(0)
    };
    let parse_ppm = |s: &str| -> u64 {
        let (a, b) = s.split_once('.').unwrap_or((s, "0"));
        a.parse::<u64>().unwrap_or(0) * 1_000_000
            + format!("{b:0<6}")[..6].parse::<u64>().unwrap_or(0)
    };
    let parse_ns = |s: &str| -> Option<u64> {
        if s.is_empty() {
            None
        } else {
            Some(parse_milli(s))
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let mut i = 0;
        let mut next = || {
            let v = f[i];
            i += 1;
            v
        };
        let applied = parse_milli(next());
        let achieved = parse_milli(next());
        let utils: Vec<u64> = (0..cores).map(|_| parse_ppm(next())).collect();
        let p50 = parse_ns(next());
        let p99 = parse_ns(next());
        let drops = next().parse().unwrap_or(0);
        let invalid = next().parse().unwrap_or(0);
        let batch = parse_milli(next());
        let (iops, mbs) = if storage {
            (Some(parse_milli(next())), Some(parse_milli(next())))
        } else {
            (None, None)
        };
        rows.push(SweepRow {
            applied_mbps_milli: applied,
            achieved_mbps_milli: achieved,
            achieved_pps_milli: 0,
            utils_ppm: utils,
            rtt_p50_ns: p50,
            rtt_p99_ns: p99,
            rtt_flagged: p50.is_none(),
            drops,
            invalid_descriptors: invalid,
            avg_batch_milli: batch,
            iops_milli: iops,
            mb_per_s_milli: mbs,
        });
    }
    Ok(SweepReport { cores, rows })
}

// ---------------------------------------------------------------------------
// Demo runners
// ---------------------------------------------------------------------------

/// Time-series CSV of the policy-swap demonstration:
/// `time_s,client0_mbps,client1_mbps,client0_rtt_us,swap_marker`.
pub fn swap_demo_csv(report: &SimulationReport) -> String {
    let mut out = String::from("time_s,client0_mbps,client1_mbps,client0_rtt_us,swap_marker\n");
    for s in &report.samples {
        let _ = write!(out, "{}.{:03}", s.end_ns / 1_000_000_000, (s.end_ns / 1_000_000) % 1000);
        out.push(',');
        fmt_milli(&mut out, s.per_client_mbps_milli.first().copied().unwrap_or(0));
        out.push(',');
        fmt_milli(&mut out, s.per_client_mbps_milli.get(1).copied().unwrap_or(0));
        out.push(',');
        fmt_us_from_ns(&mut out, s.per_client_rtt_p50_ns.first().copied().flatten());
        let _ = write!(out, ",{}", u8::from(s.swap_marker));
        out.push('\n');
    }
    out
}

/// Per-sample-window CSV for a single run: the standard columns, one row
/// per window.
pub fn run_csv(scenario: &Scenario, report: &SimulationReport) -> String {
    let cores = report.cores.len();
    let mut out = sweep_csv_header(cores, false);
    out.push('\n');
    let mut prev_drops = 0u64;
    let mut prev_invalid = 0u64;
    let mut prev_items = 0u64;
    let mut prev_invocations = 0u64;
    for s in &report.samples {
        let applied = applied_at(scenario, s.end_ns);
        fmt_milli(&mut out, applied);
        out.push(',');
        let achieved: u64 = s.per_client_mbps_milli.iter().sum();
        fmt_milli(&mut out, achieved);
        for &u in &s.utils_ppm {
            out.push(',');
            fmt_ppm(&mut out, u);
        }
        out.push(',');
        fmt_us_from_ns(&mut out, s.rtt_p50_ns);
        out.push(',');
        fmt_us_from_ns(&mut out, s.rtt_p99_ns);
        let drops = s.drops_total - prev_drops;
        let invalid = s.invalid_total - prev_invalid;
        prev_drops = s.drops_total;
        prev_invalid = s.invalid_total;
        let items = s.driver_items - prev_items;
        let invocations = s.driver_invocations - prev_invocations;
        prev_items = s.driver_items;
        prev_invocations = s.driver_invocations;
        let batch_milli = (items * 1000).checked_div(invocations).unwrap_or(0);
        let _ = write!(out, ",{drops},{invalid},");
        fmt_milli(&mut out, batch_milli);
        out.push('\n');
    }
    out
}

/// Total offered load at time `t`, summed over client programs.
fn applied_at(scenario: &Scenario, t: u64) -> u64 {
    match &scenario.workload {
        WorkloadSpec::Echo { programs, .. } => {
            programs.iter().map(|p| rate_at(&p.program, t)).sum()
        }
        _ => 0,
    }
}

fn rate_at(p: &RateProgram, t: u64) -> u64 {
    match *p {
        RateProgram::Constant { mbps_milli } => mbps_milli,
        RateProgram::Ramp { from_milli, to_milli, start_ns, end_ns } => {
            if t <= start_ns {
                from_milli
            } else if t >= end_ns {
                to_milli
            } else {
                let span = (end_ns - start_ns) as u128;
                let dt = (t - start_ns) as u128;
                if to_milli >= from_milli {
                    from_milli + ((to_milli - from_milli) as u128 * dt / span) as u64
                } else {
                    from_milli - ((from_milli - to_milli) as u128 * dt / span) as u64
                }
            }
        }
    }
}

/// Run a storage scenario and produce a one-row report with the storage
/// columns filled in.
pub fn run_storage(scenario: &Scenario) -> Result<(SimulationReport, SweepRow), BenchError> {
    let t_end = scenario.sim.duration_ms * 1_000_000;
    let mut rt = scenario::build(scenario)?;
    rt.run_to_quiescence(t_end)?;
    let report = rt.into_report();
    let span = report.final_time_ns.max(1);
    let s = &report.stats;
    let iops_milli = ((s.block_completed as u128 * 1_000_000_000_000) / span as u128) as u64;
    let mb_per_s_milli = ((s.block_bytes as u128 * 1_000_000_000) / span as u128
        / 1_000) as u64;
    let percentiles = rtt_percentiles(&s.block_latency_ns);
    let mut row = SweepRow {
        applied_mbps_milli: 0,
        achieved_mbps_milli: ((s.block_bytes as u128 * 8 * 1_000) / span as u128) as u64 * 1000,
        achieved_pps_milli: iops_milli,
        utils_ppm: (0..report.cores.len())
            .map(|c| {
                ((report.cores[c].busy_ns_total as u128 * 1_000_000) / span as u128).min(1_000_000)
                    as u64
            })
            .collect(),
        rtt_p50_ns: percentiles.map(|p| p.0),
        rtt_p99_ns: percentiles.map(|p| p.1),
        rtt_flagged: percentiles.is_none(),
        drops: 0,
        invalid_descriptors: s.sanitize_drops,
        avg_batch_milli: report.avg_batch_milli("blk_driver"),
        iops_milli: Some(iops_milli),
        mb_per_s_milli: Some(mb_per_s_milli),
    };
    row.drops = s.total_drops();
    Ok((report, row))
}

/// Theoretical frame capacity of the configured line in milli-pps.
pub fn capacity_pps_milli(nic: &NicConfig, frame_bytes: u32) -> u64 {
    nic.capacity_pps(frame_bytes) * 1000
}

/// Applied-rate equivalent of the wire plateau in milli-Mb/s (frame bits
/// over the serialisation time including overhead).
pub fn capacity_mbps_milli(nic: &NicConfig, frame_bytes: u32) -> u64 {
    let pps = nic.capacity_pps(frame_bytes);
    pps * frame_bytes as u64 * 8 / 1000
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_all_equal() {
        let samples = vec![42_000u64; 200];
        let (p50, p99) = rtt_percentiles(&samples).unwrap();
        assert_eq!(p50, 42_000);
        assert_eq!(p99, 42_000);
    }

    #[test]
    fn percentiles_nearest_rank_definition() {
        // Samples 1..100 us: p50 = 50 us, p99 = 99 us.
        let samples: Vec<u64> = (1..=100).map(|v| v * 1000).collect();
        let (p50, p99) = rtt_percentiles(&samples).unwrap();
        assert_eq!(p50, 50_000);
        assert_eq!(p99, 99_000);
    }

    #[test]
    fn percentiles_absent_under_minimum() {
        let samples: Vec<u64> = (1..60).collect();
        assert!(rtt_percentiles(&samples).is_none());
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let report = SweepReport { cores: 2, rows: vec![] };
        let csv = sweep_to_csv(&report);
        assert_eq!(
            csv,
            "applied_mbps,achieved_mbps,util_core0,util_core1,rtt_p50_us,rtt_p99_us,drops,invalid_descriptors,avg_batch\n"
        );
    }

    #[test]
    fn csv_round_trips() {
        let report = SweepReport {
            cores: 1,
            rows: vec![SweepRow {
                applied_mbps_milli: 100_500,
                achieved_mbps_milli: 100_499,
                achieved_pps_milli: 0,
                utils_ppm: vec![123_456],
                rtt_p50_ns: Some(52_125),
                rtt_p99_ns: Some(99_000),
                rtt_flagged: false,
                drops: 3,
                invalid_descriptors: 1,
                avg_batch_milli: 2_500,
                iops_milli: None,
                mb_per_s_milli: None,
            }],
        };
        let csv = sweep_to_csv(&report);
        let parsed = parse_sweep_csv(&csv).unwrap();
        assert_eq!(parsed.rows, report.rows);
    }

    #[test]
    fn load_spec_validation() {
        let mut load = LoadSpec {
            rates_mbps_milli: vec![100_000, 50_000],
            frame_bytes: 1518,
            duration_ms: 200,
            warmup_ms: 50,
            seed: 1,
            target: LoadTarget::Client(0),
            jitter_ppm: 0,
        };
        assert!(load.validate().is_err());
        load.rates_mbps_milli = vec![50_000, 100_000];
        assert!(load.validate().is_ok());
        load.warmup_ms = 200;
        assert!(load.validate().is_err());
    }
}
