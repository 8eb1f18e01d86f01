//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured numbers once its assertions hold. Tolerances are
//! pinned in the constants below.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! pass/fail lines.

use muxio_sim::bench::{self, LoadSpec, LoadTarget};
use muxio_sim::checker::{self, Protocol, ProtocolModel, Topology, Verdict};
use muxio_sim::net::NicConfig;
use muxio_sim::scenario::{
    echo_scenario, storage_scenario, swap_scenario, ActionSpec, ActionSpecKind, EchoOptions,
    RxPath, StorageOptions, WorkloadSpec,
};

const FRAME: u32 = 1518;

fn load(rates: Vec<u64>, duration_ms: u64, warmup_ms: u64) -> LoadSpec {
    LoadSpec {
        rates_mbps_milli: rates,
        frame_bytes: FRAME,
        duration_ms,
        warmup_ms,
        seed: 1,
        target: LoadTarget::Client(0),
        jitter_ppm: 0,
    }
}

fn echo_template() -> muxio_sim::scenario::Scenario {
    let opts = EchoOptions { rates_mbps_milli: vec![], ..EchoOptions::default() };
    echo_scenario(&opts)
}

/// Window-normalised achieved packet rate of a run.
fn achieved_pps(report: &muxio_sim::runtime::SimulationReport) -> u64 {
    report.stats.win_echoed_frames * 1_000_000_000 / report.window_ns
}

#[test]
fn criterion_01_capacity_plateau() {
    let wall = std::time::Instant::now();
    let template = echo_template();
    let spec = load(vec![900_000, 1_000_000, 1_100_000], 400, 100);
    // 3 points x 0.4 s = 1.2 s simulated, well inside the desk-scale cap.
    let mut plateau_pps = 0;
    for &rate in &spec.rates_mbps_milli {
        let report = bench::run_point(&template, &spec, rate).expect("point runs");
        if rate >= 1_000_000 {
            plateau_pps = achieved_pps(&report);
            let lo = 81_000 * 98 / 100;
            let hi = 81_000 * 102 / 100;
            assert!(
                (lo..=hi).contains(&plateau_pps),
                "plateau {plateau_pps} pps outside 81000 +/- 2%"
            );
        }
    }
    let elapsed = wall.elapsed();
    assert!(elapsed.as_secs() < 60, "wall clock {elapsed:?} exceeds one minute");
    println!(
        "ACCEPTANCE PASS 1: capacity plateau {plateau_pps} pps (81000 +/- 2%), wall {:?}",
        elapsed
    );
}

#[test]
fn criterion_02_lossless_sub_capacity_echo() {
    let template = echo_template();
    let capacity_mbps_milli = bench::capacity_mbps_milli(&NicConfig::default(), FRAME);
    // Every applied load up to 90% of capacity.
    let rates: Vec<u64> =
        [10u64, 30, 50, 70, 80, 90].iter().map(|p| capacity_mbps_milli * p / 100).collect();
    let spec = load(rates.clone(), 300, 50);
    let report = bench::run_sweep(&template, &spec).expect("sweep runs");
    for (row, &rate) in report.rows.iter().zip(&rates) {
        assert_eq!(row.drops, 0, "drops at {rate} milli-Mb/s");
        assert_eq!(row.invalid_descriptors, 0);
        let diff = row.achieved_mbps_milli.abs_diff(row.applied_mbps_milli);
        assert!(
            diff * 100 <= row.applied_mbps_milli,
            "achieved {} vs applied {} differs by more than 1%",
            row.achieved_mbps_milli,
            row.applied_mbps_milli
        );
    }
    // Utilisation grows monotonically (non-decreasing) with applied load.
    for pair in report.rows.windows(2) {
        assert!(
            pair[1].utils_ppm[0] >= pair[0].utils_ppm[0],
            "utilisation not monotone: {:?}",
            report.rows.iter().map(|r| r.utils_ppm[0]).collect::<Vec<_>>()
        );
    }
    println!(
        "ACCEPTANCE PASS 2: lossless echo at {:?} milli-Mb/s (drops 0, achieved within 1%)",
        rates
    );
}

#[test]
fn criterion_03_ipc_cost_simulation() {
    let base = echo_template();
    let fixed_low = 200_000; // 20% load: all variants stay sub-saturated

    let util_at = |surcharge: i64, rate: u64| -> u64 {
        let mut s = base.clone();
        s.costs = s.costs.clone().with_notify_surcharge(surcharge);
        let report = bench::run_point(&s, &load(vec![rate], 300, 50), rate).expect("runs");
        report.util_ppm(0)
    };

    // Utilisation strictly increases with the per-notify surcharge.
    let u_base = util_at(0, fixed_low);
    let u_fiasco = util_at(865, fixed_low);
    let u_zircon = util_at(3585, fixed_low);
    assert!(u_base < u_fiasco, "{u_base} !< {u_fiasco}");
    assert!(u_fiasco < u_zircon, "{u_fiasco} !< {u_zircon}");

    // The full-capacity load is still handled with +3585 per notify.
    let mut zircon = base.clone();
    zircon.costs = zircon.costs.clone().with_notify_surcharge(3585);
    let full = load(vec![1_000_000], 400, 100);
    let report = bench::run_point(&zircon, &full, 1_000_000).expect("runs");
    let pps = achieved_pps(&report);
    assert!(pps >= 81_000 * 98 / 100, "zircon surcharge dropped plateau to {pps} pps");

    // Free IPC (-493, floored at zero) lowers utilisation everywhere; the
    // gap is widest at the lowest load point. The non-lowest points sit in
    // the batching regime (above both configs' saturation knees), where
    // the per-packet notify rate is amortised away.
    let capacity = bench::capacity_mbps_milli(&NicConfig::default(), FRAME);
    let points = [capacity / 10, capacity * 85 / 100, capacity * 93 / 100, capacity];
    let mut abs_deltas = Vec::new();
    let mut rel_deltas_ppm = Vec::new();
    for &p in &points {
        let b = util_at(0, p);
        let f = util_at(-493, p);
        assert!(f <= b, "free IPC raised utilisation at {p}: {f} > {b}");
        abs_deltas.push(b - f);
        rel_deltas_ppm.push(((b - f) as u128 * 1_000_000 / b as u128) as u64);
    }
    assert!(
        abs_deltas[0] > 0 && abs_deltas.iter().skip(1).all(|d| *d < abs_deltas[0]),
        "free-IPC delta not largest at the lowest load: {abs_deltas:?}"
    );
    assert!(
        rel_deltas_ppm.iter().skip(1).all(|d| *d < rel_deltas_ppm[0]),
        "relative delta not largest at the lowest load: {rel_deltas_ppm:?}"
    );
    println!(
        "ACCEPTANCE PASS 3: util {:.4} < {:.4} < {:.4} at 200 Mb/s; +3585 still reaches {} pps; free-IPC deltas {:?} ppm (largest first)",
        u_base as f64 / 1e6,
        u_fiasco as f64 / 1e6,
        u_zircon as f64 / 1e6,
        pps,
        abs_deltas
    );
}

#[test]
fn criterion_04_extra_hop_cost() {
    let base = echo_template();
    let mut null_opts = EchoOptions { rates_mbps_milli: vec![], ..EchoOptions::default() };
    null_opts.rx_path = RxPath::CopierAndNull;
    let with_null = echo_scenario(&null_opts);

    // Plateau shift under the extra hop.
    let full = load(vec![1_000_000], 400, 100);
    let p_base = achieved_pps(&bench::run_point(&base, &full, 1_000_000).expect("runs"));
    let p_null = achieved_pps(&bench::run_point(&with_null, &full, 1_000_000).expect("runs"));
    let diff = p_base.abs_diff(p_null);
    assert!(diff * 100 <= p_base, "plateau changed by >1%: {p_base} vs {p_null}");

    // Utilisation rise at a sub-saturation load is explained by the
    // configured per-hop costs (two activations per frame for the
    // forwarder: avail move and free return).
    let rate = 300_000u64;
    let spec = load(vec![rate], 300, 50);
    let u_base = bench::run_point(&base, &spec, rate).expect("runs").util_ppm(0);
    let u_null = bench::run_point(&with_null, &spec, rate).expect("runs").util_ppm(0);
    assert!(u_null > u_base);
    let costs = &base.costs;
    let per_hop_cycles = 2 * (costs.context_switch_cycles
        + costs.handler_fixed_cycles
        + costs.notify_syscall_cycles)
        + costs.per_item.forwarder;
    let pps = rate * 1000 / (FRAME as u64 * 8); // frames per second
    let bound_ppm =
        (per_hop_cycles as u128 * pps as u128 * 1_000_000 / costs.clock_hz as u128) as u64;
    let delta = u_null - u_base;
    assert!(
        delta <= bound_ppm * 105 / 100,
        "extra-hop delta {delta} ppm exceeds per-switch bound {bound_ppm} ppm"
    );
    println!(
        "ACCEPTANCE PASS 4: plateau {p_base} vs {p_null} pps (<1% apart); util delta {delta} ppm <= bound {bound_ppm} ppm"
    );
}

#[test]
fn criterion_05_natural_batching() {
    let template = echo_template();
    let low = load(vec![100_000], 300, 50);
    let high = load(vec![1_000_000], 400, 100);
    let b_low = bench::run_point(&template, &low, 100_000).expect("runs").avg_batch_milli("driver");
    let b_high =
        bench::run_point(&template, &high, 1_000_000).expect("runs").avg_batch_milli("driver");
    assert!(b_high >= 8_000, "full-load batch {} < 8", b_high as f64 / 1e3);
    assert!(b_high > b_low, "batch did not grow with load: {b_high} <= {b_low}");
    println!(
        "ACCEPTANCE PASS 5: avg packets/driver invocation {:.2} at full load vs {:.2} at 10%",
        b_high as f64 / 1e3,
        b_low as f64 / 1e3
    );
}

#[test]
fn criterion_06_virtualiser_scaling() {
    let rate = 300_000u64;
    let spec = load(vec![rate], 300, 50);
    let mut utils = Vec::new();
    let mut polls = Vec::new();
    for clients in [1usize, 32] {
        let opts = EchoOptions {
            clients,
            rates_mbps_milli: vec![0; clients],
            ..EchoOptions::default()
        };
        let template = echo_scenario(&opts);
        let report = bench::run_point(&template, &spec, rate).expect("runs");
        assert_eq!(report.stats.total_drops(), 0);
        utils.push(report.util_ppm(0));
        polls.push(report.stats.tx_mux_polls);
    }
    let growth_pct = (utils[1] - utils[0]) as f64 * 100.0 / utils[0] as f64;
    assert!(growth_pct < 15.0, "utilisation grew {growth_pct:.1}% from 1 to 32 clients");
    // Poll count linear in client count.
    let ratio_milli = polls[1] * 1000 / polls[0];
    assert!(
        (28_000..=36_000).contains(&ratio_milli),
        "polls not linear in clients: {} vs {}",
        polls[0],
        polls[1]
    );
    println!(
        "ACCEPTANCE PASS 6: util {:.4} -> {:.4} (+{growth_pct:.1}% < 15%), polls x{:.2}",
        utils[0] as f64 / 1e6,
        utils[1] as f64 / 1e6,
        ratio_milli as f64 / 1e3
    );
}

#[test]
fn criterion_07_policy_swap() {
    let s = swap_scenario(1, 3000);
    let report = bench::run_scenario(&s).expect("runs");

    assert_eq!(report.swap_events.len(), 1, "swap must fire exactly once");
    let ev = &report.swap_events[0];
    assert_eq!(ev.duration_ns, 17_000, "swap accounted at 17us");
    // The ramp (0 -> 600 over 2250 ms) crosses 500 Mb/s at 1875 ms; the
    // 50 ms monitor window must catch it within one window.
    let crossing_ms = 1875u64;
    let fired_ms = ev.fired_ns / 1_000_000;
    assert!(
        (crossing_ms..=crossing_ms + 100).contains(&fired_ms),
        "swap fired at {fired_ms} ms, expected within one window of {crossing_ms} ms"
    );

    // Client 0 sees no drops across the swap.
    assert_eq!(report.stats.per_client[0].drops, 0, "client 0 dropped packets");

    // Client 1 is throttled to 200 Mb/s +/- 5% after the swap settles.
    let swap_idx = report.samples.iter().position(|r| r.swap_marker).expect("marker");
    let post: Vec<u64> = report.samples[swap_idx + 1..]
        .iter()
        .map(|r| r.per_client_mbps_milli[1])
        .collect();
    assert!(post.len() >= 5);
    let avg = post.iter().sum::<u64>() / post.len() as u64;
    assert!(
        (190_000..=210_000).contains(&avg),
        "post-swap client-1 throughput {} Mb/s outside 200 +/- 5%",
        avg as f64 / 1e3
    );
    // Conservation audits ran at every sample window and all passed.
    assert!(report.audits_run >= 29);
    assert!(report.audit_failures.is_empty(), "{:?}", report.audit_failures);
    println!(
        "ACCEPTANCE PASS 7: swap at {fired_ms} ms (17us), client-1 post-swap {:.1} Mb/s, client-0 drops 0",
        avg as f64 / 1e3
    );
}

#[test]
fn criterion_08_deadlock_freedom() {
    // The shipped optimised protocol verifies deadlock-free at capacities
    // 1, 2, 4 on both topologies.
    let mut explored = 0usize;
    for &cap in &[1u8, 2, 4] {
        for &topo in &[Topology::Single, Topology::Pair] {
            let model = ProtocolModel::new(Protocol::Optimised, topo, cap).unwrap();
            let result = checker::explore(&model);
            assert_eq!(
                result.verdict,
                Verdict::DeadlockFree,
                "optimised capacity {cap} {topo} not deadlock-free"
            );
            explored += result.states_explored;
        }
    }
    // The pessimistic baseline as well.
    let pessimistic = ProtocolModel::new(Protocol::Pessimistic, Topology::Single, 2).unwrap();
    assert_eq!(checker::explore(&pessimistic).verdict, Verdict::DeadlockFree);

    // Every shipped bug variant yields a counterexample that replays to a
    // stuck state.
    for bug in 1..=3u8 {
        let model = ProtocolModel::new(Protocol::Bug(bug), Topology::Single, 2).unwrap();
        match checker::explore(&model).verdict {
            Verdict::Deadlock { trace } => {
                let end = checker::replay(&model, &trace).expect("trace replays");
                assert!(model.is_stuck(&end), "bug-{bug} trace does not reach a stuck state");
            }
            v => panic!("bug-{bug} expected a deadlock, got {v:?}"),
        }
    }
    println!(
        "ACCEPTANCE PASS 8: optimised protocol deadlock-free at caps 1/2/4 on single+pair ({explored} states); bugs 1-3 produce replayable deadlock traces"
    );
}

#[test]
fn criterion_09_buffer_conservation() {
    // Full-load echo with the audit at every sample window.
    let mut opts = EchoOptions {
        duration_ms: 400,
        warmup_ms: 100,
        sample_window_ms: 20,
        audit_each_sample: true,
        ..EchoOptions::default()
    };
    let report = bench::run_scenario(&echo_scenario(&opts)).expect("runs");
    assert!(report.audits_run >= 20);
    assert!(report.audit_failures.is_empty(), "{:?}", report.audit_failures);
    let audits_full = report.audits_run;

    // Broadcast fan-out under audit.
    opts.clients = 3;
    opts.rates_mbps_milli = vec![0, 0, 0];
    let mut s = echo_scenario(&opts);
    if let WorkloadSpec::Echo { broadcasts, .. } = &mut s.workload {
        for k in 0..60 {
            broadcasts.push(muxio_sim::scenario::BroadcastProbeSpec { at_ms: 5 + k * 5, len: 512 });
        }
    }
    let report = bench::run_scenario(&s).expect("runs");
    assert_eq!(report.stats.broadcast_fanouts, 60);
    assert!(report.audit_failures.is_empty(), "{:?}", report.audit_failures);

    // Component restart under load and audit.
    let mut opts = EchoOptions {
        duration_ms: 400,
        warmup_ms: 0,
        sample_window_ms: 20,
        audit_each_sample: true,
        rates_mbps_milli: vec![400_000],
        ..EchoOptions::default()
    };
    opts.warmup_ms = 0;
    let mut s = echo_scenario(&opts);
    s.actions.push(ActionSpec {
        at_ms: 200,
        kind: ActionSpecKind::Restart { comp: "copier0".into() },
    });
    let report = bench::run_scenario(&s).expect("runs");
    assert!(report.audit_failures.is_empty(), "{:?}", report.audit_failures);
    assert_eq!(report.stats.total_drops(), 0);

    println!(
        "ACCEPTANCE PASS 9: conservation audit green at every sample point ({} full-load audits; broadcast + restart covered)",
        audits_full
    );
}

#[test]
fn criterion_10_storage_ordering_and_isolation() {
    // >= 10^4 randomized requests with barriers over reorder window 8.
    let opts = StorageOptions {
        clients: 3,
        requests_per_client: 3400,
        barrier_every: 16,
        reorder_window: 8,
        seed: 17,
        duration_ms: 20_000,
        ..StorageOptions::default()
    };
    let s = storage_scenario(&opts);
    let mut rt = muxio_sim::scenario::build(&s).expect("builds");
    rt.run_to_quiescence(s.sim.duration_ms * 1_000_000).expect("runs");
    let report = rt.into_report();
    assert_eq!(report.stats.block_completed, 3 * 3400, "all requests answered");

    // Barrier ordering over the device's completion log.
    let log = &report.stats.storage_logs;
    let mut pos = std::collections::BTreeMap::new();
    for (i, (id, _)) in log.submitted.iter().enumerate() {
        pos.insert(*id, i);
    }
    let mut seen = std::collections::BTreeSet::new();
    for (id, kind) in &log.completed {
        let p = pos[id];
        if *kind == muxio_sim::storage::RequestKind::Barrier {
            for &q in &seen {
                assert!(q < p, "late submission {q} completed before barrier at {p}");
            }
            for earlier in 0..p {
                assert!(seen.contains(&earlier), "barrier at {p} overtook submission {earlier}");
            }
        }
        seen.insert(p);
    }

    // Partition isolation: every read byte matched the per-client oracle.
    assert!(report.stats.storage_reads_checked >= 1_000);
    assert_eq!(report.stats.storage_oracle_mismatches, 0, "cross-client leak or lost write");
    assert_eq!(report.stats.storage_errors, 0);
    println!(
        "ACCEPTANCE PASS 10: {} requests, barrier ordering clean, {} reads byte-checked against the oracle",
        report.stats.block_completed, report.stats.storage_reads_checked
    );
}

#[test]
fn criterion_11_determinism() {
    // Sweep CSV byte-identical across runs of the same (scenario, seed).
    let template = echo_template();
    let spec = load(vec![300_000, 600_000], 200, 50);
    let a = bench::sweep_to_csv(&bench::run_sweep(&template, &spec).expect("runs"));
    let b = bench::sweep_to_csv(&bench::run_sweep(&template, &spec).expect("runs"));
    assert_eq!(a, b, "sweep CSV not byte-identical");

    // Swap-demo time series as well.
    let s = swap_scenario(3, 1500);
    let c = bench::swap_demo_csv(&bench::run_scenario(&s).expect("runs"));
    let d = bench::swap_demo_csv(&bench::run_scenario(&s).expect("runs"));
    assert_eq!(c, d, "swap CSV not byte-identical");

    // Storage report too.
    let opts = StorageOptions { requests_per_client: 300, ..StorageOptions::default() };
    let st = storage_scenario(&opts);
    let (_, row_a) = bench::run_storage(&st).expect("runs");
    let (_, row_b) = bench::run_storage(&st).expect("runs");
    assert_eq!(row_a, row_b);

    // Constant-interval workloads are seed-invariant by design; seeded
    // jitter must perturb the trace (so the byte-equality check bites).
    let mut jittered = echo_template();
    if let WorkloadSpec::Echo { jitter_ppm, .. } = &mut jittered.workload {
        *jitter_ppm = 20_000;
    }
    let mut spec_j = load(vec![300_000], 200, 50);
    spec_j.jitter_ppm = 20_000;
    let e = bench::sweep_to_csv(&bench::run_sweep(&jittered, &spec_j).expect("runs"));
    let f = bench::sweep_to_csv(&bench::run_sweep(&jittered, &spec_j).expect("runs"));
    assert_eq!(e, f, "jittered runs must still be reproducible per seed");
    spec_j.seed = 9;
    let g = bench::sweep_to_csv(&bench::run_sweep(&jittered, &spec_j).expect("runs"));
    assert_ne!(e, g, "different jitter seeds should differ somewhere");
    println!("ACCEPTANCE PASS 11: byte-identical CSVs for sweep, swap demo and storage reruns");
}
