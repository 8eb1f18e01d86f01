//! Traffic-shaping policies under contention: round-robin fairness,
//! strict-priority starvation, sustained token-bucket limiting, and policy
//! containment (swapping variants changes nothing outside the Tx mux).

use muxio_sim::bench;
use muxio_sim::net::{BucketSpec, NicConfig, TxPolicySpec};
use muxio_sim::scenario::{echo_scenario, EchoOptions};

fn multi_client_opts(clients: usize, rates: Vec<u64>, policy: TxPolicySpec) -> EchoOptions {
    EchoOptions {
        clients,
        rates_mbps_milli: rates,
        policy,
        duration_ms: 500,
        warmup_ms: 100,
        ..EchoOptions::default()
    }
}

/// Three clients saturating the transmit wire split it in exact thirds.
#[test]
fn round_robin_splits_capacity_evenly() {
    // 340 Mb/s offered each: ~84 kpps aggregate ingress against an
    // 81.27 kpps egress wire, so the policy arbitrates the bottleneck.
    let opts = multi_client_opts(
        3,
        vec![340_000, 340_000, 340_000],
        TxPolicySpec::RoundRobin,
    );
    let report = bench::run_scenario(&echo_scenario(&opts)).expect("runs");
    let capacity = NicConfig::default().capacity_pps(1518);
    let share = capacity / 3;
    for (i, c) in report.stats.per_client.iter().enumerate() {
        let pps = c.echoed_bytes / 1518 * 1_000_000_000
            / (report.stats.t_end_ns - report.stats.warmup_ns);
        // Whole-run counters include warm-up; compare echoed frames over
        // the full span instead.
        let _ = pps;
        let whole_run_pps = c.echoed_frames * 1_000_000_000 / report.final_time_ns;
        let diff = whole_run_pps.abs_diff(share);
        assert!(
            diff * 100 <= share,
            "client {i}: {whole_run_pps} pps vs fair share {share} (>1% off)"
        );
    }
    // Every client saw demux traffic.
    for c in &report.stats.per_client {
        assert!(c.delivered_frames > 1000);
    }
}

/// Under strict priority the preferred client never drops; the
/// lower-priority client absorbs all the overload.
#[test]
fn strict_priority_starves_the_lower_client_first() {
    // 700 + 380 Mb/s offered: ~6.5 kpps more than the wire can echo, all
    // of which strict priority must shed from client 0.
    let opts = multi_client_opts(
        2,
        vec![380_000, 700_000],
        TxPolicySpec::StrictPriority { order: vec![1, 0] },
    );
    let report = bench::run_scenario(&echo_scenario(&opts)).expect("runs");
    let c = &report.stats.per_client;
    assert_eq!(c[1].drops, 0, "preferred client must not drop");
    assert!(c[0].drops > 0, "overload must land on the lower-priority client");
    // The preferred client echoes everything it was offered.
    assert!(c[1].echoed_frames * 1000 >= c[1].delivered_frames * 999);
}

/// A token-bucket limit holds a client to rate + burst over any window,
/// leaving the excess in its queue until it fills (then the client sheds).
#[test]
fn token_bucket_sustains_the_configured_rate() {
    let policy = TxPolicySpec::TokenBucket {
        limits: vec![BucketSpec { client: 0, rate_mbps: 200, burst_bytes: 10 * 1518 }],
    };
    let mut opts = multi_client_opts(1, vec![600_000], policy);
    opts.duration_ms = 800;
    opts.warmup_ms = 200;
    let report = bench::run_scenario(&echo_scenario(&opts)).expect("runs");
    let window = report.window_ns;
    let mbps_milli = report.stats.win_echoed_bytes as u128 * 8 * 1_000_000 / window as u128;
    assert!(
        (190_000..=210_000).contains(&(mbps_milli as u64)),
        "achieved {} milli-Mb/s outside 200 +/- 5%",
        mbps_milli
    );
    assert!(report.stats.client_drops > 0, "excess offered load must be shed at the client");
}

/// Swapping the policy variant changes nothing outside the Tx mux: the
/// component graphs are identical except for the policy parameter.
#[test]
fn policy_choice_is_contained_in_the_tx_mux() {
    let a = echo_scenario(&multi_client_opts(2, vec![0, 0], TxPolicySpec::RoundRobin));
    let b = echo_scenario(&multi_client_opts(
        2,
        vec![0, 0],
        TxPolicySpec::StrictPriority { order: vec![0, 1] },
    ));
    assert_eq!(a.queues, b.queues);
    assert_eq!(a.channels, b.channels);
    assert_eq!(a.regions, b.regions);
    let diff: Vec<&str> = a
        .components
        .iter()
        .zip(&b.components)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.name.as_str())
        .collect();
    assert_eq!(diff, vec!["tx_mux"], "only the tx mux may differ between policy variants");
    // And both wirings build into the same graph shape.
    let ga = muxio_sim::scenario::build(&a).unwrap().graph_dump();
    let gb = muxio_sim::scenario::build(&b).unwrap().graph_dump();
    assert_eq!(ga, gb);
}

/// Restarting the Tx mux resets its rotation index; fairness still
/// converges over the whole run.
#[test]
fn round_robin_fairness_survives_a_mux_restart() {
    let mut opts = multi_client_opts(
        3,
        vec![340_000, 340_000, 340_000],
        TxPolicySpec::RoundRobin,
    );
    opts.duration_ms = 600;
    let mut s = echo_scenario(&opts);
    s.actions.push(muxio_sim::scenario::ActionSpec {
        at_ms: 300,
        kind: muxio_sim::scenario::ActionSpecKind::Restart { comp: "tx_mux".into() },
    });
    let report = bench::run_scenario(&s).expect("runs");
    let shares: Vec<u64> =
        report.stats.per_client.iter().map(|c| c.echoed_frames).collect();
    let max = *shares.iter().max().unwrap();
    let min = *shares.iter().min().unwrap();
    assert!(
        (max - min) * 100 <= max * 2,
        "per-client shares diverged after restart: {shares:?}"
    );
}
