//! Regenerate the shipped scenario files from the builders.

use muxio_sim::scenario::{echo_scenario, storage_scenario, swap_scenario, EchoOptions, StorageOptions};

fn main() {
    let dir = std::path::Path::new("scenarios");
    std::fs::create_dir_all(dir).unwrap();

    let echo = echo_scenario(&EchoOptions {
        duration_ms: 1000,
        warmup_ms: 100,
        sample_window_ms: 100,
        ..EchoOptions::default()
    });
    write(dir, "echo.toml", "Single-client echo pipeline at full offered load, one core.", &echo.to_toml());

    let mut multi_opts = EchoOptions {
        duration_ms: 1000,
        warmup_ms: 100,
        sample_window_ms: 100,
        multicore: true,
        ..EchoOptions::default()
    };
    multi_opts.rates_mbps_milli = vec![1_000_000];
    let multicore = echo_scenario(&multi_opts);
    write(dir, "echo-multicore.toml", "Echo pipeline spread over four cores.", &multicore.to_toml());

    let swap = swap_scenario(1, 3000);
    write(
        dir,
        "swap.toml",
        "Policy-swap demonstration: client 0 at 10 Mb/s, client 1 ramps past the 500 Mb/s threshold and is throttled to 200 Mb/s.",
        &swap.to_toml(),
    );

    let storage = storage_scenario(&StorageOptions::default());
    write(
        dir,
        "storage.toml",
        "Three storage clients over equal partitions with barriers, reorder window 8.",
        &storage.to_toml(),
    );
    eprintln!("wrote scenarios/");
}

fn write(dir: &std::path::Path, name: &str, comment: &str, body: &str) {
    let text = format!("# {comment}\n\n{body}");
    std::fs::write(dir.join(name), text).unwrap();
}
