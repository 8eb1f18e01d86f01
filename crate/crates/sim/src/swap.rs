//! Threshold-triggered hot replacement of the transmit shaping policy.
//!
//! The Tx mux hosts a [`BandwidthMonitor`]; when the watched client's
//! estimated throughput crosses the threshold it signals the [`Swapper`],
//! which asks the runtime to install the standby policy at the mux's next
//! idle boundary. All pipeline state lives in the shared queues, so the
//! swap replaces nothing but the policy object — queue contents, flags and
//! counters survive, and only the swap cost (charged to the mux's core)
//! is observable.

use crate::net::TxPolicySpec;
use crate::runtime::{ChannelId, CompId, Component, Ctx, RuntimeRequest};

/// Sliding-window per-client throughput estimate with a one-shot threshold
/// trigger on a watched client.
#[derive(Debug, Clone)]
pub struct BandwidthMonitor {
    pub window_ns: u64,
    pub watched_client: usize,
    pub threshold_mbps_milli: u64,
    /// Fires at most once per arming.
    pub armed: bool,
    window_start: u64,
    bytes: Vec<u64>,
    pub last_estimate_milli: Vec<u64>,
}

impl BandwidthMonitor {
    pub fn new(window_ns: u64, watched_client: usize, threshold_mbps: u64, clients: usize) -> Self {
        BandwidthMonitor {
            window_ns,
            watched_client,
            threshold_mbps_milli: threshold_mbps * 1000,
            armed: true,
            window_start: 0,
            bytes: vec![0; clients],
            last_estimate_milli: vec![0; clients],
        }
    }

    /// Account bytes forwarded for `client`.
    pub fn record(&mut self, client: usize, bytes: u64) {
        self.bytes[client] += bytes;
    }

    /// Roll the window if due. True when the watched client's estimate
    /// crossed the threshold while armed.
    pub fn tick(&mut self, now: u64) -> bool {
        if now < self.window_start + self.window_ns {
            return false;
        }
        let span = now - self.window_start;
        for (i, b) in self.bytes.iter_mut().enumerate() {
            self.last_estimate_milli[i] = ((*b as u128 * 8 * 1_000_000) / span as u128) as u64;
            *b = 0;
        }
        self.window_start = now;
        if self.armed && self.last_estimate_milli[self.watched_client] > self.threshold_mbps_milli {
            self.armed = false;
            return true;
        }
        false
    }
}

/// One-shot swap orchestrator: woken by the Tx mux's bandwidth trigger,
/// requests the standby policy be installed on the target mux.
pub struct Swapper {
    pub trigger_ch: ChannelId,
    pub target: CompId,
    pub replacement: TxPolicySpec,
    pub clients: usize,
    pub swap_cost_ns: u64,
    fired: bool,
}

impl Swapper {
    pub fn new(
        trigger_ch: ChannelId,
        target: CompId,
        replacement: TxPolicySpec,
        clients: usize,
        swap_cost_ns: u64,
    ) -> Self {
        Swapper { trigger_ch, target, replacement, clients, swap_cost_ns, fired: false }
    }
}

impl Component for Swapper {
    fn init(&mut self, _ctx: &mut Ctx) {}

    fn notified(&mut self, ctx: &mut Ctx, ch: ChannelId) {
        if ch != self.trigger_ch || self.fired {
            return;
        }
        self.fired = true;
        ctx.charge(1000);
        ctx.request(RuntimeRequest::SwapTxPolicy {
            target: self.target,
            policy: self.replacement.instantiate(self.clients),
            charge_ns: self.swap_cost_ns,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fires_once_on_crossing() {
        let mut m = BandwidthMonitor::new(1_000_000, 0, 500, 1);
        // 100 KB in 1 ms = 800 Mb/s.
        m.record(0, 100_000);
        assert!(m.tick(1_000_000));
        assert_eq!(m.last_estimate_milli[0], 800_000);
        m.record(0, 100_000);
        assert!(!m.tick(2_000_000), "trigger must fire at most once per arming");
    }

    #[test]
    fn estimates_low_rate_accurately() {
        // 10 Mb/s over a 100 ms window: 125000 bytes.
        let mut m = BandwidthMonitor::new(100_000_000, 0, 500, 1);
        m.record(0, 125_000);
        m.tick(100_000_000);
        assert_eq!(m.last_estimate_milli[0], 10_000);
    }

    #[test]
    fn idle_client_estimates_zero() {
        let mut m = BandwidthMonitor::new(1_000_000, 0, 500, 2);
        m.record(0, 50_000);
        m.tick(1_000_000);
        assert_eq!(m.last_estimate_milli[1], 0);
    }
}
