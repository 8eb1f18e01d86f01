//! Exhaustive-state-space verification of the producer/consumer signalling
//! protocol used by the shared queues.
//!
//! The pessimistic protocol (signal on every enqueue/dequeue) is trivially
//! safe but over-signals. The optimised protocol signals only on
//! empty->nonempty and full->nonfull transitions, gated by per-side request
//! flags — and races between the flag write, the final re-check and the
//! peer's transition check are exactly where lost-wakeup deadlocks hide.
//! This module models both sides at operation granularity (each of
//! enqueue, dequeue, flag set/clear, re-check, sleep and wake is one atomic
//! step) and breadth-first explores every interleaving.
//!
//! Deliberately broken protocol variants are shipped alongside: each yields
//! a machine-checked counterexample trace that replays to a stuck state.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use thiserror::Error;

/// Default state-budget before the checker gives up (never lies).
pub const DEFAULT_STATE_CAP: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Signal after every enqueue and every dequeue. No flags.
    Pessimistic,
    /// Signal only on empty->nonempty / full->nonfull when the peer's
    /// request flag is set; sleepers set their flag, re-check, then sleep.
    Optimised,
    /// `Optimised` with an injected defect, 1..=3:
    /// 1. consumer sets its request flag only *after* the final emptiness
    ///    re-check, then sleeps unconditionally;
    /// 2. producer samples the consumer's flag (and emptiness) *before*
    ///    publishing the enqueue, then signals from the stale snapshot;
    /// 3. consumer never signals the full->nonfull transition.
    Bug(u8),
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Pessimistic => write!(f, "pessimistic"),
            Protocol::Optimised => write!(f, "optimised"),
            Protocol::Bug(n) => write!(f, "bug-{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// One queue: infinite producer -> consumer sink.
    Single,
    /// Request/return pair: A produces into q1 and drains q2, B forwards
    /// q1 -> q2 one item at a time (blocking on a full q2).
    Pair,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Single => write!(f, "single"),
            Topology::Pair => write!(f, "pair"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolModel {
    pub protocol: Protocol,
    pub topology: Topology,
    /// Queue capacity, 1..=4 (state space stays tiny).
    pub capacity: u8,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("capacity {0} out of range (1..=4)")]
    BadCapacity(u8),
    #[error("bug variants are modelled on the single topology only")]
    BugNeedsSingle,
    #[error("unknown bug variant {0} (1..=3)")]
    UnknownBug(u8),
}

impl ProtocolModel {
    pub fn new(protocol: Protocol, topology: Topology, capacity: u8) -> Result<Self, ModelError> {
        if capacity == 0 || capacity > 4 {
            return Err(ModelError::BadCapacity(capacity));
        }
        if let Protocol::Bug(n) = protocol {
            if !(1..=3).contains(&n) {
                return Err(ModelError::UnknownBug(n));
            }
            if topology == Topology::Pair {
                return Err(ModelError::BugNeedsSingle);
            }
        }
        Ok(ProtocolModel { protocol, topology, capacity })
    }

    pub fn initial(&self) -> State {
        State {
            q1: 0,
            q2: 0,
            // Flags start clear: both contexts begin awake and polling, so
            // nobody has requested a wake-up yet. (The runtime's queues
            // start with flags set because components start asleep.)
            p_flag1: false,
            c_flag1: false,
            p_flag2: false,
            c_flag2: false,
            pend_a: false,
            pend_b: false,
            a_pc: 0,
            b_pc: 0,
            a_saved: false,
            b_saved: false,
            holding: false,
        }
    }
}

/// Global protocol state: queue fill levels, signal-request flags per queue
/// side, one coalescing pending-notification bit per direction, and each
/// context's program counter plus saved observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct State {
    pub q1: u8,
    pub q2: u8,
    pub p_flag1: bool,
    pub c_flag1: bool,
    pub p_flag2: bool,
    pub c_flag2: bool,
    /// Notification pending toward context A (producer in `Single`).
    pub pend_a: bool,
    /// Notification pending toward context B (consumer in `Single`).
    pub pend_b: bool,
    pub a_pc: u8,
    pub b_pc: u8,
    pub a_saved: bool,
    pub b_saved: bool,
    /// Pair topology: B holds one item taken from q1, not yet in q2.
    pub holding: bool,
}

/// Which context takes a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ctx {
    A,
    B,
}

/// One atomic step of the protocol, named for trace output and replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub ctx: Ctx,
    pub name: &'static str,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let who = match self.ctx {
            Ctx::A => "A",
            Ctx::B => "B",
        };
        write!(f, "{who}:{}", self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    DeadlockFree,
    /// A reachable state with pending work where no step is enabled, plus
    /// the action sequence from the initial state that reaches it.
    Deadlock { trace: Vec<Action> },
    /// State cap exceeded; no claim made.
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub states_explored: usize,
    pub verdict: Verdict,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("step {index}: action {action} not enabled in current state")]
    NotEnabled { index: usize, action: String },
}

// Program-counter values. The producer/A machine and consumer/B machine
// each interpret their own space; `Ready` doubles as the post-wake state.
mod pc {
    pub const READY: u8 = 0;
    pub const SIG_CHECK: u8 = 1;
    pub const RECHECK: u8 = 2;
    pub const CLEAR_FLAG: u8 = 3;
    pub const ASLEEP: u8 = 4;
    pub const WAKE_CLEAR: u8 = 5;
    /// bug-2 producer: between flag snapshot and publish.
    pub const PUBLISH: u8 = 6;
    /// pessimistic: observed nothing-to-do, about to sleep (race window).
    pub const OBSERVED: u8 = 7;
    /// bug-1 consumer: after re-check, before the (late) flag write.
    pub const SET_FLAG_LATE: u8 = 8;

    // Pair-topology A: multi-queue blocking sequence.
    pub const SET_FLAG_2: u8 = 9;
    pub const CLEAR_FLAG_2: u8 = 10;
    pub const WAKE_CLEAR_2: u8 = 11;
}

impl ProtocolModel {
    /// All enabled steps from `s`, in a fixed deterministic order.
    pub fn steps(&self, s: &State) -> Vec<(Action, State)> {
        let mut out = Vec::new();
        match self.topology {
            Topology::Single => {
                self.single_producer_steps(s, &mut out);
                self.single_consumer_steps(s, &mut out);
            }
            Topology::Pair => {
                self.pair_a_steps(s, &mut out);
                self.pair_b_steps(s, &mut out);
            }
        }
        out
    }

    /// A state is stuck if no step is enabled. With an infinite work source
    /// on the producing side this is always a genuine deadlock.
    pub fn is_stuck(&self, s: &State) -> bool {
        self.steps(s).is_empty()
    }

    fn cap(&self) -> u8 {
        self.capacity
    }

    fn single_producer_steps(&self, s: &State, out: &mut Vec<(Action, State)>) {
        let full = s.q1 == self.cap();
        let empty = s.q1 == 0;
        let mut go = |name: &'static str, ns: State| out.push((Action { ctx: Ctx::A, name }, ns));
        match (self.protocol, s.a_pc) {
            (Protocol::Pessimistic, pc::READY) => {
                if !full {
                    let mut ns = *s;
                    ns.q1 += 1;
                    ns.a_pc = pc::SIG_CHECK;
                    go("enqueue", ns);
                } else {
                    let mut ns = *s;
                    ns.a_pc = pc::OBSERVED;
                    go("observe_full", ns);
                }
            }
            (Protocol::Pessimistic, pc::SIG_CHECK) => {
                // Unconditional signal after every enqueue.
                let mut ns = *s;
                ns.pend_b = true;
                ns.a_pc = pc::READY;
                go("signal_consumer", ns);
            }
            (Protocol::Pessimistic, pc::OBSERVED) => {
                let mut ns = *s;
                ns.a_pc = pc::ASLEEP;
                go("sleep", ns);
            }
            (Protocol::Pessimistic, pc::ASLEEP) => {
                if s.pend_a {
                    let mut ns = *s;
                    ns.pend_a = false;
                    ns.a_pc = pc::READY;
                    go("wake", ns);
                }
            }
            (Protocol::Optimised | Protocol::Bug(1) | Protocol::Bug(3), pc::READY) => {
                if !full {
                    let mut ns = *s;
                    ns.a_saved = empty; // was_empty before this enqueue
                    ns.q1 += 1;
                    ns.a_pc = pc::SIG_CHECK;
                    go("enqueue", ns);
                } else {
                    let mut ns = *s;
                    ns.p_flag1 = true;
                    ns.a_pc = pc::RECHECK;
                    go("set_wake_flag", ns);
                }
            }
            (Protocol::Bug(2), pc::READY) => {
                if !full {
                    // Defect: sample flag and emptiness before publishing.
                    let mut ns = *s;
                    ns.a_saved = empty && s.c_flag1;
                    ns.a_pc = pc::PUBLISH;
                    go("snapshot_flags", ns);
                } else {
                    let mut ns = *s;
                    ns.p_flag1 = true;
                    ns.a_pc = pc::RECHECK;
                    go("set_wake_flag", ns);
                }
            }
            (Protocol::Bug(2), pc::PUBLISH) => {
                // Only the consumer runs in between, so no re-guard needed:
                // the queue cannot have become full.
                let mut ns = *s;
                ns.q1 += 1;
                ns.a_pc = pc::SIG_CHECK;
                go("enqueue", ns);
            }
            (Protocol::Optimised | Protocol::Bug(_), pc::SIG_CHECK) => {
                let mut ns = *s;
                let fire = match self.protocol {
                    // Decision from the stale snapshot.
                    Protocol::Bug(2) => s.a_saved,
                    // Live read of the flag at transition time.
                    _ => s.a_saved && s.c_flag1,
                };
                if fire {
                    ns.pend_b = true;
                }
                ns.a_pc = pc::READY;
                go(if fire { "signal_consumer" } else { "skip_signal" }, ns);
            }
            (Protocol::Optimised | Protocol::Bug(_), pc::RECHECK) => {
                let mut ns = *s;
                if full {
                    ns.a_pc = pc::ASLEEP;
                    go("recheck_sleep", ns);
                } else {
                    ns.a_pc = pc::CLEAR_FLAG;
                    go("recheck_continue", ns);
                }
            }
            (Protocol::Optimised | Protocol::Bug(_), pc::CLEAR_FLAG) => {
                let mut ns = *s;
                ns.p_flag1 = false;
                ns.a_pc = pc::READY;
                go("clear_wake_flag", ns);
            }
            (Protocol::Optimised | Protocol::Bug(_), pc::ASLEEP) => {
                if s.pend_a {
                    let mut ns = *s;
                    ns.pend_a = false;
                    ns.a_pc = pc::WAKE_CLEAR;
                    go("wake", ns);
                }
            }
            (Protocol::Optimised | Protocol::Bug(_), pc::WAKE_CLEAR) => {
                let mut ns = *s;
                ns.p_flag1 = false;
                ns.a_pc = pc::READY;
                go("clear_wake_flag", ns);
            }
            _ => unreachable!("producer pc {} under {:?}", s.a_pc, self.protocol),
        }
    }

    fn single_consumer_steps(&self, s: &State, out: &mut Vec<(Action, State)>) {
        let full = s.q1 == self.cap();
        let empty = s.q1 == 0;
        let mut go = |name: &'static str, ns: State| out.push((Action { ctx: Ctx::B, name }, ns));
        match (self.protocol, s.b_pc) {
            (Protocol::Pessimistic, pc::READY) => {
                if !empty {
                    let mut ns = *s;
                    ns.q1 -= 1;
                    ns.b_pc = pc::SIG_CHECK;
                    go("dequeue", ns);
                } else {
                    let mut ns = *s;
                    ns.b_pc = pc::OBSERVED;
                    go("observe_empty", ns);
                }
            }
            (Protocol::Pessimistic, pc::SIG_CHECK) => {
                let mut ns = *s;
                ns.pend_a = true;
                ns.b_pc = pc::READY;
                go("signal_producer", ns);
            }
            (Protocol::Pessimistic, pc::OBSERVED) => {
                let mut ns = *s;
                ns.b_pc = pc::ASLEEP;
                go("sleep", ns);
            }
            (Protocol::Pessimistic, pc::ASLEEP) => {
                if s.pend_b {
                    let mut ns = *s;
                    ns.pend_b = false;
                    ns.b_pc = pc::READY;
                    go("wake", ns);
                }
            }
            (Protocol::Optimised | Protocol::Bug(2) | Protocol::Bug(3), pc::READY) => {
                if !empty {
                    let mut ns = *s;
                    ns.b_saved = full; // was_full before this dequeue
                    ns.q1 -= 1;
                    ns.b_pc = pc::SIG_CHECK;
                    go("dequeue", ns);
                } else {
                    let mut ns = *s;
                    ns.c_flag1 = true;
                    ns.b_pc = pc::RECHECK;
                    go("set_wake_flag", ns);
                }
            }
            (Protocol::Bug(1), pc::READY) => {
                if !empty {
                    let mut ns = *s;
                    ns.b_saved = full;
                    ns.q1 -= 1;
                    ns.b_pc = pc::SIG_CHECK;
                    go("dequeue", ns);
                } else {
                    // Defect: re-check first, set the flag only afterwards.
                    let mut ns = *s;
                    ns.b_pc = pc::RECHECK;
                    go("observe_empty", ns);
                }
            }
            (Protocol::Optimised | Protocol::Bug(_), pc::SIG_CHECK) => {
                let mut ns = *s;
                let fire = match self.protocol {
                    // Defect: full->nonfull wake never sent.
                    Protocol::Bug(3) => false,
                    _ => s.b_saved && s.p_flag1,
                };
                if fire {
                    ns.pend_a = true;
                }
                ns.b_pc = pc::READY;
                go(if fire { "signal_producer" } else { "skip_signal" }, ns);
            }
            (Protocol::Bug(1), pc::RECHECK) => {
                let mut ns = *s;
                if empty {
                    ns.b_pc = pc::SET_FLAG_LATE;
                    go("recheck_still_empty", ns);
                } else {
                    ns.b_pc = pc::READY;
                    go("recheck_continue", ns);
                }
            }
            (Protocol::Bug(1), pc::SET_FLAG_LATE) => {
                // The producer can slip in between the re-check above and
                // this write: it reads the flag as clear, skips the signal,
                // and the consumer sleeps on a nonempty queue.
                let mut ns = *s;
                ns.c_flag1 = true;
                ns.b_pc = pc::ASLEEP;
                go("set_flag_and_sleep", ns);
            }
            (Protocol::Optimised | Protocol::Bug(_), pc::RECHECK) => {
                let mut ns = *s;
                if empty {
                    ns.b_pc = pc::ASLEEP;
                    go("recheck_sleep", ns);
                } else {
                    ns.b_pc = pc::CLEAR_FLAG;
                    go("recheck_continue", ns);
                }
            }
            (Protocol::Optimised | Protocol::Bug(_), pc::CLEAR_FLAG) => {
                let mut ns = *s;
                ns.c_flag1 = false;
                ns.b_pc = pc::READY;
                go("clear_wake_flag", ns);
            }
            (Protocol::Optimised | Protocol::Bug(_), pc::ASLEEP) => {
                if s.pend_b {
                    let mut ns = *s;
                    ns.pend_b = false;
                    ns.b_pc = pc::WAKE_CLEAR;
                    go("wake", ns);
                }
            }
            (Protocol::Optimised | Protocol::Bug(_), pc::WAKE_CLEAR) => {
                let mut ns = *s;
                ns.c_flag1 = false;
                ns.b_pc = pc::READY;
                go("clear_wake_flag", ns);
            }
            _ => unreachable!("consumer pc {} under {:?}", s.b_pc, self.protocol),
        }
    }

    // Pair topology. Context A produces requests into q1 and drains returns
    // from q2 (infinite source and sink); context B forwards q1 items into
    // q2 one at a time. Only pessimistic and optimised are modelled here.

    fn pair_a_steps(&self, s: &State, out: &mut Vec<(Action, State)>) {
        let q1_full = s.q1 == self.cap();
        let q2_empty = s.q2 == 0;
        let pessimistic = self.protocol == Protocol::Pessimistic;
        let mut go = |name: &'static str, ns: State| out.push((Action { ctx: Ctx::A, name }, ns));
        match s.a_pc {
            pc::READY => {
                if !q1_full {
                    let mut ns = *s;
                    ns.a_saved = s.q1 == 0;
                    ns.q1 += 1;
                    ns.a_pc = pc::SIG_CHECK;
                    go("enqueue_request", ns);
                }
                if !q2_empty {
                    let mut ns = *s;
                    ns.b_saved = s.q2 == self.cap(); // was_full for q2
                    ns.q2 -= 1;
                    ns.a_pc = pc::PUBLISH; // reused as "post-dequeue signal check"
                    go("dequeue_return", ns);
                }
                if q1_full && q2_empty {
                    if pessimistic {
                        let mut ns = *s;
                        ns.a_pc = pc::OBSERVED;
                        go("observe_blocked", ns);
                    } else {
                        let mut ns = *s;
                        ns.p_flag1 = true;
                        ns.a_pc = pc::SET_FLAG_2;
                        go("set_wake_flag_q1", ns);
                    }
                }
            }
            pc::SIG_CHECK => {
                // After enqueue into q1: consumer side is B.
                let mut ns = *s;
                let fire = if pessimistic { true } else { s.a_saved && s.c_flag1 };
                if fire {
                    ns.pend_b = true;
                }
                ns.a_pc = pc::READY;
                go(if fire { "signal_forwarder" } else { "skip_signal" }, ns);
            }
            pc::PUBLISH => {
                // After dequeue from q2: producer side is B.
                let mut ns = *s;
                let fire = if pessimistic { true } else { s.b_saved && s.p_flag2 };
                if fire {
                    ns.pend_b = true;
                }
                ns.a_pc = pc::READY;
                go(if fire { "signal_forwarder_nonfull" } else { "skip_signal_nonfull" }, ns);
            }
            pc::OBSERVED => {
                let mut ns = *s;
                ns.a_pc = pc::ASLEEP;
                go("sleep", ns);
            }
            pc::SET_FLAG_2 => {
                let mut ns = *s;
                ns.c_flag2 = true;
                ns.a_pc = pc::RECHECK;
                go("set_wake_flag_q2", ns);
            }
            pc::RECHECK => {
                let mut ns = *s;
                if q1_full && q2_empty {
                    ns.a_pc = pc::ASLEEP;
                    go("recheck_sleep", ns);
                } else {
                    ns.a_pc = pc::CLEAR_FLAG;
                    go("recheck_continue", ns);
                }
            }
            pc::CLEAR_FLAG => {
                let mut ns = *s;
                ns.p_flag1 = false;
                ns.a_pc = pc::CLEAR_FLAG_2;
                go("clear_wake_flag_q1", ns);
            }
            pc::CLEAR_FLAG_2 => {
                let mut ns = *s;
                ns.c_flag2 = false;
                ns.a_pc = pc::READY;
                go("clear_wake_flag_q2", ns);
            }
            pc::ASLEEP => {
                if s.pend_a {
                    let mut ns = *s;
                    ns.pend_a = false;
                    ns.a_pc = if pessimistic { pc::READY } else { pc::WAKE_CLEAR };
                    go("wake", ns);
                }
            }
            pc::WAKE_CLEAR => {
                let mut ns = *s;
                ns.p_flag1 = false;
                ns.a_pc = pc::WAKE_CLEAR_2;
                go("clear_wake_flag_q1", ns);
            }
            pc::WAKE_CLEAR_2 => {
                let mut ns = *s;
                ns.c_flag2 = false;
                ns.a_pc = pc::READY;
                go("clear_wake_flag_q2", ns);
            }
            other => unreachable!("pair A pc {other}"),
        }
    }

    fn pair_b_steps(&self, s: &State, out: &mut Vec<(Action, State)>) {
        let q1_empty = s.q1 == 0;
        let q2_full = s.q2 == self.cap();
        let pessimistic = self.protocol == Protocol::Pessimistic;
        let mut go = |name: &'static str, ns: State| out.push((Action { ctx: Ctx::B, name }, ns));
        match s.b_pc {
            pc::READY => {
                if !s.holding {
                    if !q1_empty {
                        let mut ns = *s;
                        ns.a_saved = s.q1 == self.cap(); // was_full for q1
                        ns.q1 -= 1;
                        ns.holding = true;
                        ns.b_pc = pc::SIG_CHECK;
                        go("take_request", ns);
                    } else if pessimistic {
                        let mut ns = *s;
                        ns.b_pc = pc::OBSERVED;
                        go("observe_empty", ns);
                    } else {
                        let mut ns = *s;
                        ns.c_flag1 = true;
                        ns.b_pc = pc::RECHECK;
                        go("set_wake_flag_q1", ns);
                    }
                } else if !q2_full {
                    let mut ns = *s;
                    ns.b_saved = s.q2 == 0; // was_empty for q2
                    ns.q2 += 1;
                    ns.holding = false;
                    ns.b_pc = pc::PUBLISH;
                    go("put_return", ns);
                } else if pessimistic {
                    let mut ns = *s;
                    ns.b_pc = pc::OBSERVED;
                    go("observe_full", ns);
                } else {
                    let mut ns = *s;
                    ns.p_flag2 = true;
                    ns.b_pc = pc::RECHECK;
                    go("set_wake_flag_q2", ns);
                }
            }
            pc::SIG_CHECK => {
                // After taking from q1: producer side is A.
                let mut ns = *s;
                let fire = if pessimistic { true } else { s.a_saved && s.p_flag1 };
                if fire {
                    ns.pend_a = true;
                }
                ns.b_pc = pc::READY;
                go(if fire { "signal_source_nonfull" } else { "skip_signal_nonfull" }, ns);
            }
            pc::PUBLISH => {
                // After putting into q2: consumer side is A.
                let mut ns = *s;
                let fire = if pessimistic { true } else { s.b_saved && s.c_flag2 };
                if fire {
                    ns.pend_a = true;
                }
                ns.b_pc = pc::READY;
                go(if fire { "signal_sink" } else { "skip_signal" }, ns);
            }
            pc::OBSERVED => {
                let mut ns = *s;
                ns.b_pc = pc::ASLEEP;
                go("sleep", ns);
            }
            pc::RECHECK => {
                let mut ns = *s;
                let still_blocked = if s.holding { q2_full } else { q1_empty };
                if still_blocked {
                    ns.b_pc = pc::ASLEEP;
                    go("recheck_sleep", ns);
                } else {
                    ns.b_pc = pc::CLEAR_FLAG;
                    go("recheck_continue", ns);
                }
            }
            pc::CLEAR_FLAG => {
                let mut ns = *s;
                if s.holding {
                    ns.p_flag2 = false;
                } else {
                    ns.c_flag1 = false;
                }
                ns.b_pc = pc::READY;
                go("clear_wake_flag", ns);
            }
            pc::ASLEEP => {
                if s.pend_b {
                    let mut ns = *s;
                    ns.pend_b = false;
                    ns.b_pc = if pessimistic { pc::READY } else { pc::WAKE_CLEAR };
                    go("wake", ns);
                }
            }
            pc::WAKE_CLEAR => {
                let mut ns = *s;
                ns.c_flag1 = false;
                ns.p_flag2 = false;
                ns.b_pc = pc::READY;
                go("clear_wake_flags", ns);
            }
            other => unreachable!("pair B pc {other}"),
        }
    }
}

/// Breadth-first exploration of every reachable state under all
/// interleavings. Any stuck state is a deadlock (work is always pending by
/// construction: the source side never runs out of items).
pub fn explore(model: &ProtocolModel) -> CheckResult {
    explore_capped(model, DEFAULT_STATE_CAP)
}

pub fn explore_capped(model: &ProtocolModel, state_cap: usize) -> CheckResult {
    let init = model.initial();
    let mut index: HashMap<State, usize> = HashMap::new();
    let mut states: Vec<State> = Vec::new();
    let mut parent: Vec<Option<(usize, Action)>> = Vec::new();
    let mut queue: VecDeque<usize> = VecDeque::new();

    index.insert(init, 0);
    states.push(init);
    parent.push(None);
    queue.push_back(0);

    while let Some(i) = queue.pop_front() {
        let s = states[i];
        let succs = model.steps(&s);
        if succs.is_empty() {
            let mut trace = Vec::new();
            let mut cur = i;
            while let Some((p, a)) = parent[cur] {
                trace.push(a);
                cur = p;
            }
            trace.reverse();
            return CheckResult {
                states_explored: states.len(),
                verdict: Verdict::Deadlock { trace },
            };
        }
        for (action, ns) in succs {
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry(ns) {
                if states.len() >= state_cap {
                    return CheckResult {
                        states_explored: states.len(),
                        verdict: Verdict::Inconclusive,
                    };
                }
                let id = states.len();
                e.insert(id);
                states.push(ns);
                parent.push(Some((i, action)));
                queue.push_back(id);
            }
        }
    }

    CheckResult { states_explored: states.len(), verdict: Verdict::DeadlockFree }
}

/// Deterministically re-apply a trace produced by [`explore`] on the same
/// model. Returns the final state; errors if any action is not enabled.
pub fn replay(model: &ProtocolModel, trace: &[Action]) -> Result<State, ReplayError> {
    let mut s = model.initial();
    for (index, action) in trace.iter().enumerate() {
        let next = model
            .steps(&s)
            .into_iter()
            .find(|(a, _)| a == action)
            .map(|(_, ns)| ns);
        match next {
            Some(ns) => s = ns,
            None => {
                return Err(ReplayError::NotEnabled { index, action: action.to_string() })
            }
        }
    }
    Ok(s)
}

/// Human-readable verdict line, used by the CLI.
pub fn format_result(model: &ProtocolModel, result: &CheckResult) -> String {
    let head = format!(
        "protocol={} topology={} capacity={}: ",
        model.protocol, model.topology, model.capacity
    );
    match &result.verdict {
        Verdict::DeadlockFree => format!(
            "{head}deadlock-free ({} states explored)",
            result.states_explored
        ),
        Verdict::Deadlock { trace } => format!(
            "{head}DEADLOCK after {} steps ({} states explored)",
            trace.len(),
            result.states_explored
        ),
        Verdict::Inconclusive => format!(
            "{head}inconclusive: state cap exceeded at {} states",
            result.states_explored
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queue::{BufferDescriptor, Side, SpscQueue};

    fn model(p: Protocol, t: Topology, cap: u8) -> ProtocolModel {
        ProtocolModel::new(p, t, cap).unwrap()
    }

    #[test]
    fn pessimistic_single_capacity_two_is_deadlock_free() {
        let m = model(Protocol::Pessimistic, Topology::Single, 2);
        let r = explore(&m);
        assert_eq!(r.verdict, Verdict::DeadlockFree);
        assert!(r.states_explored > 10);
    }

    #[test]
    fn optimised_single_is_deadlock_free_at_1_2_4() {
        for cap in [1, 2, 4] {
            let m = model(Protocol::Optimised, Topology::Single, cap);
            let r = explore(&m);
            assert_eq!(r.verdict, Verdict::DeadlockFree, "capacity {cap}");
        }
    }

    #[test]
    fn optimised_pair_is_deadlock_free_at_1_2_4() {
        for cap in [1, 2, 4] {
            let m = model(Protocol::Optimised, Topology::Pair, cap);
            let r = explore(&m);
            assert_eq!(r.verdict, Verdict::DeadlockFree, "capacity {cap}");
        }
    }

    #[test]
    fn pessimistic_pair_is_deadlock_free() {
        for cap in [1, 2, 4] {
            let m = model(Protocol::Pessimistic, Topology::Pair, cap);
            let r = explore(&m);
            assert_eq!(r.verdict, Verdict::DeadlockFree, "capacity {cap}");
        }
    }

    #[test]
    fn bug_variants_deadlock_with_replayable_trace() {
        for bug in 1..=3u8 {
            let m = model(Protocol::Bug(bug), Topology::Single, 2);
            let r = explore(&m);
            match &r.verdict {
                Verdict::Deadlock { trace } => {
                    let end = replay(&m, trace).unwrap();
                    assert!(m.is_stuck(&end), "bug-{bug} trace must replay to a stuck state");
                    // Pending work exists: items queued or the infinite
                    // source blocked, and nobody runnable, no notification.
                    assert!(!end.pend_a && !end.pend_b);
                }
                v => panic!("bug-{bug} expected deadlock, got {v:?}"),
            }
        }
    }

    #[test]
    fn replay_of_empty_trace_is_initial_state() {
        let m = model(Protocol::Optimised, Topology::Single, 2);
        assert_eq!(replay(&m, &[]).unwrap(), m.initial());
    }

    #[test]
    fn replay_rejects_foreign_trace() {
        let m = model(Protocol::Optimised, Topology::Single, 2);
        let bogus = [Action { ctx: Ctx::A, name: "wake" }];
        assert!(replay(&m, &bogus).is_err());
    }

    #[test]
    fn state_cap_yields_inconclusive() {
        let m = model(Protocol::Optimised, Topology::Pair, 4);
        let r = explore_capped(&m, 10);
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ProtocolModel::new(Protocol::Optimised, Topology::Single, 0).is_err());
        assert!(ProtocolModel::new(Protocol::Optimised, Topology::Single, 8).is_err());
        assert!(ProtocolModel::new(Protocol::Bug(4), Topology::Single, 2).is_err());
        assert!(ProtocolModel::new(Protocol::Bug(1), Topology::Pair, 2).is_err());
    }

    /// The model's queue arithmetic and signalling predicates must agree
    /// with the real queue implementation. Exhaustive comparison over every
    /// fill level and flag combination at capacities 1 and 2.
    #[test]
    fn model_queue_semantics_match_queue_core() {
        for cap in [1u64, 2] {
            for fill in 0..=cap {
                for p_flag in [false, true] {
                    for c_flag in [false, true] {
                        let mut q: SpscQueue<BufferDescriptor> = SpscQueue::new(cap).unwrap();
                        for i in 0..fill {
                            q.enqueue(BufferDescriptor::new(i * 64, 64)).unwrap();
                        }
                        q.set_signal_request(Side::Producer, p_flag);
                        q.set_signal_request(Side::Consumer, c_flag);

                        // Model-side equivalents on a fill counter.
                        let model_full = fill == cap;
                        let model_empty = fill == 0;
                        assert_eq!(q.is_full(), model_full);
                        assert_eq!(q.is_empty(), model_empty);

                        // Enqueue enabled iff not full; effect fill+1; the
                        // producer signals iff was_empty && c_flag.
                        let was_empty = q.is_empty();
                        let mut q2 = q.clone();
                        let enq = q2.enqueue(BufferDescriptor::new(0, 64));
                        assert_eq!(enq.is_ok(), !model_full);
                        if enq.is_ok() {
                            assert_eq!(q2.len(), fill + 1);
                            assert_eq!(
                                q2.producer_should_signal(was_empty),
                                was_empty && c_flag
                            );
                        }

                        // Dequeue enabled iff not empty; effect fill-1; the
                        // consumer signals iff was_full && p_flag.
                        let was_full = q.is_full();
                        let mut q3 = q.clone();
                        let deq = q3.dequeue();
                        assert_eq!(deq.is_some(), !model_empty);
                        if deq.is_some() {
                            assert_eq!(q3.len(), fill - 1);
                            assert_eq!(
                                q3.consumer_should_signal(was_full),
                                was_full && p_flag
                            );
                        }
                    }
                }
            }
        }
    }
}
