//! Bounded single-producer single-consumer queues and the signalling
//! predicates that decide when one side must notify the other.
//!
//! Queues are arrays with free-running head/tail counters masked by
//! `capacity - 1` (capacity is a power of two), so full and empty are
//! distinguishable without wasting a slot. Each side owns a signal-request
//! flag: the producer signals the consumer only on an empty->nonempty
//! transition when the consumer asked for it, and symmetrically for the
//! consumer on full->nonfull. The correctness of that protocol under
//! arbitrary two-context interleaving is established by [`crate::checker`].
//!
//! In the simulator all contexts are multiplexed on one thread, so no
//! atomics are needed; the producer/consumer split is a discipline enforced
//! by the runtime wiring (exactly one producer and one consumer component
//! per queue).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a descriptor queue in the runtime's metadata region table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QueueId(pub usize);

/// Index of a block-request queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReqQueueId(pub usize);

/// Index of a block-response queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RespQueueId(pub usize);

/// Reference to one fixed-size slot of a data region: byte offset, payload
/// length and a small flag set. Queues carry these by value; they never
/// contain payload bytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferDescriptor {
    /// Byte offset into the data region the queue's endpoint addresses.
    /// Always a multiple of the region's slot size for a valid descriptor.
    pub offset: u64,
    /// Payload bytes stored at `offset`. At most the region's slot size.
    pub len: u32,
    /// Bit 0 marks a broadcast fan-out copy (ownership stays with the
    /// reference-counted entry, not the queue). Other bits reserved.
    pub flags: u8,
}

impl BufferDescriptor {
    pub const FLAG_BROADCAST_COPY: u8 = 1;

    pub fn new(offset: u64, len: u32) -> Self {
        BufferDescriptor { offset, len, flags: 0 }
    }

    pub fn is_broadcast_copy(&self) -> bool {
        self.flags & Self::FLAG_BROADCAST_COPY != 0
    }
}

/// Which side of a queue a caller owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Producer,
    Consumer,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueueConfigError {
    #[error("queue capacity {0} is not a power of two")]
    NotPowerOfTwo(u64),
    #[error("queue capacity must be at least 1")]
    Zero,
}

/// Returned by `enqueue` when `head - tail == capacity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Full;

/// Bounded SPSC ring. `T` is a small copyable record; the network pipeline
/// uses [`BufferDescriptor`], the storage pipeline request/response records.
#[derive(Debug, Clone)]
pub struct SpscQueue<T> {
    capacity: u64,
    mask: u64,
    /// Free-running enqueue counter; slot for logical index i is i & mask.
    head: u64,
    /// Free-running dequeue counter.
    tail: u64,
    entries: Box<[T]>,
    consumer_wants_signal: bool,
    producer_wants_signal: bool,
}

impl<T: Copy + Default> SpscQueue<T> {
    /// Both signal flags start set so the very first datum always notifies.
    pub fn new(capacity: u64) -> Result<Self, QueueConfigError> {
        if capacity == 0 {
            return Err(QueueConfigError::Zero);
        }
        if !capacity.is_power_of_two() {
            return Err(QueueConfigError::NotPowerOfTwo(capacity));
        }
        Ok(SpscQueue {
            capacity,
            mask: capacity - 1,
            head: 0,
            tail: 0,
            entries: vec![T::default(); capacity as usize].into_boxed_slice(),
            consumer_wants_signal: true,
            producer_wants_signal: true,
        })
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn len(&self) -> u64 {
        self.head - self.tail
    }

    pub fn is_empty(&self) -> bool {
        self.head == self.tail
    }

    pub fn is_full(&self) -> bool {
        self.head - self.tail == self.capacity
    }

    pub fn free_slots(&self) -> u64 {
        self.capacity - self.len()
    }

    /// Producer side. On `Full` the queue is unchanged.
    pub fn enqueue(&mut self, item: T) -> Result<(), Full> {
        if self.is_full() {
            return Err(Full);
        }
        self.entries[(self.head & self.mask) as usize] = item;
        self.head += 1;
        Ok(())
    }

    /// Consumer side. `None` when empty.
    pub fn dequeue(&mut self) -> Option<T> {
        if self.is_empty() {
            return None;
        }
        let item = self.entries[(self.tail & self.mask) as usize];
        self.tail += 1;
        Some(item)
    }

    /// Consumer side: next item without removing it.
    pub fn peek(&self) -> Option<&T> {
        if self.is_empty() {
            None
        } else {
            Some(&self.entries[(self.tail & self.mask) as usize])
        }
    }

    /// Iterate over queued items front to back (audit use).
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        (self.tail..self.head).map(move |i| &self.entries[(i & self.mask) as usize])
    }

    /// Producer side, called right after a successful enqueue: signal the
    /// consumer only on the empty->nonempty transition it requested.
    pub fn producer_should_signal(&self, was_empty_before_enqueue: bool) -> bool {
        was_empty_before_enqueue && self.consumer_wants_signal
    }

    /// Consumer side, called right after a successful dequeue: signal the
    /// producer only on the full->nonfull transition it requested.
    pub fn consumer_should_signal(&self, was_full_before_dequeue: bool) -> bool {
        was_full_before_dequeue && self.producer_wants_signal
    }

    /// Set or clear the named side's signal-request flag. Idempotent.
    pub fn set_signal_request(&mut self, side: Side, value: bool) {
        match side {
            Side::Producer => self.producer_wants_signal = value,
            Side::Consumer => self.consumer_wants_signal = value,
        }
    }

    pub fn signal_requested(&self, side: Side) -> bool {
        match side {
            Side::Producer => self.producer_wants_signal,
            Side::Consumer => self.consumer_wants_signal,
        }
    }
}

/// The queue bundle a network endpoint exposes: available/free pairs for
/// each direction. Every queue has exactly one producer component and one
/// consumer component.
#[derive(Debug, Clone, Copy)]
pub struct NetQueueSet {
    /// Buffers with valid data awaiting transmission.
    pub tx_avail: QueueId,
    /// Transmit buffers returned for re-use.
    pub tx_free: QueueId,
    /// Buffers filled with received data.
    pub rx_avail: QueueId,
    /// Empty buffers available to receive into.
    pub rx_free: QueueId,
}

/// The queue pair a storage endpoint exposes.
#[derive(Debug, Clone, Copy)]
pub struct BlockQueueSet {
    pub requests: ReqQueueId,
    pub responses: RespQueueId,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn d(offset: u64) -> BufferDescriptor {
        BufferDescriptor::new(offset, 64)
    }

    #[test]
    fn init_capacity_eight_is_empty() {
        let q: SpscQueue<BufferDescriptor> = SpscQueue::new(8).unwrap();
        assert_eq!(q.len(), 0);
        assert!(q.is_empty());
        assert!(!q.is_full());
        // Conservative start: both flags set.
        assert!(q.signal_requested(Side::Producer));
        assert!(q.signal_requested(Side::Consumer));
    }

    #[test]
    fn init_rejects_non_power_of_two() {
        let err = SpscQueue::<BufferDescriptor>::new(6).unwrap_err();
        assert_eq!(err, QueueConfigError::NotPowerOfTwo(6));
        let err = SpscQueue::<BufferDescriptor>::new(0).unwrap_err();
        assert_eq!(err, QueueConfigError::Zero);
    }

    #[test]
    fn init_capacity_one_is_valid() {
        let mut q: SpscQueue<BufferDescriptor> = SpscQueue::new(1).unwrap();
        q.enqueue(d(0)).unwrap();
        assert!(q.is_full());
        assert_eq!(q.enqueue(d(64)), Err(Full));
        assert_eq!(q.dequeue(), Some(d(0)));
        assert!(q.is_empty());
    }

    #[test]
    fn enqueue_then_full_leaves_state_unchanged() {
        let mut q: SpscQueue<BufferDescriptor> = SpscQueue::new(4).unwrap();
        q.enqueue(d(0)).unwrap();
        assert_eq!(q.len(), 1);
        for i in 1..4 {
            q.enqueue(d(i * 64)).unwrap();
        }
        assert!(q.is_full());
        assert_eq!(q.enqueue(d(999)), Err(Full));
        assert_eq!(q.len(), 4);
        // FIFO order preserved after the failed enqueue.
        assert_eq!(q.dequeue(), Some(d(0)));
    }

    #[test]
    fn dequeue_empty_returns_none() {
        let mut q: SpscQueue<BufferDescriptor> = SpscQueue::new(4).unwrap();
        assert_eq!(q.dequeue(), None);
        q.enqueue(d(128)).unwrap();
        assert_eq!(q.dequeue(), Some(d(128)));
        assert_eq!(q.len(), 0);
        assert_eq!(q.dequeue(), None);
    }

    #[test]
    fn producer_signal_predicate_truth_table() {
        let mut q: SpscQueue<BufferDescriptor> = SpscQueue::new(4).unwrap();
        // was_empty && consumer requested -> signal
        assert!(q.producer_should_signal(true));
        // no transition -> no signal even though requested
        assert!(!q.producer_should_signal(false));
        // transition but suppressed by flag
        q.set_signal_request(Side::Consumer, false);
        assert!(!q.producer_should_signal(true));
    }

    #[test]
    fn consumer_signal_predicate_truth_table() {
        let mut q: SpscQueue<BufferDescriptor> = SpscQueue::new(4).unwrap();
        assert!(q.consumer_should_signal(true));
        assert!(!q.consumer_should_signal(false));
        q.set_signal_request(Side::Producer, false);
        assert!(!q.consumer_should_signal(true));
    }

    #[test]
    fn set_signal_request_is_idempotent() {
        let mut q: SpscQueue<BufferDescriptor> = SpscQueue::new(2).unwrap();
        q.set_signal_request(Side::Consumer, true);
        q.set_signal_request(Side::Consumer, true);
        assert!(q.signal_requested(Side::Consumer));
        q.set_signal_request(Side::Consumer, false);
        q.set_signal_request(Side::Consumer, false);
        assert!(!q.signal_requested(Side::Consumer));
        // Flag cleared: enqueue into empty queue does not signal.
        assert!(!q.producer_should_signal(true));
    }

    /// Replays a mixed op sequence against a growable FIFO list and checks
    /// the ring produces identical outputs and rejections.
    fn check_against_fifo_oracle(capacity: u64, ops: &[(bool, u64)]) {
        let mut q: SpscQueue<BufferDescriptor> = SpscQueue::new(capacity).unwrap();
        let mut oracle: VecDeque<BufferDescriptor> = VecDeque::new();
        for &(is_enq, v) in ops {
            if is_enq {
                let item = BufferDescriptor::new(v * 64, (v % 1518) as u32);
                let got = q.enqueue(item);
                if oracle.len() as u64 == capacity {
                    assert_eq!(got, Err(Full));
                } else {
                    assert_eq!(got, Ok(()));
                    oracle.push_back(item);
                }
            } else {
                assert_eq!(q.dequeue(), oracle.pop_front());
            }
            assert_eq!(q.len(), oracle.len() as u64);
            // Index arithmetic invariant: head - tail within [0, capacity].
            assert!(q.len() <= capacity);
        }
    }

    #[test]
    fn thousand_mixed_ops_match_fifo_oracle() {
        // Deterministic pseudo-random mix, 1000 ops as a fixed smoke case.
        let mut rng = crate::rng::Rng::new(0xF1F0);
        let ops: Vec<(bool, u64)> =
            (0..1000).map(|i| (rng.chance(6, 10), i)).collect();
        check_against_fifo_oracle(4, &ops);
    }

    proptest! {
        /// FIFO oracle equivalence over arbitrary op sequences and
        /// capacities.
        #[test]
        fn fifo_oracle_equivalence(
            cap_pow in 0u32..6,
            ops in proptest::collection::vec((any::<bool>(), 0u64..1024), 0..2000)
        ) {
            check_against_fifo_oracle(1 << cap_pow, &ops);
        }

        /// Signalling soundness: producer_should_signal is true only on
        /// empty->nonempty transitions, consumer_should_signal only on
        /// full->nonfull, regardless of flag settings.
        #[test]
        fn signalling_soundness(
            ops in proptest::collection::vec((0u8..4, any::<bool>()), 0..500)
        ) {
            let mut q: SpscQueue<BufferDescriptor> = SpscQueue::new(2).unwrap();
            for (op, flag) in ops {
                match op {
                    0 => {
                        let was_empty = q.is_empty();
                        if q.enqueue(d(0)).is_ok() && q.producer_should_signal(was_empty) {
                            prop_assert!(was_empty && q.len() == 1);
                        }
                    }
                    1 => {
                        let was_full = q.is_full();
                        if q.dequeue().is_some() && q.consumer_should_signal(was_full) {
                            prop_assert!(was_full && q.len() == q.capacity() - 1);
                        }
                    }
                    2 => q.set_signal_request(Side::Producer, flag),
                    _ => q.set_signal_request(Side::Consumer, flag),
                }
            }
        }
    }

    /// Two-context safety at operation granularity: every interleaving of a
    /// producer op stream and a consumer op stream preserves FIFO order and
    /// loses no update. Exhaustive over all interleavings of 2x6 ops at
    /// capacity 2.
    #[test]
    fn exhaustive_two_context_interleavings() {
        const OPS_PER_SIDE: usize = 6;

        fn recurse(
            q: &mut SpscQueue<BufferDescriptor>,
            oracle: &mut VecDeque<BufferDescriptor>,
            produced: u64,
            consumed: usize,
            count: &mut u64,
        ) {
            *count += 1;
            assert!(q.len() <= q.capacity());
            assert_eq!(q.len(), oracle.len() as u64);
            if produced as usize == OPS_PER_SIDE && consumed == OPS_PER_SIDE {
                return;
            }
            if (produced as usize) < OPS_PER_SIDE {
                let mut q2 = q.clone();
                let mut o2 = oracle.clone();
                let item = d(produced * 64);
                match q2.enqueue(item) {
                    Ok(()) => {
                        o2.push_back(item);
                        recurse(&mut q2, &mut o2, produced + 1, consumed, count);
                    }
                    Err(Full) => {
                        assert_eq!(o2.len() as u64, q2.capacity());
                        recurse(&mut q2, &mut o2, produced + 1, consumed, count);
                    }
                }
            }
            if consumed < OPS_PER_SIDE {
                let mut q2 = q.clone();
                let mut o2 = oracle.clone();
                assert_eq!(q2.dequeue(), o2.pop_front());
                recurse(&mut q2, &mut o2, produced, consumed + 1, count);
            }
        }

        let mut q: SpscQueue<BufferDescriptor> = SpscQueue::new(2).unwrap();
        let mut oracle = VecDeque::new();
        let mut count = 0;
        recurse(&mut q, &mut oracle, 0, 0, &mut count);
        // C(12, 6) = 924 interleavings, each visited as a path.
        assert!(count > 924);
    }
}
