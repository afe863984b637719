use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::types::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Index into the simulator's generation list.
    Arrival(usize),
    ServiceCompletion { server: usize, token: u64 },
    PotentialCompletion,
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::Arrival(_) => 0,
            EventKind::ServiceCompletion { .. } => 1,
            EventKind::PotentialCompletion => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: Time,
    rank: u8,
    counter: u64,
    kind: EventKind,
}

impl Scheduled {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.rank.cmp(&other.rank))
            .then(self.counter.cmp(&other.counter))
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

/// Min-queue of events by `(time, kind rank, insertion order)`.
#[derive(Debug, Clone, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    counter: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: Time, kind: EventKind) {
        self.heap.push(Scheduled {
            time,
            rank: kind.rank(),
            counter: self.counter,
            kind,
        });
        self.counter += 1;
    }

    pub fn pop(&mut self) -> Option<(Time, EventKind)> {
        self.heap.pop().map(|s| (s.time, s.kind))
    }

    pub fn peek_time(&self) -> Option<Time> {
        self.heap.peek().map(|s| s.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
