use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::types::{NodeId, SimTime};

/// Total order on events: time, then kind rank, then node, then insertion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EventKey {
    pub time: SimTime,
    pub rank: u8,
    pub node: NodeId,
    pub seq: u64,
}

struct Entry<E> {
    key: EventKey,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

/// Min-queue of events. Scheduling into the past is a bug and panics.
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    next_seq: u64,
    now: SimTime,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: SimTime::ZERO,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Time of the most recently popped event.
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn push(&mut self, time: SimTime, rank: u8, node: NodeId, event: E) -> EventKey {
        assert!(time >= self.now, "event scheduled at {time:?}, before now {:?}", self.now);
        let key = EventKey {
            time,
            rank,
            node,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { key, event }));
        key
    }

    pub fn pop(&mut self) -> Option<(EventKey, E)> {
        let Reverse(Entry { key, event }) = self.heap.pop()?;
        self.now = key.time;
        Some((key, event))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.key.time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_rank_then_node() {
        let mut q = EventQueue::new();
        q.push(SimTime(5), 2, NodeId(0), "gen");
        q.push(SimTime(5), 0, NodeId(3), "arrive-3");
        q.push(SimTime(5), 0, NodeId(1), "arrive-1");
        q.push(SimTime(1), 9, NodeId(9), "early");
        let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|(_, e)| e)).collect();
        assert_eq!(order, ["early", "arrive-1", "arrive-3", "gen"]);
    }

    #[test]
    #[should_panic]
    fn scheduling_into_the_past_panics() {
        let mut q = EventQueue::new();
        q.push(SimTime(10), 0, NodeId(0), ());
        q.pop();
        q.push(SimTime(9), 0, NodeId(0), ());
    }
}
