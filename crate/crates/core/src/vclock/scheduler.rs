use alloc::collections::BinaryHeap;
use core::cmp::{Ordering, Reverse};

use crate::units::Nanos;

/// Tie-break class for events sharing an instant. `Late` events run after
/// every `Normal` event at the same timestamp, whatever their insertion
/// order; watchdog-style checks use it to observe that instant completely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Normal = 0,
    Late = 1,
}

struct Entry<E> {
    at: Nanos,
    order: Order,
    seq: u64,
    event: E,
}

impl<E> Entry<E> {
    fn key(&self) -> (Nanos, Order, u64) {
        (self.at, self.order, self.seq)
    }
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
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
        self.key().cmp(&other.key())
    }
}

/// Discrete-event queue that owns virtual time.
///
/// Events pop in `(time, order, insertion)` order, so a program of
/// schedule calls always replays identically.
pub struct Scheduler<E> {
    now: Nanos,
    seq: u64,
    queue: BinaryHeap<Reverse<Entry<E>>>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self { now: 0, seq: 0, queue: BinaryHeap::new() }
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    /// Events in the past are clamped to the current instant.
    pub fn schedule_at(&mut self, at: Nanos, event: E) {
        self.push(at, Order::Normal, event);
    }

    pub fn schedule_in(&mut self, delay: Nanos, event: E) {
        self.push(self.now + delay.max(0), Order::Normal, event);
    }

    pub fn schedule_late_at(&mut self, at: Nanos, event: E) {
        self.push(at, Order::Late, event);
    }

    fn push(&mut self, at: Nanos, order: Order, event: E) {
        let at = at.max(self.now);
        self.seq += 1;
        self.queue.push(Reverse(Entry { at, order, seq: self.seq, event }));
    }

    pub fn peek_time(&self) -> Option<Nanos> {
        self.queue.peek().map(|Reverse(e)| e.at)
    }

    pub fn pop(&mut self) -> Option<(Nanos, E)> {
        let Reverse(e) = self.queue.pop()?;
        self.now = e.at;
        Some((e.at, e.event))
    }

    /// Pop the next event only if it is due at or before `limit`.
    pub fn pop_until(&mut self, limit: Nanos) -> Option<(Nanos, E)> {
        match self.peek_time() {
            Some(t) if t <= limit => self.pop(),
            _ => None,
        }
    }

    /// Move the clock forward without an event. Never moves backwards.
    pub fn advance_to(&mut self, t: Nanos) {
        self.now = self.now.max(t);
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn pops_in_time_then_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule_at(20, 'c');
        s.schedule_at(10, 'a');
        s.schedule_at(10, 'b');
        let got: Vec<_> = core::iter::from_fn(|| s.pop()).collect();
        assert_eq!(got, [(10, 'a'), (10, 'b'), (20, 'c')]);
        assert_eq!(s.now(), 20);
    }

    #[test]
    fn late_events_follow_normal_ones_at_same_instant() {
        let mut s = Scheduler::new();
        s.schedule_late_at(5, "late");
        s.schedule_at(5, "normal");
        assert_eq!(s.pop(), Some((5, "normal")));
        assert_eq!(s.pop(), Some((5, "late")));
    }

    #[test]
    fn past_events_clamp_to_now() {
        let mut s = Scheduler::new();
        s.advance_to(100);
        s.schedule_at(50, ());
        assert_eq!(s.pop(), Some((100, ())));
    }
}
