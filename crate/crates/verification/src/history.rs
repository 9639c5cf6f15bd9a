//! Concurrent operation histories.

use crate::oracle::{Op, OpResult};
use std::sync::atomic::{AtomicU64, Ordering::SeqCst};
use std::sync::Mutex;

/// One completed operation. Timestamps come from a shared logical clock, so
/// `a.response < b.invoke` means `a` finished before `b` started.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryEvent<K, V> {
    pub thread: usize,
    pub op: Op<K, V>,
    pub result: OpResult<K, V>,
    pub invoke: u64,
    pub response: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct History<K, V> {
    pub events: Vec<HistoryEvent<K, V>>,
}

impl<K: Copy, V: Clone> History<K, V> {
    pub fn new(events: Vec<HistoryEvent<K, V>>) -> Self {
        History { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn threads(&self) -> usize {
        let mut t: Vec<usize> = self.events.iter().map(|e| e.thread).collect();
        t.sort_unstable();
        t.dedup();
        t.len()
    }

    /// Every event has `invoke < response`, and one thread's events do not
    /// overlap.
    pub fn check_well_formed(&self) -> Result<(), String> {
        let mut by_thread: Vec<&HistoryEvent<K, V>> = self.events.iter().collect();
        by_thread.sort_by_key(|e| (e.thread, e.invoke));
        for e in &by_thread {
            if e.invoke >= e.response {
                return Err(format!("thread {} has an event responding at {} before invoking at {}", e.thread, e.response, e.invoke));
            }
        }
        for w in by_thread.windows(2) {
            if w[0].thread == w[1].thread && w[0].response > w[1].invoke {
                return Err(format!("thread {} overlaps itself at time {}", w[0].thread, w[1].invoke));
            }
        }
        Ok(())
    }
}

/// Collects events from several threads against one logical clock.
#[derive(Debug, Default)]
pub struct Recorder<K, V> {
    clock: AtomicU64,
    events: Mutex<Vec<HistoryEvent<K, V>>>,
}

impl<K: Copy, V: Clone> Recorder<K, V> {
    pub fn new() -> Self {
        Recorder {
            clock: AtomicU64::new(0),
            events: Mutex::new(Vec::new()),
        }
    }

    /// Runs `f` as one operation of `thread` and records it.
    pub fn record(&self, thread: usize, op: Op<K, V>, f: impl FnOnce(&Op<K, V>) -> OpResult<K, V>) -> OpResult<K, V> {
        let invoke = self.clock.fetch_add(1, SeqCst);
        let result = f(&op);
        let response = self.clock.fetch_add(1, SeqCst);
        self.events.lock().unwrap().push(HistoryEvent {
            thread,
            op,
            result: result.clone(),
            invoke,
            response,
        });
        result
    }

    pub fn into_history(self) -> History<K, V> {
        let mut events = self.events.into_inner().unwrap();
        events.sort_by_key(|e| e.invoke);
        History { events }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlapping_events_of_one_thread_are_rejected() {
        let ev = |invoke, response| HistoryEvent {
            thread: 0,
            op: Op::<u64, u64>::Get(1),
            result: OpResult::Value(None),
            invoke,
            response,
        };
        assert!(History::new(vec![ev(0, 1), ev(2, 3)]).check_well_formed().is_ok());
        assert!(History::new(vec![ev(0, 3), ev(2, 4)]).check_well_formed().is_err());
        assert!(History::new(vec![ev(2, 2)]).check_well_formed().is_err());
    }
}
