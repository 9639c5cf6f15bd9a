//! Exhaustive linearizability checking for small histories.
//!
//! Depth-first search over linearization orders. An operation may come next
//! only if no pending operation responded before it was invoked. A set of
//! (linearized operations, dictionary state) pairs already shown to be dead
//! ends prunes the search.

use crate::history::History;
use crate::oracle::OracleMap;
use std::collections::HashSet;
use std::fmt;
use std::hash::Hash;

pub const MAX_THREADS: usize = 4;
pub const MAX_EVENTS: usize = 48;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CheckError {
    /// No legal order exists. `deepest` is the longest order of event indices
    /// that replayed correctly.
    NotLinearizable { deepest: Vec<usize> },
    /// Too large for exhaustive search; use sampled checking instead.
    ScopeExceeded { threads: usize, events: usize },
}

impl fmt::Display for CheckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckError::NotLinearizable { deepest } => {
                write!(f, "not linearizable; longest legal prefix {deepest:?}")
            }
            CheckError::ScopeExceeded { threads, events } => write!(
                f,
                "{threads} threads and {events} events exceed the exhaustive scope \
                 ({MAX_THREADS} threads, {MAX_EVENTS} events); use sampled checking instead"
            ),
        }
    }
}

impl std::error::Error for CheckError {}

struct Search<'h, K, V> {
    h: &'h History<K, V>,
    dead: HashSet<(u64, OracleMap<K, V>)>,
    order: Vec<usize>,
    deepest: Vec<usize>,
}

impl<K: Ord + Copy + Hash, V: Clone + Eq + Hash> Search<'_, K, V> {
    fn go(&mut self, done: u64, state: &OracleMap<K, V>) -> bool {
        let n = self.h.events.len();
        if done.count_ones() as usize == n {
            return true;
        }
        if self.dead.contains(&(done, state.clone())) {
            return false;
        }
        let pending = || (0..n).filter(move |&i| done & (1 << i) == 0);
        let horizon = pending().map(|i| self.h.events[i].response).min().unwrap();
        for i in pending() {
            let e = &self.h.events[i];
            if e.invoke > horizon {
                continue;
            }
            let mut next = state.clone();
            if next.apply(&e.op) != e.result {
                continue;
            }
            self.order.push(i);
            if self.order.len() > self.deepest.len() {
                self.deepest = self.order.clone();
            }
            if self.go(done | (1 << i), &next) {
                return true;
            }
            self.order.pop();
        }
        self.dead.insert((done, state.clone()));
        false
    }
}

/// Searches for a total order of the history's operations that respects
/// real-time precedence and replays on an initially empty [`OracleMap`].
/// Returns the order as event indices.
pub fn check_linearizable<K, V>(h: &History<K, V>) -> Result<Vec<usize>, CheckError>
where
    K: Ord + Copy + Hash,
    V: Clone + Eq + Hash,
{
    check_linearizable_from(h, &OracleMap::new())
}

/// As [`check_linearizable`], starting from `initial`.
pub fn check_linearizable_from<K, V>(h: &History<K, V>, initial: &OracleMap<K, V>) -> Result<Vec<usize>, CheckError>
where
    K: Ord + Copy + Hash,
    V: Clone + Eq + Hash,
{
    let (threads, events) = (h.threads(), h.len());
    if threads > MAX_THREADS || events > MAX_EVENTS {
        return Err(CheckError::ScopeExceeded { threads, events });
    }
    let mut s = Search {
        h,
        dead: HashSet::new(),
        order: Vec::new(),
        deepest: Vec::new(),
    };
    if s.go(0, initial) {
        Ok(s.order)
    } else {
        Err(CheckError::NotLinearizable { deepest: s.deepest })
    }
}
