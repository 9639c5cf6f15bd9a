//! Sequential reference dictionary.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Bound::{Excluded, Unbounded};

/// One dictionary operation with its arguments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op<K, V> {
    Insert(K, V),
    Delete(K),
    Get(K),
    Successor(K),
    Predecessor(K),
}

impl<K: Copy, V> Op<K, V> {
    pub fn key(&self) -> K {
        match *self {
            Op::Insert(k, _) | Op::Delete(k) | Op::Get(k) | Op::Successor(k) | Op::Predecessor(k) => k,
        }
    }

    pub fn is_update(&self) -> bool {
        matches!(self, Op::Insert(..) | Op::Delete(_))
    }
}

impl<K: fmt::Display, V: fmt::Display> fmt::Display for Op<K, V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Insert(k, v) => write!(f, "insert({k}, {v})"),
            Op::Delete(k) => write!(f, "delete({k})"),
            Op::Get(k) => write!(f, "get({k})"),
            Op::Successor(k) => write!(f, "successor({k})"),
            Op::Predecessor(k) => write!(f, "predecessor({k})"),
        }
    }
}

/// What an operation returned. Insert, Delete and Get report the value that
/// was associated with the key; Successor and Predecessor report an entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpResult<K, V> {
    Value(Option<V>),
    Entry(Option<(K, V)>),
}

impl<K: fmt::Display, V: fmt::Display> fmt::Display for OpResult<K, V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpResult::Value(None) | OpResult::Entry(None) => f.write_str("absent"),
            OpResult::Value(Some(v)) => write!(f, "{v}"),
            OpResult::Entry(Some((k, v))) => write!(f, "({k}, {v})"),
        }
    }
}

/// Keys strictly increasing by construction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct OracleMap<K, V> {
    entries: BTreeMap<K, V>,
}

impl<K: Ord + Copy, V: Clone> OracleMap<K, V> {
    pub fn new() -> Self {
        OracleMap { entries: BTreeMap::new() }
    }

    pub fn apply(&mut self, op: &Op<K, V>) -> OpResult<K, V> {
        let entry = |(k, v): (&K, &V)| (*k, v.clone());
        match op {
            Op::Insert(k, v) => OpResult::Value(self.entries.insert(*k, v.clone())),
            Op::Delete(k) => OpResult::Value(self.entries.remove(k)),
            Op::Get(k) => OpResult::Value(self.entries.get(k).cloned()),
            Op::Successor(k) => OpResult::Entry(self.entries.range((Excluded(k), Unbounded)).next().map(entry)),
            Op::Predecessor(k) => OpResult::Entry(self.entries.range(..k).next_back().map(entry)),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (K, V)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, v.clone()))
    }
}

/// Pure form: the successor state and the result.
pub fn oracle_apply<K: Ord + Copy, V: Clone>(state: &OracleMap<K, V>, op: &Op<K, V>) -> (OracleMap<K, V>, OpResult<K, V>) {
    let mut next = state.clone();
    let r = next.apply(op);
    (next, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_then_delete() {
        let (s, r) = oracle_apply(&OracleMap::new(), &Op::Insert(5, "a"));
        assert_eq!(r, OpResult::Value(None));
        assert_eq!(s.entries().collect::<Vec<_>>(), vec![(5, "a")]);
        let (s, r) = oracle_apply(&s, &Op::Delete(5));
        assert_eq!(r, OpResult::Value(Some("a")));
        assert!(s.is_empty());
    }

    #[test]
    fn neighbors_are_strict() {
        let mut m = OracleMap::new();
        for k in [3, 5, 9] {
            m.apply(&Op::Insert(k, k));
        }
        assert_eq!(m.apply(&Op::Successor(5)), OpResult::Entry(Some((9, 9))));
        assert_eq!(m.apply(&Op::Predecessor(5)), OpResult::Entry(Some((3, 3))));
        assert_eq!(m.apply(&Op::Successor(9)), OpResult::Entry(None));
        assert_eq!(m.apply(&Op::Predecessor(3)), OpResult::Entry(None));
        assert_eq!(m.apply(&Op::Successor(4)), OpResult::Entry(Some((5, 5))));
    }
}
