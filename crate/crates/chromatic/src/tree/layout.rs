//! Building a tree from an explicit shape, and plain-read snapshots.

use super::{inf, leaf_data, violations_at, Key, Node, NodeData, Value};
use crate::mwcas::{Record, Slot};
use crossbeam_epoch::Guard;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::ptr;

/// Shape and weights of a chromatic subtree.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Layout<K> {
    Leaf {
        key: K,
        weight: u32,
    },
    Internal {
        key: K,
        weight: u32,
        left: Box<Layout<K>>,
        right: Box<Layout<K>>,
    },
}

impl<K: Copy> Layout<K> {
    pub fn leaf(key: K, weight: u32) -> Self {
        Layout::Leaf { key, weight }
    }

    pub fn internal(key: K, weight: u32, left: Layout<K>, right: Layout<K>) -> Self {
        Layout::Internal {
            key,
            weight,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn weight(&self) -> u32 {
        match self {
            Layout::Leaf { weight, .. } | Layout::Internal { weight, .. } => *weight,
        }
    }

    pub fn key(&self) -> K {
        match self {
            Layout::Leaf { key, .. } | Layout::Internal { key, .. } => *key,
        }
    }

    /// Same shape and keys with a different top weight.
    pub fn with_weight(&self, w: u32) -> Self {
        let mut out = self.clone();
        match &mut out {
            Layout::Leaf { weight, .. } | Layout::Internal { weight, .. } => *weight = w,
        }
        out
    }

    pub fn leaf_keys(&self) -> Vec<K> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            match n {
                Layout::Leaf { key, .. } => out.push(*key),
                Layout::Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// The subtree at `path`, if it exists.
    pub fn at(&self, path: &[Slot]) -> Option<&Layout<K>> {
        let mut n = self;
        for s in path {
            n = match (n, s) {
                (Layout::Internal { left, .. }, Slot::Left) => left,
                (Layout::Internal { right, .. }, Slot::Right) => right,
                (Layout::Leaf { .. }, _) => return None,
            };
        }
        Some(n)
    }
}

fn build_sub<K: Key, V: Value>(n: &Layout<K>, value_of: &dyn Fn(K) -> V, top: bool) -> *mut Node<K, V> {
    let w = |w: u32| if top { 1 } else { w };
    match n {
        Layout::Leaf { key, weight } => Record::alloc(leaf_data(*key, w(*weight), Some(value_of(*key))), [ptr::null_mut(); 2]),
        Layout::Internal {
            key,
            weight,
            left,
            right,
        } => {
            let l = build_sub(left, value_of, false);
            let r = build_sub(right, value_of, false);
            let d = NodeData {
                key: *key,
                weight: w(*weight),
                leaf: false,
                value: None,
            };
            Record::alloc(d, [l, r])
        }
    }
}

/// Entry record over the given chromatic subtree. The root gets weight 1.
pub(super) fn build<K: Key, V: Value>(root: Option<&Layout<K>>, value_of: &dyn Fn(K) -> V) -> *mut Node<K, V> {
    let inf_leaf = || Record::alloc(leaf_data(inf(), 1, None), [ptr::null_mut(); 2]);
    let sentinel_data = || NodeData {
        key: inf(),
        weight: 1,
        leaf: false,
        value: None,
    };
    let top = match root {
        None => inf_leaf(),
        Some(r) => Record::alloc(sentinel_data(), [build_sub(r, value_of, true), inf_leaf()]),
    };
    Record::alloc(sentinel_data(), [top, ptr::null_mut()])
}

fn kids<'g, K, V>(n: &'g Node<K, V>, g: &'g Guard) -> [Option<&'g Node<K, V>>; 2] {
    [n.read_field(Slot::Left, g), n.read_field(Slot::Right, g)]
}

pub(super) fn extract<K: Key, V: Value>(entry: &Node<K, V>, g: &Guard) -> Option<Layout<K>> {
    fn go<K: Key, V: Value>(n: &Node<K, V>, g: &Guard) -> Layout<K> {
        let d = n.payload();
        match kids(n, g) {
            [Some(l), Some(r)] if !d.leaf => Layout::internal(d.key, d.weight, go(l, g), go(r, g)),
            _ => Layout::leaf(d.key, d.weight),
        }
    }
    let top = entry.read_field(Slot::Left, g)?;
    if top.payload().leaf {
        return None;
    }
    Some(go(top.read_field(Slot::Left, g)?, g))
}

/// One record of a snapshot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnapNode<K, V> {
    pub id: u64,
    pub key: K,
    pub weight: u32,
    pub leaf: bool,
    pub left: Option<u64>,
    pub right: Option<u64>,
    pub value: Option<V>,
}

/// Every record reachable from the entry, in preorder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeSnapshot<K, V> {
    pub entry: u64,
    pub nodes: Vec<SnapNode<K, V>>,
}

pub(super) fn walk<K: Key, V: Value>(entry: &Node<K, V>, g: &Guard) -> TreeSnapshot<K, V> {
    let mut nodes = Vec::new();
    let mut stack = vec![entry];
    while let Some(n) = stack.pop() {
        let d = n.payload();
        let [l, r] = kids(n, g);
        nodes.push(SnapNode {
            id: n.id(),
            key: d.key,
            weight: d.weight,
            leaf: d.leaf,
            left: l.map(Record::id),
            right: r.map(Record::id),
            value: d.value.clone(),
        });
        stack.extend(r);
        stack.extend(l);
    }
    TreeSnapshot { entry: entry.id(), nodes }
}

impl<K: Key, V> TreeSnapshot<K, V> {
    /// Line-oriented text: a header `entry <id>`, then one line per record,
    /// `<id> <key|inf> <weight> <leaf|internal> <left|-> <right|-> [<value>]`.
    /// `value` renders leaf values and must not produce whitespace.
    pub fn to_text(&self, value: impl Fn(&V) -> String) -> String {
        let mut s = String::new();
        let id = |o: Option<u64>| o.map_or_else(|| "-".to_string(), |i| i.to_string());
        writeln!(s, "entry {}", self.entry).unwrap();
        for n in &self.nodes {
            let key = if n.key == inf() { "inf".to_string() } else { n.key.to_string() };
            let kind = if n.leaf { "leaf" } else { "internal" };
            write!(s, "{} {} {} {} {} {}", n.id, key, n.weight, kind, id(n.left), id(n.right)).unwrap();
            if let Some(v) = &n.value {
                write!(s, " {}", value(v)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Red-red pairs plus overweight excess over all records.
    pub fn violation_count(&self) -> usize {
        let index: HashMap<u64, &SnapNode<K, V>> = self.nodes.iter().map(|n| (n.id, n)).collect();
        let mut total = 0;
        for n in &self.nodes {
            for c in [n.left, n.right].into_iter().flatten() {
                total += violations_at(n.weight, index[&c].weight);
            }
        }
        total
    }
}
