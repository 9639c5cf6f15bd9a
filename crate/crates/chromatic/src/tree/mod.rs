//! A leaf-oriented chromatic search tree.
//!
//! Shape at all times: `entry` (key ∞, weight 1) has only a left child. When
//! the map is empty that child is a leaf with key ∞. Otherwise it is an
//! internal sentinel (key ∞, weight 1) whose left subtree is the chromatic
//! tree proper and whose right child is a leaf with key ∞. A record is a
//! sentinel iff its key is ∞, and the chromatic root always has weight 1.

mod layout;
mod ops;
mod rebalance;
pub mod steps;

pub use layout::{Layout, SnapNode, TreeSnapshot};
pub use steps::{apply_rebalance_step, RebalanceStepKind, Shape};

use crate::mwcas::{free_reachable, pin, Domain, Reclamation, Record, ScxLog, Slot};
use crate::template::{Fail, Update};
use crossbeam_epoch::Guard;
use num_traits::PrimInt;
use smallvec::SmallVec;
use std::fmt;
use std::hash::Hash;
use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

/// Keys: fixed-width integers; `max_value()` is reserved as ∞.
pub trait Key: PrimInt + Hash + fmt::Debug + fmt::Display + Send + Sync + 'static {}
impl<T: PrimInt + Hash + fmt::Debug + fmt::Display + Send + Sync + 'static> Key for T {}

pub trait Value: Clone + Send + Sync + 'static {}
impl<T: Clone + Send + Sync + 'static> Value for T {}

/// Immutable part of a tree node. `value` is `None` exactly on internal nodes
/// and ∞ leaves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeData<K, V> {
    pub key: K,
    pub weight: u32,
    pub leaf: bool,
    pub value: Option<V>,
}

pub type Node<K, V> = Record<NodeData<K, V>>;

/// Where a search for a key ended.
pub struct SearchResult<'g, K, V> {
    /// `None` iff the map is empty.
    pub gp: Option<&'g Node<K, V>>,
    pub p: &'g Node<K, V>,
    pub l: &'g Node<K, V>,
}

pub struct Config {
    /// Cleanup runs once more than `k` violations sit on the updated key's
    /// path; 0 cleans up after every violating update.
    pub k: usize,
    pub reclamation: Reclamation,
    /// Check every SCX bundle against the template postconditions.
    pub validate: bool,
    /// Descriptor-history dump of committed SCXs.
    pub log: Option<ScxLog>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            k: 0,
            reclamation: Reclamation::Epoch,
            validate: cfg!(debug_assertions),
            log: None,
        }
    }
}

#[derive(Default)]
struct Stats {
    steps: [AtomicU64; RebalanceStepKind::COUNT],
    rebalance_calls: AtomicU64,
    cleanups: AtomicU64,
    update_retries: AtomicU64,
}

/// Counter values at one instant.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StatsSnapshot {
    /// Committed rebalancing steps, indexed by [`RebalanceStepKind::index`].
    pub steps: [u64; RebalanceStepKind::COUNT],
    pub rebalance_calls: u64,
    pub cleanups: u64,
    pub update_retries: u64,
}

impl StatsSnapshot {
    pub fn total_steps(&self) -> u64 {
        self.steps.iter().sum()
    }

    pub fn steps_of(&self, kind: RebalanceStepKind) -> u64 {
        self.steps[kind.index()]
    }
}

pub struct ChromaticMap<K: Key, V: Value> {
    domain: Domain<NodeData<K, V>>,
    entry: *mut Node<K, V>,
    k: usize,
    validate: bool,
    stats: Stats,
}

unsafe impl<K: Key, V: Value> Send for ChromaticMap<K, V> {}
unsafe impl<K: Key, V: Value> Sync for ChromaticMap<K, V> {}

impl<K: Key, V: Value> Default for ChromaticMap<K, V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: Key, V: Value> Drop for ChromaticMap<K, V> {
    fn drop(&mut self) {
        unsafe { free_reachable(self.entry, self.domain.policy()) }
    }
}

fn inf<K: Key>() -> K {
    K::max_value()
}

fn leaf_data<K: Key, V>(key: K, weight: u32, value: Option<V>) -> NodeData<K, V> {
    NodeData {
        key,
        weight,
        leaf: true,
        value,
    }
}

/// Slot of `n` holding `child`, if any.
fn side_of<K, V>(snap: [Option<&Node<K, V>>; 2], child: &Node<K, V>) -> Option<Slot> {
    Slot::BOTH
        .into_iter()
        .find(|s| snap[s.index()].is_some_and(|c| std::ptr::eq(c, child)))
}

fn toward<K: Key, V>(key: K, n: &Node<K, V>) -> Slot {
    if key < n.payload().key {
        Slot::Left
    } else {
        Slot::Right
    }
}

fn read_child<'g, K, V>(n: &'g Node<K, V>, s: Slot, g: &'g Guard) -> &'g Node<K, V> {
    n.read_field(s, g).expect("internal node has two children")
}

impl<K: Key, V: Value> ChromaticMap<K, V> {
    pub fn new() -> Self {
        Self::with_config(Config::default())
    }

    pub fn with_k(k: usize) -> Self {
        Self::with_config(Config {
            k,
            ..Config::default()
        })
    }

    pub fn with_config(config: Config) -> Self {
        let leaf = Record::alloc(leaf_data(inf(), 1, None), [std::ptr::null_mut(); 2]);
        let entry = Record::alloc(
            NodeData {
                key: inf(),
                weight: 1,
                leaf: false,
                value: None,
            },
            [leaf, std::ptr::null_mut()],
        );
        Self::from_entry(entry, config)
    }

    fn from_entry(entry: *mut Node<K, V>, config: Config) -> Self {
        ChromaticMap {
            domain: Domain::new(config.reclamation, config.log),
            entry,
            k: config.k,
            validate: config.validate,
            stats: Stats::default(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn log(&self) -> Option<&ScxLog> {
        self.domain.log()
    }

    pub fn entry<'g>(&'g self, _guard: &'g Guard) -> &'g Node<K, V> {
        unsafe { &*self.entry }
    }

    pub(crate) fn update<'g>(&'g self, guard: &'g Guard) -> Update<'g, NodeData<K, V>> {
        Update::new(&self.domain, guard, self.validate)
    }

    pub fn stats(&self) -> StatsSnapshot {
        let mut s = StatsSnapshot {
            rebalance_calls: self.stats.rebalance_calls.load(Relaxed),
            cleanups: self.stats.cleanups.load(Relaxed),
            update_retries: self.stats.update_retries.load(Relaxed),
            ..StatsSnapshot::default()
        };
        for (d, c) in s.steps.iter_mut().zip(&self.stats.steps) {
            *d = c.load(Relaxed);
        }
        s
    }

    /// Standard BST descent using plain reads.
    pub fn search<'g>(&'g self, key: K, guard: &'g Guard) -> SearchResult<'g, K, V> {
        debug_assert!(key < inf(), "∞ is reserved");
        let mut gp = None;
        let mut p = self.entry(guard);
        let mut l = read_child(p, Slot::Left, guard);
        while !l.payload().leaf {
            gp = Some(p);
            p = l;
            l = read_child(l, toward(key, l), guard);
        }
        SearchResult { gp, p, l }
    }

    pub fn get(&self, key: K) -> Option<V> {
        assert!(key < inf(), "∞ is reserved");
        let guard = pin();
        let l = self.search(key, &guard).l.payload();
        if l.key == key {
            l.value.clone()
        } else {
            None
        }
    }

    pub fn contains_key(&self, key: K) -> bool {
        self.get(key).is_some()
    }

    /// Associates `value` with `key`, returning the previous value.
    pub fn insert(&self, key: K, value: V) -> Option<V> {
        assert!(key < inf(), "∞ is reserved");
        loop {
            let guard = pin();
            let s = self.search(key, &guard);
            match self.try_insert(&guard, s.p, s.l, key, value.clone()) {
                Ok((created, old)) => {
                    drop(guard);
                    if created {
                        self.after_violation(key);
                    }
                    return old;
                }
                Err(Fail) => {
                    self.stats.update_retries.fetch_add(1, Relaxed);
                }
            }
        }
    }

    /// Removes `key`, returning its value.
    pub fn delete(&self, key: K) -> Option<V> {
        assert!(key < inf(), "∞ is reserved");
        loop {
            let guard = pin();
            let s = self.search(key, &guard);
            if s.l.payload().key != key {
                return None;
            }
            let gp = s.gp?;
            match self.try_delete(&guard, gp, s.p, s.l) {
                Ok((value, created)) => {
                    drop(guard);
                    if created {
                        self.after_violation(key);
                    }
                    return value;
                }
                Err(Fail) => {
                    self.stats.update_retries.fetch_add(1, Relaxed);
                }
            }
        }
    }

    fn after_violation(&self, key: K) {
        if self.k == 0 || self.violations_on_path(key) > self.k {
            self.cleanup(key);
        }
    }

    /// Violations on the search path for `key`, counting `w - 1` for an
    /// overweight node. Plain reads; exact only when quiescent.
    pub fn violations_on_path(&self, key: K) -> usize {
        let guard = pin();
        let mut p = self.entry(&guard);
        let mut total = 0;
        while !p.payload().leaf {
            let l = read_child(p, toward(key, p), &guard);
            total += violations_at(p.payload().weight, l.payload().weight);
            p = l;
        }
        total
    }

    /// Repeatedly fixes the first violation on `key`'s search path until the
    /// path is clean.
    pub fn cleanup(&self, key: K) {
        self.stats.cleanups.fetch_add(1, Relaxed);
        loop {
            let guard = pin();
            let mut ggp;
            let mut gp = None;
            let mut p = None;
            let mut l = self.entry(&guard);
            loop {
                if l.payload().leaf {
                    return;
                }
                ggp = gp;
                gp = p;
                p = Some(l);
                l = read_child(l, toward(key, l), &guard);
                let (pw, lw) = (p.unwrap().payload().weight, l.payload().weight);
                if lw > 1 || (pw == 0 && lw == 0) {
                    match (ggp, gp) {
                        (Some(ggp), Some(gp)) => {
                            self.try_rebalance(&guard, ggp, gp, p.unwrap(), l);
                        }
                        // The top of the tree carries weight 1 throughout.
                        _ => debug_assert!(false, "violation next to the entry record"),
                    }
                    break;
                }
            }
        }
    }

    /// Least entry with key greater than `key`.
    pub fn successor(&self, key: K) -> Option<(K, V)> {
        if key == inf() {
            return None;
        }
        self.neighbor(key, Slot::Right)
    }

    /// Greatest entry with key less than `key`.
    pub fn predecessor(&self, key: K) -> Option<(K, V)> {
        assert!(key < inf(), "∞ is reserved");
        self.neighbor(key, Slot::Left)
    }

    fn neighbor(&self, key: K, dir: Slot) -> Option<(K, V)> {
        loop {
            let guard = pin();
            if let Ok(r) = self.try_neighbor(key, dir, &guard) {
                return r;
            }
        }
    }

    /// LLX descent toward `key`; if the leaf reached is not past `key` in
    /// direction `dir`, walks to the adjacent leaf from the last turn away from
    /// `dir` and validates the nodes between with a VLX.
    fn try_neighbor<'g>(&'g self, key: K, dir: Slot, guard: &'g Guard) -> Result<Option<(K, V)>, Fail> {
        let mut up = Update::new(&self.domain, guard, false);
        let mut path: SmallVec<[&'g Node<K, V>; 64]> = SmallVec::new();
        let mut turn = None;
        let mut n = self.entry(guard);
        while !n.payload().leaf {
            let snap = up.llx(n)?;
            let s = toward(key, n);
            if s != dir {
                turn = Some(path.len());
            }
            path.push(n);
            n = snap[s.index()].ok_or(Fail)?;
        }
        let past = match dir {
            Slot::Right => n.payload().key > key,
            Slot::Left => n.payload().key < key,
        };
        if past {
            return Ok(entry_of(n));
        }
        let Some(t) = turn else {
            return Ok(None);
        };
        let snap = up.sigma().snapshot_of(path[t]).ok_or(Fail)?;
        let mut m = snap[dir.index()].ok_or(Fail)?;
        let mut v: SmallVec<[&'g Node<K, V>; 64]> = path[t..].iter().copied().collect();
        while !m.payload().leaf {
            let s = up.llx(m)?;
            v.push(m);
            m = s[dir.flip().index()].ok_or(Fail)?;
        }
        if up.vlx(&v) {
            Ok(entry_of(m))
        } else {
            Err(Fail)
        }
    }

    /// Plain-read walk of the whole structure. Meaningful when quiescent.
    pub fn snapshot(&self) -> TreeSnapshot<K, V> {
        let guard = pin();
        layout::walk(self.entry(&guard), &guard)
    }

    /// Entries in key order, by a plain-read walk.
    pub fn to_vec(&self) -> Vec<(K, V)> {
        let guard = pin();
        let mut out = Vec::new();
        let mut stack = vec![self.entry(&guard)];
        while let Some(n) = stack.pop() {
            let d = n.payload();
            if d.leaf {
                out.extend(entry_of(n));
                continue;
            }
            for s in [Slot::Right, Slot::Left] {
                if let Some(c) = n.read_field(s, &guard) {
                    stack.push(c);
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.to_vec().len()
    }

    pub fn is_empty(&self) -> bool {
        let guard = pin();
        read_child(self.entry(&guard), Slot::Left, &guard).payload().leaf
    }

    /// Total violations in the structure, by a plain-read walk.
    pub fn violation_count(&self) -> usize {
        self.snapshot().violation_count()
    }

    /// Builds a map whose chromatic subtree is `root`, bypassing the update
    /// operations. Sentinel shape and root weight are imposed here.
    pub fn from_layout(root: Option<&Layout<K>>, value_of: impl Fn(K) -> V, config: Config) -> Self {
        Self::from_entry(layout::build(root, &value_of), config)
    }

    /// The chromatic subtree's shape and weights, by a plain-read walk.
    pub fn to_layout(&self) -> Option<Layout<K>> {
        let guard = pin();
        layout::extract(self.entry(&guard), &guard)
    }

    /// Applies one rebalancing step at the node reached by `path` from the
    /// chromatic root; the step replaces that node's subtree. Used to exercise
    /// steps on chosen configurations. Returns `Err` when the configuration
    /// does not have the shape the step needs.
    pub fn apply_step_at(&self, kind: RebalanceStepKind, path: &[Slot]) -> Result<(), Fail> {
        let guard = pin();
        let entry = self.entry(&guard);
        let sentinel = read_child(entry, Slot::Left, &guard);
        if sentinel.payload().leaf {
            return Err(Fail);
        }
        let mut u = sentinel;
        let mut slot = Slot::Left;
        for &s in path {
            u = u.read_field(slot, &guard).ok_or(Fail)?;
            slot = s;
        }
        let mut up = self.update(&guard);
        steps::llx_for_step(&mut up, kind, u, slot)?;
        if apply_rebalance_step(&mut up, kind, u, slot)? {
            self.stats.steps[kind.index()].fetch_add(1, Relaxed);
            Ok(())
        } else {
            Err(Fail)
        }
    }
}

pub(crate) fn violations_at(parent_w: u32, w: u32) -> usize {
    if w > 1 {
        (w - 1) as usize
    } else if w == 0 && parent_w == 0 {
        1
    } else {
        0
    }
}

fn entry_of<K: Key, V: Value>(n: &Node<K, V>) -> Option<(K, V)> {
    let d = n.payload();
    if d.key == inf() {
        None
    } else {
        Some((d.key, d.value.clone().expect("finite leaves carry a value")))
    }
}

impl<K: Key, V: Value + fmt::Debug> fmt::Debug for ChromaticMap<K, V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.to_vec()).finish()
    }
}
