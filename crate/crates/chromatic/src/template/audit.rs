//! Offline replay of a committed-SCX history against a shadow of the structure.
//!
//! Starting from a quiescent structure, each record is applied in commit order.
//! Before applying, the replay checks that the target is reachable, that the
//! slot held `old`, that the fresh records form a down-tree rooted at `new`
//! whose fringe is currently reachable, and that the records cut off by the
//! swing are exactly the finalized set `R`. The work per record is bounded by
//! the size of the replaced subtree.

use crate::mwcas::{ScxRecord, Slot};
use std::collections::{HashMap, HashSet};
use std::fmt;

/// Child links of a rooted structure, keyed by record id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Structure {
    pub root: u64,
    pub children: HashMap<u64, [Option<u64>; 2]>,
}

impl Structure {
    pub fn new(root: u64) -> Self {
        Structure {
            root,
            children: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: u64, left: Option<u64>, right: Option<u64>) {
        self.children.insert(id, [left, right]);
    }

    /// Ids reachable from the root, or the first id reached twice.
    pub fn reachable(&self) -> Result<HashSet<u64>, u64> {
        let mut seen = HashSet::new();
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                return Err(n);
            }
            if let Some(c) = self.children.get(&n) {
                stack.extend(c.iter().flatten());
            }
        }
        Ok(seen)
    }

    /// The reachable part only.
    pub fn pruned(&self) -> Structure {
        let mut out = Structure::new(self.root);
        let mut stack = vec![self.root];
        let mut seen = HashSet::new();
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            let c = self.children.get(&n).copied().unwrap_or([None, None]);
            out.children.insert(n, c);
            stack.extend(c.iter().flatten());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayError {
    /// Sequence number of the offending record; 0 for the initial structure.
    pub seq: u64,
    pub reason: String,
}

impl fmt::Display for ReplayError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scx {}: {}", self.seq, self.reason)
    }
}

impl std::error::Error for ReplayError {}

#[derive(Clone, Debug, Default)]
pub struct ReplayReport {
    pub applied: u64,
    /// Records whose validator verdict listed violations, with those numbers.
    pub pc_violations: Vec<(u64, Vec<u8>)>,
    /// Records carrying no validator verdict.
    pub unvalidated: u64,
    /// The shadow after the last record, reachable part only.
    pub shadow: Structure,
}

/// Replays `records` over `initial`. Stops at the first inconsistency.
pub fn audit_committed_scx<'a>(
    initial: &Structure,
    records: impl IntoIterator<Item = &'a ScxRecord>,
) -> Result<ReplayReport, ReplayError> {
    let fail = |seq, reason: String| ReplayError { seq, reason };
    let mut shadow = initial.pruned();
    let mut reachable = initial
        .reachable()
        .map_err(|n| fail(0, format!("initial structure is not a down-tree at {n}")))?;
    let mut ever: HashSet<u64> = shadow.children.keys().copied().collect();
    let mut report = ReplayReport::default();
    let mut last_seq = 0;

    for rec in records {
        let seq = rec.seq;
        if seq <= last_seq && report.applied > 0 {
            return Err(fail(seq, format!("sequence not increasing after {last_seq}")));
        }
        last_seq = seq;
        match &rec.pc {
            None => report.unvalidated += 1,
            Some(v) if !v.is_empty() => report.pc_violations.push((seq, v.clone())),
            Some(_) => {}
        }
        if !reachable.contains(&rec.target) {
            return Err(fail(seq, format!("target {} not reachable", rec.target)));
        }
        let current = shadow.children[&rec.target][rec.slot.index()];
        if current != rec.old {
            return Err(fail(seq, format!("slot held {current:?}, record says {:?}", rec.old)));
        }

        let fresh: HashMap<u64, [Option<u64>; 2]> = rec.fresh.iter().map(|&(id, l, r)| (id, [l, r])).collect();
        if fresh.len() != rec.fresh.len() {
            return Err(fail(seq, "duplicate fresh id".into()));
        }
        if let Some(id) = fresh.keys().find(|id| ever.contains(id)) {
            return Err(fail(seq, format!("record {id} reappears as fresh")));
        }
        if !fresh.contains_key(&rec.new) {
            return Err(fail(seq, format!("new {} is not among the fresh records", rec.new)));
        }
        // Fresh records form a down-tree rooted at new; fringe collected on the way.
        let mut fringe = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![rec.new];
        while let Some(n) = stack.pop() {
            if !visited.insert(n) {
                return Err(fail(seq, format!("fresh record {n} has two parents")));
            }
            for c in fresh[&n].iter().flatten() {
                if fresh.contains_key(c) {
                    stack.push(*c);
                } else {
                    fringe.push(*c);
                }
            }
        }
        if visited.len() != fresh.len() {
            return Err(fail(seq, "fresh records not all below new".into()));
        }
        let fringe_set: HashSet<u64> = fringe.iter().copied().collect();
        if fringe_set.len() != fringe.len() {
            return Err(fail(seq, "fringe record referenced twice".into()));
        }
        if let Some(f) = fringe.iter().find(|f| !reachable.contains(f)) {
            return Err(fail(seq, format!("fringe record {f} not reachable")));
        }

        // Records cut off: reachable from old without passing through the fringe.
        let mut removed = HashSet::new();
        if let Some(old) = rec.old {
            let mut stack = vec![old];
            while let Some(n) = stack.pop() {
                if fringe_set.contains(&n) || !removed.insert(n) {
                    continue;
                }
                stack.extend(shadow.children[&n].iter().flatten());
            }
        }
        let claimed: HashSet<u64> = rec.removed.iter().copied().collect();
        if removed != claimed {
            let mut extra: Vec<_> = claimed.difference(&removed).collect();
            let mut missing: Vec<_> = removed.difference(&claimed).collect();
            extra.sort();
            missing.sort();
            return Err(fail(
                seq,
                format!("finalized set differs from removed set: extra {extra:?}, missing {missing:?}"),
            ));
        }
        // Every fringe record must have had its single parent inside the cut
        // (or be old itself), otherwise it would gain a second parent.
        for f in &fringe {
            if Some(*f) == rec.old {
                continue;
            }
            let parent_in_cut = removed
                .iter()
                .any(|r| shadow.children[r].iter().flatten().any(|c| c == f));
            if !parent_in_cut {
                return Err(fail(seq, format!("fringe record {f} would gain a second parent")));
            }
        }

        for r in &removed {
            shadow.children.remove(r);
            reachable.remove(r);
        }
        for (id, c) in &fresh {
            shadow.children.insert(*id, *c);
            reachable.insert(*id);
            ever.insert(*id);
        }
        shadow.children.get_mut(&rec.target).unwrap()[rec.slot.index()] = Some(rec.new);
        report.applied += 1;
    }
    report.shadow = shadow.pruned();
    Ok(report)
}

/// Which slot of `parent` holds `child` in `s`.
pub fn slot_of(s: &Structure, parent: u64, child: u64) -> Option<Slot> {
    let c = s.children.get(&parent)?;
    Slot::BOTH.into_iter().find(|sl| c[sl.index()] == Some(child))
}
