//! The tree update template: LLX a sequence of records chosen on the fly, then
//! perform one SCX built from their snapshots.
//!
//! [`Update`] records the sequence σ of linked LLXs and, when validation is on,
//! checks every SCX bundle against the postconditions PC1 to PC9 before it is
//! attempted. [`execute_template`] drives a [`TemplateSpec`] through the
//! generic loop; the rebalancing code uses [`Update`] directly with the loop
//! unrolled.

use crate::mwcas::{Domain, Fresh, Llx, Record, Session, Slot};
use crossbeam_epoch::Guard;
use smallvec::SmallVec;
use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

pub mod audit;

pub use audit::{audit_committed_scx, ReplayError, ReplayReport, Structure};

/// Signals that the attempt must be retried from scratch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fail;

/// Snapshot of a record's two child links.
pub type Snap<'g, T> = [Option<&'g Record<T>>; 2];

/// The sequence of records LLXed so far with their snapshots, in LLX order.
pub struct Sigma<'g, T> {
    entries: SmallVec<[(&'g Record<T>, Snap<'g, T>); 8]>,
}

impl<'g, T> Sigma<'g, T> {
    fn new() -> Self {
        Sigma {
            entries: SmallVec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn node(&self, i: usize) -> &'g Record<T> {
        self.entries[i].0
    }

    pub fn snapshot(&self, i: usize) -> Snap<'g, T> {
        self.entries[i].1
    }

    /// Latest snapshot taken of `r`.
    pub fn snapshot_of(&self, r: &Record<T>) -> Option<Snap<'g, T>> {
        self.entries
            .iter()
            .rev()
            .find(|(n, _)| std::ptr::eq(*n, r))
            .map(|(_, s)| *s)
    }

    pub fn last(&self) -> Option<(&'g Record<T>, Snap<'g, T>)> {
        self.entries.last().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'g Record<T>, Snap<'g, T>)> + '_ {
        self.entries.iter().copied()
    }

    /// σ reduced to ids, as consumed by [`validate_scx_arguments`].
    pub fn view(&self) -> Vec<(u64, [Option<u64>; 2])> {
        self.entries
            .iter()
            .map(|(n, s)| (n.id(), [s[0].map(Record::id), s[1].map(Record::id)]))
            .collect()
    }
}

/// Arguments for the SCX that ends a template execution. The root of `fresh`
/// is the value `new`.
pub struct ScxArgumentBundle<'g, T: Send + Sync + 'static> {
    pub v: SmallVec<[&'g Record<T>; 8]>,
    pub r: SmallVec<[&'g Record<T>; 8]>,
    pub fld: (&'g Record<T>, Slot),
    pub fresh: Fresh<T>,
}

impl<'g, T: Send + Sync + 'static> ScxArgumentBundle<'g, T> {
    pub fn new(v: &[&'g Record<T>], r: &[&'g Record<T>], fld: (&'g Record<T>, Slot), fresh: Fresh<T>) -> Self {
        ScxArgumentBundle {
            v: v.iter().copied().collect(),
            r: r.iter().copied().collect(),
            fld,
            fresh,
        }
    }

    /// The bundle reduced to ids.
    pub fn view(&self) -> BundleView {
        let fresh = (0..self.fresh.len())
            .map(|i| {
                let n = self.fresh.get(i);
                let c = |s| n.child_ptr(s);
                let id = |p: *mut Record<T>| unsafe { p.as_ref() }.map(Record::id);
                (n.id(), [id(c(Slot::Left)), id(c(Slot::Right))])
            })
            .collect();
        BundleView {
            v: self.v.iter().map(|r| r.id()).collect(),
            r: self.r.iter().map(|r| r.id()).collect(),
            target: self.fld.0.id(),
            slot: self.fld.1,
            new: self.fresh.root().map(Record::id).unwrap_or(0),
            fresh,
        }
    }
}

/// Id-level description of an SCX bundle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundleView {
    pub v: Vec<u64>,
    pub r: Vec<u64>,
    pub target: u64,
    pub slot: Slot,
    pub new: u64,
    /// The records claimed to be freshly allocated, with their children.
    pub fresh: Vec<(u64, [Option<u64>; 2])>,
}

/// A postcondition of the template.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pc {
    /// V is a subsequence of σ.
    Pc1,
    /// R is a subsequence of V.
    Pc2,
    /// The record containing fld is in V.
    Pc3,
    /// `new` roots a non-empty down-tree over N.
    Pc4,
    /// old = Nil implies R is empty.
    Pc5,
    /// R empty implies F_N = {old}.
    Pc6,
    /// Every record of N is freshly allocated.
    Pc7,
    /// V is in breadth-first order of the snapshot graph.
    Pc8,
    /// G_R is a down-tree rooted at old and F_N = F_R.
    Pc9,
}

impl Pc {
    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Pc> {
        use Pc::*;
        [Pc1, Pc2, Pc3, Pc4, Pc5, Pc6, Pc7, Pc8, Pc9].get(n.checked_sub(1)? as usize).copied()
    }

    pub fn mask(list: &[Pc]) -> u16 {
        list.iter().fold(0, |m, p| m | 1 << p.number())
    }
}

impl fmt::Display for Pc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PC{}", self.number())
    }
}

fn is_subsequence(sub: &[u64], seq: &[u64]) -> bool {
    let mut it = seq.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// Checks a bundle against PC1 to PC9 using only σ's snapshots.
pub fn validate_scx_arguments(b: &BundleView, sigma: &[(u64, [Option<u64>; 2])]) -> Vec<Pc> {
    let mut out = Vec::new();
    let order: Vec<u64> = sigma.iter().map(|e| e.0).collect();
    let mut snap: HashMap<u64, [Option<u64>; 2]> = HashMap::new();
    for (id, s) in sigma {
        snap.insert(*id, *s);
    }
    let mut known: HashSet<u64> = order.iter().copied().collect();
    known.extend(snap.values().flat_map(|s| s.iter().flatten().copied()));

    if !is_subsequence(&b.v, &order) {
        out.push(Pc::Pc1);
    }
    if !is_subsequence(&b.r, &b.v) {
        out.push(Pc::Pc2);
    }
    if !b.v.contains(&b.target) {
        out.push(Pc::Pc3);
    }
    let old = snap.get(&b.target).and_then(|s| s[b.slot.index()]);

    let fresh: HashMap<u64, [Option<u64>; 2]> = b.fresh.iter().copied().collect();
    let mut pc4 = !fresh.contains_key(&b.new);
    let mut seen = HashSet::new();
    if !pc4 {
        let mut stack = vec![b.new];
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                pc4 = true;
                break;
            }
            for c in fresh[&n].iter().flatten() {
                if fresh.contains_key(c) {
                    stack.push(*c);
                }
            }
        }
        pc4 |= seen.len() != fresh.len();
    }
    if pc4 {
        out.push(Pc::Pc4);
    }
    let f_n: HashSet<u64> = fresh
        .values()
        .flat_map(|s| s.iter().flatten().copied())
        .filter(|c| !fresh.contains_key(c))
        .collect();
    if old.is_none() && !b.r.is_empty() {
        out.push(Pc::Pc5);
    }
    if b.r.is_empty() && f_n != old.into_iter().collect() {
        out.push(Pc::Pc6);
    }
    if fresh.keys().any(|id| known.contains(id)) {
        out.push(Pc::Pc7);
    }

    if let Some(&root) = order.first() {
        let mut pos = HashMap::new();
        let mut q = VecDeque::from([root]);
        while let Some(n) = q.pop_front() {
            if pos.contains_key(&n) {
                continue;
            }
            pos.insert(n, pos.len());
            if let Some(s) = snap.get(&n) {
                q.extend(s.iter().flatten().copied());
            }
        }
        let ranks: Option<Vec<usize>> = b.v.iter().map(|id| pos.get(id).copied()).collect();
        if !ranks.is_some_and(|r| r.windows(2).all(|w| w[0] < w[1])) {
            out.push(Pc::Pc8);
        }
    } else if !b.v.is_empty() {
        out.push(Pc::Pc8);
    }

    if !b.r.is_empty() {
        let rset: HashSet<u64> = b.r.iter().copied().collect();
        let mut ok = old.is_some_and(|o| rset.contains(&o)) && b.r.iter().all(|r| snap.contains_key(r));
        let mut f_r = HashSet::new();
        if ok {
            let mut visited = HashSet::new();
            let mut stack = vec![old.unwrap()];
            while let Some(n) = stack.pop() {
                if !visited.insert(n) {
                    ok = false;
                    break;
                }
                for c in snap[&n].iter().flatten() {
                    if rset.contains(c) {
                        stack.push(*c);
                    } else {
                        f_r.insert(*c);
                    }
                }
            }
            ok &= visited.len() == rset.len();
        }
        if !ok || f_r != f_n {
            out.push(Pc::Pc9);
        }
    }
    out
}

/// One template execution: a session plus the recorded σ.
pub struct Update<'g, T: Send + Sync + 'static> {
    session: Session<'g, T>,
    sigma: Sigma<'g, T>,
    validate: bool,
    violations: Vec<Pc>,
}

impl<'g, T: Send + Sync + 'static> Update<'g, T> {
    pub fn new(domain: &'g Domain<T>, guard: &'g Guard, validate: bool) -> Self {
        Update {
            session: Session::new(domain, guard),
            sigma: Sigma::new(),
            validate,
            violations: Vec::new(),
        }
    }

    pub fn guard(&self) -> &'g Guard {
        self.session.guard()
    }

    pub fn sigma(&self) -> &Sigma<'g, T> {
        &self.sigma
    }

    /// LLX `r` and append it to σ; Fail or Finalized abort the attempt.
    pub fn llx(&mut self, r: &'g Record<T>) -> Result<Snap<'g, T>, Fail> {
        match self.session.llx(r) {
            Llx::Snapshot(s) => {
                self.sigma.entries.push((r, s));
                Ok(s)
            }
            Llx::Fail | Llx::Finalized => Err(Fail),
        }
    }

    /// Postconditions violated by the most recent committed bundle, when
    /// validation is on.
    pub fn last_violations(&self) -> &[Pc] {
        &self.violations
    }

    /// Performs the SCX. Returns whether it committed.
    pub fn commit(&mut self, bundle: ScxArgumentBundle<'g, T>) -> bool {
        let pc = if self.validate {
            self.violations = validate_scx_arguments(&bundle.view(), &self.sigma.view());
            Some(Pc::mask(&self.violations))
        } else {
            None
        };
        let ScxArgumentBundle { v, r, fld, fresh } = bundle;
        let ok = self.session.scx_annotated(&v, &r, fld, fresh, pc);
        // Snapshots of a failed attempt may be mutually inconsistent; only a
        // committed bundle must be clean.
        debug_assert!(
            !ok || self.violations.is_empty(),
            "template postconditions violated: {:?}",
            self.violations
        );
        ok
    }

    /// Validates that every record in `v` is unchanged since its LLX.
    pub fn vlx(&mut self, v: &[&'g Record<T>]) -> bool {
        self.session.vlx(v)
    }
}

/// Callbacks defining one kind of tree update. Each must be a deterministic
/// function of σ and the spec's own arguments.
pub trait TemplateSpec<'g, T: Send + Sync + 'static> {
    type Output;

    /// True once enough records have been LLXed to build the SCX.
    fn condition(&self, sigma: &Sigma<'g, T>) -> bool;

    /// A non-null child from a snapshot in σ to LLX next, or `None` when a link
    /// the update relies on is stale.
    fn next_node(&self, sigma: &Sigma<'g, T>) -> Option<&'g Record<T>>;

    fn scx_arguments(&self, sigma: &Sigma<'g, T>) -> ScxArgumentBundle<'g, T>;

    fn result(&self, sigma: &Sigma<'g, T>) -> Self::Output;
}

/// Runs the template from `start`. Never retries.
pub fn execute_template<'g, T, S>(up: &mut Update<'g, T>, spec: &S, start: &'g Record<T>) -> Result<S::Output, Fail>
where
    T: Send + Sync + 'static,
    S: TemplateSpec<'g, T>,
{
    up.llx(start)?;
    loop {
        let done = spec.condition(&up.sigma);
        debug_assert_eq!(done, spec.condition(&up.sigma), "condition must be deterministic");
        if done {
            break;
        }
        let next = spec.next_node(&up.sigma);
        if cfg!(debug_assertions) {
            let again = spec.next_node(&up.sigma);
            debug_assert!(
                next.map(Record::id) == again.map(Record::id),
                "next_node must be deterministic"
            );
            if let Some(n) = next {
                debug_assert!(
                    up.sigma.iter().any(|(_, s)| s.iter().flatten().any(|c| std::ptr::eq(*c, n))),
                    "next_node must return a child from a snapshot in sigma"
                );
            }
        }
        up.llx(next.ok_or(Fail)?)?;
    }
    let bundle = spec.scx_arguments(&up.sigma);
    if cfg!(debug_assertions) {
        let again = spec.scx_arguments(&up.sigma);
        let (a, b) = (bundle.view(), again.view());
        debug_assert!(
            a.v == b.v && a.r == b.r && a.target == b.target && a.slot == b.slot && a.fresh.len() == b.fresh.len(),
            "scx_arguments must be deterministic"
        );
    }
    if up.commit(bundle) {
        Ok(spec.result(&up.sigma))
    } else {
        Err(Fail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(v: &[u64], r: &[u64], target: u64, slot: Slot, fresh: &[(u64, [Option<u64>; 2])]) -> BundleView {
        BundleView {
            v: v.to_vec(),
            r: r.to_vec(),
            target,
            slot,
            new: fresh.last().map_or(0, |f| f.0),
            fresh: fresh.to_vec(),
        }
    }

    // gp(1) -> p(2) -> {l(3), s(4)}, s internal with children 5, 6.
    fn delete_sigma() -> Vec<(u64, [Option<u64>; 2])> {
        vec![
            (1, [Some(2), Some(9)]),
            (2, [Some(3), Some(4)]),
            (3, [None, None]),
            (4, [Some(5), Some(6)]),
        ]
    }

    #[test]
    fn delete_bundle_is_clean() {
        let b = view(&[1, 2, 3, 4], &[2, 3, 4], 1, Slot::Left, &[(100, [Some(5), Some(6)])]);
        assert!(validate_scx_arguments(&b, &delete_sigma()).is_empty());
    }

    #[test]
    fn reused_record_as_new_violates_pc7() {
        let b = view(&[1, 2, 3, 4], &[2, 3, 4], 1, Slot::Left, &[(6, [Some(5), None])]);
        assert!(validate_scx_arguments(&b, &delete_sigma()).contains(&Pc::Pc7));
    }

    #[test]
    fn out_of_order_v_violates_pc1_and_pc8() {
        let b = view(&[1, 2, 4, 3], &[2, 4, 3], 1, Slot::Left, &[(100, [Some(5), Some(6)])]);
        let v = validate_scx_arguments(&b, &delete_sigma());
        assert!(v.contains(&Pc::Pc1) && v.contains(&Pc::Pc8), "{v:?}");
    }

    #[test]
    fn dropped_subtree_violates_pc9() {
        // Replacement forgets s's right child.
        let b = view(&[1, 2, 3, 4], &[2, 3, 4], 1, Slot::Left, &[(100, [Some(5), None])]);
        assert_eq!(validate_scx_arguments(&b, &delete_sigma()), vec![Pc::Pc9]);
    }

    #[test]
    fn empty_r_requires_old_as_only_fringe() {
        let sigma = vec![(1, [Some(2), Some(3)])];
        let ok = view(&[1], &[], 1, Slot::Left, &[(7, [None, None]), (8, [Some(2), Some(7)])]);
        assert!(validate_scx_arguments(&ok, &sigma).is_empty());
        let bad = view(&[1], &[], 1, Slot::Left, &[(8, [Some(3), None])]);
        assert_eq!(validate_scx_arguments(&bad, &sigma), vec![Pc::Pc6]);
    }

    #[test]
    fn rb2_bundle_is_clean() {
        // u=1, ux=2, uxl=3, uxr=4, uxll=5, uxlr=6, uxlrl=7, uxlrr=8
        let sigma = vec![
            (1, [Some(2), Some(99)]),
            (2, [Some(3), Some(4)]),
            (3, [Some(5), Some(6)]),
            (6, [Some(7), Some(8)]),
        ];
        let b = view(
            &[1, 2, 3, 6],
            &[2, 3, 6],
            1,
            Slot::Left,
            &[(101, [Some(5), Some(7)]), (102, [Some(8), Some(4)]), (103, [Some(101), Some(102)])],
        );
        assert!(validate_scx_arguments(&b, &sigma).is_empty());
    }

    #[test]
    fn fresh_graph_must_be_a_tree() {
        let sigma = vec![(1, [Some(2), Some(3)]), (2, [None, None])];
        let shared = view(&[1, 2], &[2], 1, Slot::Left, &[(7, [None, None]), (8, [Some(7), Some(7)])]);
        assert!(validate_scx_arguments(&shared, &sigma).contains(&Pc::Pc4));
    }

    #[test]
    fn pc_numbers_round_trip() {
        for n in 1..=9 {
            assert_eq!(Pc::from_number(n).unwrap().number(), n);
        }
        assert_eq!(Pc::from_number(0), None);
        assert_eq!(Pc::mask(&[Pc::Pc1, Pc::Pc9]), (1 << 1) | (1 << 9));
    }
}
